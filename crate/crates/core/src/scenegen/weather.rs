use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParticleKind, WeatherParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PARTICLE_STREAM: u64 = 0x5eed_9a27_1c1e_0001;

/// Beer-Lambert transmittance `exp(-sigma * depth)`.
pub fn fog_transmittance(fog_sigma: f32, depth: f32) -> f32 {
    (-fog_sigma * depth).exp()
}

fn composite(img: &mut [f32], w: usize, h: usize, row: i64, col: i64, alpha: f32, color: [f32; 3]) {
    if row < 0 || col < 0 || row >= h as i64 || col >= w as i64 {
        return;
    }
    let i = (row as usize * w + col as usize) * 3;
    for c in 0..3 {
        img[i + c] = (1.0 - alpha) * img[i + c] + alpha * color[c];
    }
}

fn luminance(c: [f32; 3]) -> f32 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

fn overlay_particles(img: &mut [f32], w: usize, h: usize, weather: &WeatherParams, seed: u64) {
    let p = weather.particle;
    if p.kind == ParticleKind::None || p.density <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PARTICLE_STREAM);
    let area = (w * h) as f32;
    // Particles are lit by the surrounding haze, so they dim at night.
    let lit = (0.25 + 1.5 * luminance(weather.airlight)).min(1.0);
    match p.kind {
        ParticleKind::Rain => {
            let count = (p.density * area / 40.0).round() as usize;
            let color = [0.75 * lit, 0.78 * lit, 0.82 * lit];
            for _ in 0..count {
                let r0 = rng.random_range(0.0..h as f32);
                let c0 = rng.random_range(0.0..w as f32);
                let len = p.streak_length * rng.random_range(0.7f32..1.3);
                let steps = len.ceil().max(1.0) as usize;
                for s in 0..steps {
                    let r = r0 + s as f32;
                    let c = c0 + 0.25 * s as f32;
                    composite(img, w, h, r.floor() as i64, c.floor() as i64, 0.3, color);
                }
            }
        }
        ParticleKind::Snow => {
            let count = (p.density * area / 30.0).round() as usize;
            let color = [0.92 * lit, 0.93 * lit, 0.96 * lit];
            for _ in 0..count {
                let r = rng.random_range(0..h) as i64;
                let c = rng.random_range(0..w) as i64;
                let big = rng.random_bool(0.3);
                composite(img, w, h, r, c, 0.8, color);
                if big {
                    composite(img, w, h, r + 1, c, 0.8, color);
                    composite(img, w, h, r, c + 1, 0.8, color);
                    composite(img, w, h, r + 1, c + 1, 0.8, color);
                }
            }
        }
        ParticleKind::Dust => {
            let count = (p.density * area / 20.0).round() as usize;
            for _ in 0..count {
                let r = rng.random_range(0..h) as i64;
                let c = rng.random_range(0..w) as i64;
                composite(img, w, h, r, c, 0.35, weather.airlight);
            }
        }
        ParticleKind::None => {}
    }
}

/// Applies depth fog `T * image + (1 - T) * airlight` with
/// `T = exp(-fog_sigma * depth)`, then composites seeded screen-space
/// particles over the result.
pub fn apply_weather(image: &Tensor, depth: &Tensor, weather: &WeatherParams, seed: u64) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 || depth.len() * 3 != image.len() {
        return Err(Error::Shape(format!(
            "apply_weather: image {shape:?} vs depth {:?}",
            depth.shape()
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = image.clone();
    if weather.fog_sigma > 0.0 {
        let data = out.data_mut();
        for (px, &d) in data.chunks_mut(3).zip(depth.data()) {
            let t = fog_transmittance(weather.fog_sigma, d);
            for c in 0..3 {
                px[c] = t * px[c] + (1.0 - t) * weather.airlight[c];
            }
        }
    }
    overlay_particles(out.data_mut(), w, h, weather, seed);
    Ok(out)
}
