//! Inverse rendering (image to intrinsic maps), forward rendering (maps to
//! image) and the round trip between them.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Task, RENDER_SELECTOR};
use crate::codec::{self, LatentTensor, LATENT_CHANNELS};
use crate::error::{Error, Result};
use crate::flow::{self, denormalize, fr_condition, normalize};
use crate::model::{Conditioning, Model};
use crate::rng;
use crate::scenegen::{IntrinsicMap, WeatherClass};
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 25;
pub const DEFAULT_P_DROP: f64 = 0.3;

/// Keep flags for the five maps: each is dropped independently with
/// probability `p_drop`. With `guard`, an all-dropped draw restores one
/// uniformly chosen map.
pub fn dropout_mask(p_drop: f64, guard: bool, rng: &mut ChaCha8Rng) -> [bool; 5] {
    let mut keep = [true; 5];
    for k in keep.iter_mut() {
        *k = rng.random::<f64>() >= p_drop;
    }
    if guard && keep.iter().all(|&k| !k) {
        keep[rng.random_range(0..keep.len())] = true;
    }
    keep
}

/// Zeroes dropped maps (see [`dropout_mask`]).
pub fn dropout_maps(maps: &[Tensor], p_drop: f64, guard: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Tensor>> {
    if maps.len() != IntrinsicMap::ALL.len() {
        return Err(Error::Shape(format!("expected 5 maps, got {}", maps.len())));
    }
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::Range(format!("p_drop {p_drop} outside [0, 1]")));
    }
    let keep = dropout_mask(p_drop, guard, rng);
    Ok(maps
        .iter()
        .zip(keep)
        .map(|(m, k)| if k { m.clone() } else { Tensor::zeros(m.shape()) })
        .collect())
}

/// Request to decompose one image.
#[derive(Clone, Debug, PartialEq)]
pub struct IrRequest {
    pub image: Tensor,
    pub weather: WeatherClass,
    pub targets: Vec<IntrinsicMap>,
    pub steps: usize,
    pub seed: u64,
}

/// Request to render one image from (possibly partial) intrinsic maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FrRequest {
    /// Pixel-space maps in native channel layout; absent maps are zero-filled.
    pub maps: BTreeMap<IntrinsicMap, Tensor>,
    pub weather: WeatherClass,
    pub steps: usize,
    pub seed: u64,
}

fn expect_task(model: &Model, task: Task) -> Result<()> {
    if model.config.task != task {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint is a {} model, request needs {}",
            model.config.task.name(),
            task.name()
        )));
    }
    Ok(())
}

fn check_image(model: &Model, image: &Tensor) -> Result<()> {
    let n = model.config.image_size;
    if image.shape() != [n, n, 3] {
        return Err(Error::Shape(format!(
            "image {:?} does not match the model's {n}x{n}x3",
            image.shape()
        )));
    }
    Ok(())
}

fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data: Vec<f32> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

fn split(batch: &Tensor) -> Result<Vec<Tensor>> {
    let s = batch.shape();
    let per = batch.len() / s[0].max(1);
    batch
        .data()
        .chunks(per)
        .map(|c| Tensor::new(s[1..].to_vec(), c.to_vec()))
        .collect()
}

/// Clamps a decoded map into its valid range: `[0, 1]` for albedo,
/// roughness and metallic, non-negative irradiance, unit normals (a zero
/// vector becomes `(0, 0, 1)`).
pub fn finalize_map(map: IntrinsicMap, t: &Tensor) -> Tensor {
    match map {
        IntrinsicMap::Albedo | IntrinsicMap::Roughness | IntrinsicMap::Metallic => t.map(|v| v.clamp(0.0, 1.0)),
        IntrinsicMap::Irradiance => t.map(|v| v.max(0.0)),
        IntrinsicMap::Normal => {
            let mut out = t.clone();
            for px in out.data_mut().chunks_mut(3) {
                let n = (px[0] * px[0] + px[1] * px[1] + px[2] * px[2]).sqrt();
                if n > 1e-12 && n.is_finite() {
                    px.iter_mut().for_each(|v| *v /= n);
                } else {
                    px.copy_from_slice(&[0.0, 0.0, 1.0]);
                }
            }
            out
        }
    }
}

/// Initial noise for one (request seed, item) pair, independent of what
/// else shares the batch.
fn start_noise(seed: u64, tag: u64, latent: usize) -> Tensor {
    let mut r = rng::stream(seed, tag);
    flow::standard_normal(&[latent, latent, LATENT_CHANNELS], &mut r)
}

fn sampler_steps(steps: usize) -> Result<usize> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    Ok(steps)
}

/// Decomposes several `(image, weather)` pairs into the same targets in one
/// batched sampling run. Results are indexed `[image][target]`.
pub fn decompose_many(
    model: &Model,
    images: &[(&Tensor, WeatherClass)],
    targets: &[IntrinsicMap],
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<Tensor>>> {
    expect_task(model, Task::Ir)?;
    let steps = sampler_steps(steps)?;
    if targets.is_empty() {
        return Err(Error::Config("at least one target map is required".into()));
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &model.config;
    let l = cfg.backbone.latent_size;
    let mut cond = Vec::new();
    let mut pix = Vec::new();
    let mut weather = Vec::new();
    let mut selector = Vec::new();
    let mut maps = Vec::new();
    let mut z1 = Vec::new();
    for (img, w) in images {
        check_image(model, img)?;
        let lat = normalize(cfg, codec::encode(img)?.tensor());
        for &t in targets {
            cond.push(lat.clone());
            pix.push((*img).clone());
            weather.push(*w);
            selector.push(t.index());
            maps.push(t);
            z1.push(start_noise(seed, t.index() as u64, l));
        }
    }
    let c = Conditioning {
        latents: stack(&cond)?,
        weather,
        selector,
        image: cfg.maa.is_some().then(|| stack(&pix)).transpose()?,
        maps: cfg.maa.is_some().then_some(maps),
    };
    let z = flow::euler(stack(&z1)?, steps, |z, t| model.velocity(z, t, &c))?;
    let outs = split(&denormalize(cfg, &z))?;
    let mut it = outs.into_iter();
    images
        .iter()
        .map(|_| {
            targets
                .iter()
                .map(|&t| {
                    let lat = LatentTensor::new(it.next().expect("one latent per item"))?;
                    Ok(finalize_map(t, &codec::decode_map(&lat, t)?))
                })
                .collect()
        })
        .collect()
}

/// Decomposes one image into the requested maps.
pub fn decompose(req: &IrRequest, model: &Model) -> Result<BTreeMap<IntrinsicMap, Tensor>> {
    let out = decompose_many(model, &[(&req.image, req.weather)], &req.targets, req.steps, req.seed)?;
    Ok(req.targets.iter().copied().zip(out.into_iter().next().unwrap_or_default()).collect())
}

/// Renders several requests in one batched sampling run.
pub fn render_many(model: &Model, reqs: &[FrRequest]) -> Result<Vec<Tensor>> {
    expect_task(model, Task::Fr)?;
    if reqs.is_empty() {
        return Ok(Vec::new());
    }
    let steps = sampler_steps(reqs[0].steps)?;
    if reqs.iter().any(|r| r.steps != steps) {
        return Err(Error::Config("batched requests must share a step count".into()));
    }
    let cfg = &model.config;
    let n = cfg.image_size;
    let mut conds = Vec::new();
    let mut weather = Vec::new();
    let mut z1 = Vec::new();
    for r in reqs {
        if r.maps.is_empty() {
            return Err(Error::Config("at least one intrinsic map is required".into()));
        }
        let mut lats: Vec<Option<Tensor>> = vec![None; IntrinsicMap::ALL.len()];
        for (&m, t) in &r.maps {
            if t.shape() != [n, n, m.channels()] {
                return Err(Error::Shape(format!(
                    "{m} map {:?} does not match the model's {n}x{n}x{}",
                    t.shape(),
                    m.channels()
                )));
            }
            lats[m.index()] = Some(normalize(cfg, codec::encode_map(t, m)?.tensor()));
        }
        conds.push(fr_condition(&lats.iter().map(Option::as_ref).collect::<Vec<_>>())?);
        weather.push(r.weather);
        z1.push(start_noise(r.seed, RENDER_SELECTOR as u64, cfg.backbone.latent_size));
    }
    let c = Conditioning {
        latents: stack(&conds)?,
        weather,
        selector: vec![RENDER_SELECTOR; reqs.len()],
        image: None,
        maps: None,
    };
    let z = flow::euler(stack(&z1)?, steps, |z, t| model.velocity(z, t, &c))?;
    split(&denormalize(cfg, &z))?
        .into_iter()
        .map(|lat| Ok(codec::decode(&LatentTensor::new(lat)?)?.map(|v| v.max(0.0))))
        .collect()
}

pub fn render(req: &FrRequest, model: &Model) -> Result<Tensor> {
    Ok(render_many(model, std::slice::from_ref(req))?.remove(0))
}

/// Result of a decompose-then-render round trip.
#[derive(Clone, Debug)]
pub struct CycleOutput {
    pub maps: BTreeMap<IntrinsicMap, Tensor>,
    pub image: Tensor,
}

/// Decomposes all five maps of `image` and renders them under `weather_out`.
pub fn cycle(
    image: &Tensor,
    weather_in: WeatherClass,
    weather_out: WeatherClass,
    ir: &Model,
    fr: &Model,
    steps: usize,
    seed: u64,
) -> Result<CycleOutput> {
    let req = IrRequest {
        image: image.clone(),
        weather: weather_in,
        targets: IntrinsicMap::ALL.to_vec(),
        steps,
        seed,
    };
    let maps = decompose(&req, ir)?;
    let image = render(
        &FrRequest {
            maps: maps.clone(),
            weather: weather_out,
            steps,
            seed,
        },
        fr,
    )?;
    Ok(CycleOutput { maps, image })
}
