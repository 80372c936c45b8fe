use super::geometry::{intersect_box, intersect_plane, intersect_sphere, rotate, unrotate, Vec3};
use super::{weather, CameraFrame, GBuffer, IntrinsicStack, Primitive, SceneSpec, SemanticClass, ShapeKind};
use crate::error::Result;
use crate::tensor::Tensor;

/// Depth assigned to pixels whose ray escapes to the sky.
pub const SKY_DEPTH: f32 = 1.0e4;

const T_MIN: f32 = 1e-4;
const SHADOW_OFFSET: f32 = 1e-3;
const SPECULAR_EPS: f32 = 1e-3;

/// Blinn lobe exponent; grows as roughness goes to zero.
pub fn specular_exponent(roughness: f32) -> f32 {
    2.0 / (roughness * roughness + SPECULAR_EPS)
}

/// Specular strength `lerp(0.04, 1, metallic)`.
pub fn specular_strength(metallic: f32) -> f32 {
    0.04 + (1.0 - 0.04) * metallic
}

/// Sky radiance seen along world direction `dir`: brighter toward the horizon.
pub(crate) fn sky_radiance(sky: [f32; 3], dir: Vec3) -> [f32; 3] {
    let k = 1.15 - 0.35 * dir.y.clamp(0.0, 1.0);
    [sky[0] * k, sky[1] * k, sky[2] * k]
}

fn hit_primitive(p: &Primitive, origin: Vec3, dir: Vec3) -> Option<(f32, Vec3)> {
    let o = unrotate(origin - p.pose.position, p.pose.yaw, p.pose.pitch);
    let d = unrotate(dir, p.pose.yaw, p.pose.pitch);
    let hit = match p.shape {
        ShapeKind::Plane => intersect_plane(o, d, p.size.x * 0.5, p.size.z * 0.5, T_MIN),
        ShapeKind::Sphere => intersect_sphere(o, d, p.size.x, T_MIN),
        ShapeKind::Box => intersect_box(o, d, p.size * 0.5, T_MIN),
    }?;
    Some((hit.0, rotate(hit.1, p.pose.yaw, p.pose.pitch)))
}

/// Nearest hit: `(primitive index, distance, world normal)`.
fn nearest_hit(prims: &[Primitive], origin: Vec3, dir: Vec3) -> Option<(usize, f32, Vec3)> {
    let mut best: Option<(usize, f32, Vec3)> = None;
    for (i, p) in prims.iter().enumerate() {
        if let Some((t, n)) = hit_primitive(p, origin, dir) {
            if best.is_none_or(|b| t < b.1) {
                best = Some((i, t, n));
            }
        }
    }
    best
}

fn occluded(prims: &[Primitive], origin: Vec3, dir: Vec3) -> bool {
    prims.iter().any(|p| hit_primitive(p, origin, dir).is_some())
}

/// Analytic ray cast of every pixel; the nearest primitive determines all
/// per-pixel intrinsics.
pub fn render_gbuffer(scene: &SceneSpec) -> Result<GBuffer> {
    let cam = &scene.camera;
    let frame = cam.frame()?;
    let (w, h) = (cam.width, cam.height);
    let mut albedo = Vec::with_capacity(w * h * 3);
    let mut normal = Vec::with_capacity(w * h * 3);
    let mut roughness = Vec::with_capacity(w * h);
    let mut metallic = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut semantics = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let dir = cam.ray_dir(&frame, row, col);
            match nearest_hit(&scene.primitives, cam.position, dir) {
                Some((i, t, n_world)) => {
                    let p = &scene.primitives[i];
                    let n_cam = frame
                        .world_to_camera(n_world)
                        .normalized()
                        .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
                    albedo.extend_from_slice(&p.material.albedo);
                    normal.extend_from_slice(&n_cam.to_array());
                    roughness.push(p.material.roughness);
                    metallic.push(p.material.metallic);
                    depth.push(t.min(SKY_DEPTH));
                    semantics.push(p.semantic_class.id() as f32);
                }
                None => {
                    let n_cam = frame
                        .world_to_camera(-dir)
                        .normalized()
                        .unwrap_or(Vec3::new(0.0, 0.0, 1.0));
                    albedo.extend_from_slice(&[1.0, 1.0, 1.0]);
                    normal.extend_from_slice(&n_cam.to_array());
                    roughness.push(1.0);
                    metallic.push(0.0);
                    depth.push(SKY_DEPTH);
                    semantics.push(SemanticClass::Sky.id() as f32);
                }
            }
        }
    }
    Ok(GBuffer {
        albedo: Tensor::new(vec![h, w, 3], albedo)?,
        normal: Tensor::new(vec![h, w, 3], normal)?,
        roughness: Tensor::new(vec![h, w, 1], roughness)?,
        metallic: Tensor::new(vec![h, w, 1], metallic)?,
        depth: Tensor::new(vec![h, w, 1], depth)?,
        semantics: Tensor::new(vec![h, w, 1], semantics)?,
    })
}

struct ShadeInputs<'a> {
    scene: &'a SceneSpec,
    frame: CameraFrame,
    sun_scaled: [f32; 3],
}

impl ShadeInputs<'_> {
    /// Returns `(image rgb, irradiance rgb)` for one pixel.
    fn pixel(&self, gb: &GBuffer, row: usize, col: usize) -> ([f32; 3], [f32; 3]) {
        let scene = self.scene;
        let w = gb.width();
        let idx = row * w + col;
        let a = &gb.albedo.data()[idx * 3..idx * 3 + 3];
        let dir = scene.camera.ray_dir(&self.frame, row, col);
        let depth = gb.depth.data()[idx];
        if depth >= SKY_DEPTH {
            let irr = sky_radiance(scene.sky, dir);
            return ([a[0] * irr[0], a[1] * irr[1], a[2] * irr[2]], irr);
        }
        let nc = &gb.normal.data()[idx * 3..idx * 3 + 3];
        let n = self.frame.camera_to_world(Vec3::new(nc[0], nc[1], nc[2]));
        let l = scene.sun.direction;
        let ndl = n.dot(l).max(0.0);
        let vis = if ndl > 0.0 {
            let p = scene.camera.position + dir * depth + n * SHADOW_OFFSET;
            if occluded(&scene.primitives, p, l) {
                0.0
            } else {
                1.0
            }
        } else {
            0.0
        };
        let direct = ndl * vis;
        let mut irr = [0.0f32; 3];
        for c in 0..3 {
            irr[c] = scene.ambient[c] + self.sun_scaled[c] * direct;
        }
        let spec_w = if direct > 0.0 {
            let v = -dir;
            let hv = (l + v).normalized().unwrap_or(n);
            let ndh = n.dot(hv).max(0.0);
            let r = gb.roughness.data()[idx];
            let m = gb.metallic.data()[idx];
            specular_strength(m) * ndh.powf(specular_exponent(r)) * direct
        } else {
            0.0
        };
        let mut img = [0.0f32; 3];
        for c in 0..3 {
            img[c] = a[c] * irr[c] + spec_w * self.sun_scaled[c];
        }
        (img, irr)
    }
}

/// Shades a G-buffer: Lambert irradiance with one hard shadow ray plus a
/// single specular lobe. Returns `(image, irradiance)`, both `[H, W, 3]`.
pub fn shade(gbuffer: &GBuffer, scene: &SceneSpec) -> Result<(Tensor, Tensor)> {
    let frame = scene.camera.frame()?;
    let keep = 1.0 - scene.weather.overcast_factor;
    let si = scene.sun.intensity;
    let inputs = ShadeInputs {
        scene,
        frame,
        sun_scaled: [si[0] * keep, si[1] * keep, si[2] * keep],
    };
    let (h, w) = (gbuffer.height(), gbuffer.width());
    let mut image = Vec::with_capacity(h * w * 3);
    let mut irradiance = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            let (img, irr) = inputs.pixel(gbuffer, row, col);
            image.extend_from_slice(&img);
            irradiance.extend_from_slice(&irr);
        }
    }
    Ok((
        Tensor::new(vec![h, w, 3], image)?,
        Tensor::new(vec![h, w, 3], irradiance)?,
    ))
}

/// Full pipeline: G-buffer, shading, then weather.
pub fn render_scene(scene: &SceneSpec) -> Result<IntrinsicStack> {
    let gbuffer = render_gbuffer(scene)?;
    let (shaded, irradiance) = shade(&gbuffer, scene)?;
    let image = weather::apply_weather(&shaded, &gbuffer.depth, &scene.weather, scene.seed)?;
    Ok(IntrinsicStack {
        gbuffer,
        irradiance,
        image,
    })
}
