//! On-disk dataset of rendered scenes.
//!
//! ```text
//! <root>/manifest.json
//! <root>/scene_<id:06>/{image,albedo,normal,roughness,metallic,irradiance,depth,semantics}.wdt
//! <root>/scene_<id:06>/meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preview;
use crate::rng;
use crate::scenegen::{
    generate_scene, render_scene, Camera, Environment, GBuffer, IntrinsicMap, IntrinsicStack, SceneSpec,
    WeatherClass,
};
use crate::tensor::Tensor;
use crate::wdt;

pub const THREADS_ENV: &str = "WEATHERFLOW_THREADS";

const FILES: [&str; 8] = [
    "image",
    "albedo",
    "normal",
    "roughness",
    "metallic",
    "irradiance",
    "depth",
    "semantics",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: usize,
    pub seed: u64,
    pub weather_class_id: usize,
    pub weather_name: String,
    pub env: Environment,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: usize,
    pub dir: String,
    pub seed: u64,
    pub weather_class_id: usize,
    pub env: Environment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub scenes: Vec<ManifestEntry>,
}

/// One rendered scene with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub meta: SceneMeta,
    pub stack: IntrinsicStack,
}

impl Sample {
    pub fn weather(&self) -> WeatherClass {
        WeatherClass::new(self.meta.weather_class_id).expect("validated on load")
    }
}

/// Scene specs for a dataset of `count` scenes. Weather classes cycle
/// through all nine in order; environments and per-scene seeds are drawn
/// from `base_seed`.
pub fn plan(count: usize, base_seed: u64, image_size: usize) -> Vec<SceneSpec> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(base_seed, 0xda7a_0000 + i as u64);
            let seed = r.random::<u64>() >> 1;
            let env = Environment::ALL[r.random_range(0..Environment::ALL.len())];
            let class = WeatherClass::new(i % WeatherClass::COUNT).expect("in range");
            generate_scene(seed, env, class).with_image_size(image_size, image_size)
        })
        .collect()
}

/// Worker count from `WEATHERFLOW_THREADS`, defaulting to the number of cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a pool capped by [`thread_count`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Renders every spec. Output order follows `specs` regardless of workers.
pub fn render_all(specs: &[SceneSpec]) -> Result<Vec<Sample>> {
    with_pool(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                Ok(Sample {
                    meta: SceneMeta {
                        scene_id: i,
                        seed: spec.seed,
                        weather_class_id: spec.weather.class.id(),
                        weather_name: spec.weather.class.name().to_string(),
                        env: spec.env,
                        camera: spec.camera,
                    },
                    stack: render_scene(spec)?,
                })
            })
            .collect()
    })
}

/// `count` freshly rendered scenes.
pub fn generate(count: usize, base_seed: u64, image_size: usize) -> Result<Vec<Sample>> {
    render_all(&plan(count, base_seed, image_size))
}

pub fn scene_dir_name(id: usize) -> String {
    format!("scene_{id:06}")
}

fn tensors(stack: &IntrinsicStack) -> [&Tensor; 8] {
    let g = &stack.gbuffer;
    [
        &stack.image,
        &g.albedo,
        &g.normal,
        &g.roughness,
        &g.metallic,
        &stack.irradiance,
        &g.depth,
        &g.semantics,
    ]
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes scenes and `manifest.json` under `root`.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    with_pool(|| {
        samples.par_iter().try_for_each(|s| -> Result<()> {
            let dir = root.join(scene_dir_name(s.meta.scene_id));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (name, t) in FILES.iter().zip(tensors(&s.stack)) {
                wdt::write(&dir.join(format!("{name}.wdt")), t)?;
            }
            write_json(&dir.join("meta.json"), &s.meta)
        })
    })?;
    let manifest = Manifest {
        count: samples.len(),
        scenes: samples
            .iter()
            .map(|s| ManifestEntry {
                scene_id: s.meta.scene_id,
                dir: scene_dir_name(s.meta.scene_id),
                seed: s.meta.seed,
                weather_class_id: s.meta.weather_class_id,
                env: s.meta.env,
            })
            .collect(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Writes `image.png` and one PNG per intrinsic map into every scene
/// directory.
pub fn write_previews(samples: &[Sample], root: &Path) -> Result<()> {
    with_pool(|| {
        samples.par_iter().try_for_each(|s| -> Result<()> {
            let dir = root.join(scene_dir_name(s.meta.scene_id));
            preview::write_png(&dir.join("image.png"), &s.stack.image)?;
            for m in IntrinsicMap::ALL {
                preview::write_png(&dir.join(format!("{m}.png")), &preview::displayable(m, s.stack.map(m)))?;
            }
            Ok(())
        })
    })
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    read_json(&manifest_path(root))
}

pub fn read_scene(dir: &Path) -> Result<Sample> {
    let meta: SceneMeta = read_json(&dir.join("meta.json"))?;
    WeatherClass::new(meta.weather_class_id)?;
    let mut t = Vec::with_capacity(FILES.len());
    for name in FILES {
        t.push(wdt::read(&dir.join(format!("{name}.wdt")))?);
    }
    let [image, albedo, normal, roughness, metallic, irradiance, depth, semantics]: [Tensor; 8] =
        t.try_into().map_err(|_| Error::Shape("scene files".into()))?;
    let h = image.shape().first().copied().unwrap_or(0);
    for (name, x) in FILES[1..].iter().zip([&albedo, &normal, &roughness, &metallic, &irradiance, &depth, &semantics]) {
        if x.shape().len() != 3 || x.shape()[0] != h {
            return Err(Error::Shape(format!("{name} in {} has shape {:?}", dir.display(), x.shape())));
        }
    }
    Ok(Sample {
        meta,
        stack: IntrinsicStack {
            gbuffer: GBuffer {
                albedo,
                normal,
                roughness,
                metallic,
                depth,
                semantics,
            },
            irradiance,
            image,
        },
    })
}

/// Reads every scene listed in the manifest, in manifest order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sample>> {
    let manifest = read_manifest(root)?;
    with_pool(|| {
        manifest
            .scenes
            .par_iter()
            .map(|e| read_scene(&root.join(&e.dir)))
            .collect()
    })
}
