//! Rectified flow: straight-path noising, the velocity objective, the Euler
//! sampler and the training loop.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::backbone::{self, patchify, Inputs, ModelConfig, Task, RENDER_SELECTOR};
use crate::codec::{self, LATENT_CHANNELS};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::maa;
use crate::model::{concat_channels, Checkpoint, Conditioning, Model};
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::pipelines::dropout_mask;
use crate::rng;
use crate::scenegen::{IntrinsicMap, WeatherClass};
use crate::tensor::{Scalar, Tensor};

fn same_shape<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `z_t = (1 - t) z0 + t eps`.
pub fn noise<F: Scalar>(z0: &Tensor<F>, t: f64, eps: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape(z0, eps, "noise")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("timestep {t} outside [0, 1]")));
    }
    let (a, b) = (F::from_f64(1.0 - t), F::from_f64(t));
    let data = z0.data().iter().zip(eps.data()).map(|(&z, &e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Per-sample version of [`noise`]: sample `i` of the leading axis uses `t[i]`.
pub fn noise_batch<F: Scalar>(z0: &Tensor<F>, t: &[f64], eps: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape(z0, eps, "noise")?;
    let b = z0.shape().first().copied().unwrap_or(0);
    if b != t.len() || b == 0 {
        return Err(Error::Shape(format!("{} timesteps for batch {b}", t.len())));
    }
    let per = z0.len() / b;
    let mut out = Vec::with_capacity(z0.len());
    for (i, &ti) in t.iter().enumerate() {
        if !(0.0..=1.0).contains(&ti) {
            return Err(Error::Range(format!("timestep {ti} outside [0, 1]")));
        }
        let (a, c) = (F::from_f64(1.0 - ti), F::from_f64(ti));
        let r = i * per..(i + 1) * per;
        out.extend(z0.data()[r.clone()].iter().zip(&eps.data()[r]).map(|(&z, &e)| a * z + c * e));
    }
    Tensor::new(z0.shape().to_vec(), out)
}

/// `v = eps - z0`.
pub fn velocity_target<F: Scalar>(z0: &Tensor<F>, eps: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape(z0, eps, "velocity_target")?;
    let data = z0.data().iter().zip(eps.data()).map(|(&z, &e)| e - z).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// One training batch in normalized latent space.
#[derive(Clone, Debug)]
pub struct FlowBatch<F: Scalar = f32> {
    /// Clean target latents `[B, L, L, 16]`.
    pub z0: Tensor<F>,
    /// Conditioning latents `[B, L, L, in_channels - 16]`.
    pub cond: Tensor<F>,
    pub weather: Vec<WeatherClass>,
    pub selector: Vec<usize>,
    pub image: Option<Tensor<F>>,
    pub maps: Option<Vec<IntrinsicMap>>,
    /// Per-patch semantic labels for the auxiliary loss.
    pub labels: Option<Vec<usize>>,
}

impl<F: Scalar> FlowBatch<F> {
    pub fn len(&self) -> usize {
        self.weather.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weather.is_empty()
    }

    pub fn cast<G: Scalar>(&self) -> FlowBatch<G> {
        FlowBatch {
            z0: self.z0.cast(),
            cond: self.cond.cast(),
            weather: self.weather.clone(),
            selector: self.selector.clone(),
            image: self.image.as_ref().map(Tensor::cast),
            maps: self.maps.clone(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms<F> {
    /// `fm + aux_weight * aux`.
    pub total: f64,
    /// Mean squared velocity error over all latent elements.
    pub fm: f64,
    /// Semantic cross-entropy of the patch encoder (0 without one).
    pub aux: f64,
    pub grads: BTreeMap<String, Vec<F>>,
}

/// Flow-matching loss at fixed `t` and `eps`, with exact gradients for every
/// parameter.
pub fn fm_loss_at<F: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    batch: &FlowBatch<F>,
    t: &[f64],
    eps: &Tensor<F>,
    aux_weight: f64,
) -> Result<LossTerms<F>> {
    let z_t = noise_batch(&batch.z0, t, eps)?;
    let target = velocity_target(&batch.z0, eps)?;
    let target = patchify(&target, cfg.backbone.token_patch)?;
    let z_in = concat_channels(&z_t, &batch.cond)?;
    let mut g = Graph::<F>::new();
    let p = params.bind(&mut g, true);
    let out = backbone::forward(
        &mut g,
        &p,
        cfg,
        &Inputs {
            z_in: &z_in,
            t,
            weather: &batch.weather,
            selector: &batch.selector,
            image: batch.image.as_ref(),
            map: batch.maps.as_deref(),
        },
    )?;
    let fm = g.mse(out.velocity, target.data())?;
    let fm_v = g.value(fm).data()[0].to_f64();
    let (loss, aux_v) = match (&out.maa, &batch.labels) {
        (Some(m), Some(labels)) if aux_weight != 0.0 => {
            let ce = g.cross_entropy(m.logits, labels)?;
            let aux_v = g.value(ce).data()[0].to_f64();
            let ce = g.scale(ce, F::from_f64(aux_weight));
            (g.add(fm, ce)?, aux_v)
        }
        _ => (fm, 0.0),
    };
    let total = g.value(loss).data()[0].to_f64();
    let grads = g.backward(loss)?;
    Ok(LossTerms {
        total,
        fm: fm_v,
        aux: aux_v,
        grads: p.collect_grads(&g, &grads),
    })
}

/// Flow-matching loss with `t ~ U(0, 1)` and `eps ~ N(0, I)` drawn from `rng`.
pub fn fm_loss(
    cfg: &ModelConfig,
    params: &ParamStore,
    batch: &FlowBatch,
    aux_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossTerms<f32>> {
    let t: Vec<f64> = (0..batch.len()).map(|_| rng.random::<f64>()).collect();
    let eps = standard_normal(batch.z0.shape(), rng);
    fm_loss_at(cfg, params, batch, &t, &eps, aux_weight)
}

/// Euler integration of `dz/dt = v(z, t)` from `t = 1` to `t = 0` in
/// `steps` equal steps, starting at `z1`.
pub fn euler(z1: Tensor, steps: usize, mut velocity: impl FnMut(&Tensor, f64) -> Result<Tensor>) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z1;
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let v = velocity(&z, t)?;
        same_shape(&z, &v, "velocity")?;
        let d = dt as f32;
        for (zi, &vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi -= d * vi;
        }
    }
    Ok(z)
}

/// Draws `z1 ~ N(0, I)` and integrates the model's velocity field to `t = 0`.
pub fn sample(model: &Model, cond: &Conditioning, steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let l = model.config.backbone.latent_size;
    let z1 = standard_normal(&[cond.batch(), l, l, LATENT_CHANNELS], rng);
    euler(z1, steps, |z, t| model.velocity(z, t, cond))
}

/// Moves a codec latent into the flow's normalized space.
pub fn normalize(cfg: &ModelConfig, latent: &Tensor) -> Tensor {
    let (s, k) = (cfg.latent_shift, cfg.latent_scale);
    latent.map(|v| (v - s) * k)
}

pub fn denormalize(cfg: &ModelConfig, latent: &Tensor) -> Tensor {
    let (s, k) = (cfg.latent_shift, cfg.latent_scale);
    latent.map(|v| v / k + s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f32,
    /// Linear warm-up length; the rate then follows a cosine down to
    /// `lr * min_lr_ratio` at `steps`.
    pub warmup: u64,
    pub min_lr_ratio: f32,
    pub seed: u64,
    /// Weight of the patch encoder's semantic cross-entropy.
    pub aux_weight: f32,
    /// Map dropout probability for forward rendering.
    pub p_drop: f32,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub clip_norm: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 16,
            lr: 1e-3,
            warmup: 0,
            min_lr_ratio: 1.0,
            seed: 0,
            aux_weight: 0.1,
            p_drop: 0.3,
            checkpoint_every: 0,
            clip_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_drop) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::Config("p_drop and min_lr_ratio must lie in [0, 1]".into()));
        }
        if !(self.aux_weight >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::Config("aux_weight and clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f32 {
        if self.warmup > 0 && step < self.warmup {
            return self.lr * (step + 1) as f32 / self.warmup as f32;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let x = ((step - self.warmup.min(step)) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
        let r = self.min_lr_ratio as f64;
        (self.lr as f64 * (r + (1.0 - r) * cos)) as f32
    }
}

/// Precomputed normalized latents for one scene.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub image_latent: Tensor,
    pub map_latents: Vec<Tensor>,
    pub image: Tensor,
    pub labels: Vec<usize>,
    pub weather: WeatherClass,
}

#[derive(Clone, Debug)]
pub struct TrainSet {
    pub items: Vec<TrainItem>,
}

impl TrainSet {
    pub fn new(samples: &[Sample], cfg: &ModelConfig) -> Result<Self> {
        let items = samples
            .iter()
            .map(|s| {
                let st = &s.stack;
                if st.image.shape()[0] != cfg.image_size || st.image.shape()[1] != cfg.image_size {
                    return Err(Error::Shape(format!(
                        "scene {} is {:?}, model expects {}px",
                        s.meta.scene_id,
                        st.image.shape(),
                        cfg.image_size
                    )));
                }
                let image_latent = normalize(cfg, codec::encode(&st.image)?.tensor());
                let map_latents = IntrinsicMap::ALL
                    .iter()
                    .map(|&m| Ok(normalize(cfg, codec::encode_map(st.map(m), m)?.tensor())))
                    .collect::<Result<Vec<_>>>()?;
                let labels = match &cfg.maa {
                    Some(m) => maa::patch_labels(&st.gbuffer.semantics, m.classes)?,
                    None => Vec::new(),
                };
                Ok(TrainItem {
                    image_latent,
                    map_latents,
                    image: st.image.clone(),
                    labels,
                    weather: s.weather(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if items.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let mut data = Vec::with_capacity(parts.len() * parts[0].len());
    for p in parts {
        if p.shape() != parts[0].shape() {
            return Err(Error::Shape("stack: parts differ".into()));
        }
        data.extend_from_slice(p.data());
    }
    Tensor::new(shape, data)
}

const EPOCH_TAG: u64 = 0xe90c_0000_0000;
const STEP_TAG: u64 = 0x57e9_0000_0000;

/// Scene indices of training step `step`: consecutive slices of per-epoch
/// seeded permutations.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let start = step as usize * batch;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for i in start..start + batch {
        let epoch = i / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut r = rng::stream(seed, EPOCH_TAG + epoch as u64);
            for k in (1..n).rev() {
                perm.swap(k, r.random_range(0..=k));
            }
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("set above").1[i % n]);
    }
    out
}

/// Assembles the batch for `step`. All randomness (target maps, dropout)
/// comes from `rng`.
pub fn make_batch(cfg: &ModelConfig, tc: &TrainConfig, data: &TrainSet, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<FlowBatch> {
    let items: Vec<&TrainItem> = idx.iter().map(|&i| &data.items[i]).collect();
    let weather = items.iter().map(|it| it.weather).collect();
    match cfg.task {
        Task::Ir => {
            let maps: Vec<IntrinsicMap> = items
                .iter()
                .map(|_| IntrinsicMap::ALL[rng.random_range(0..IntrinsicMap::ALL.len())])
                .collect();
            let z0 = stack(&items.iter().zip(&maps).map(|(it, m)| &it.map_latents[m.index()]).collect::<Vec<_>>())?;
            let cond = stack(&items.iter().map(|it| &it.image_latent).collect::<Vec<_>>())?;
            let (image, labels) = if cfg.maa.is_some() {
                let img = stack(&items.iter().map(|it| &it.image).collect::<Vec<_>>())?;
                (Some(img), Some(items.iter().flat_map(|it| it.labels.iter().copied()).collect()))
            } else {
                (None, None)
            };
            Ok(FlowBatch {
                z0,
                cond,
                weather,
                selector: maps.iter().map(|m| m.index()).collect(),
                image,
                maps: cfg.maa.is_some().then_some(maps),
                labels,
            })
        }
        Task::Fr => {
            let z0 = stack(&items.iter().map(|it| &it.image_latent).collect::<Vec<_>>())?;
            let mut conds = Vec::with_capacity(items.len());
            for it in &items {
                let keep = dropout_mask(tc.p_drop as f64, true, rng);
                conds.push(fr_condition(&it.map_latents.iter().zip(keep).map(|(t, k)| k.then_some(t)).collect::<Vec<_>>())?);
            }
            let cond = stack(&conds.iter().collect::<Vec<_>>())?;
            Ok(FlowBatch {
                z0,
                cond,
                weather,
                selector: vec![RENDER_SELECTOR; items.len()],
                image: None,
                maps: None,
                labels: None,
            })
        }
    }
}

/// Channel-concatenation of the five normalized map latents; absent maps
/// are zero.
pub fn fr_condition(maps: &[Option<&Tensor>]) -> Result<Tensor> {
    let shape = maps
        .iter()
        .flatten()
        .next()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::Config("at least one map is required".into()))?;
    if maps.len() != IntrinsicMap::ALL.len() || shape.len() != 3 {
        return Err(Error::Shape("forward rendering takes five [L, L, 16] map latents".into()));
    }
    let zero = Tensor::zeros(&shape);
    let parts: Vec<&Tensor> = maps.iter().map(|m| m.unwrap_or(&zero)).collect();
    let c = shape[2];
    let rows = shape[0] * shape[1];
    let mut data = Vec::with_capacity(rows * c * parts.len());
    for r in 0..rows {
        for p in &parts {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape("map latents differ in shape".into()));
            }
            data.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
    }
    Tensor::new(vec![shape[0], shape[1], c * parts.len()], data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub fm: f64,
    pub aux: f64,
    pub wallclock_s: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "model.wck";

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:07}.wck")
}

/// Trains from scratch (or from `resume`) until `tc.steps` optimizer steps
/// have been taken. With `out`, appends `step,loss,wallclock_s` rows to
/// `loss.csv` and writes periodic and final checkpoints.
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &TrainSet,
    out: Option<&Path>,
    resume: Option<Checkpoint>,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let adam_cfg = AdamConfig {
        lr: tc.lr,
        clip_norm: tc.clip_norm,
        ..AdamConfig::default()
    };
    let (mut model, mut opt, start) = match resume {
        Some(ck) => {
            if &ck.model.config != cfg {
                return Err(Error::CheckpointMismatch("resume checkpoint has a different architecture".into()));
            }
            if ck.seed != tc.seed {
                return Err(Error::Config(format!(
                    "resume checkpoint was trained with seed {}, config has {}",
                    ck.seed, tc.seed
                )));
            }
            let opt = ck
                .optimizer
                .ok_or_else(|| Error::CheckpointMismatch("resume checkpoint has no optimizer state".into()))?;
            (ck.model, opt, ck.step)
        }
        None => {
            let model = Model::init(cfg.clone(), tc.seed)?;
            let opt = Adam::new(adam_cfg, &model.params);
            (model, opt, 0)
        }
    };
    let mut csv = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path: PathBuf = dir.join(LOSS_CSV);
            let fresh = start == 0 || !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "step,loss,wallclock_s").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };
    let clock = Instant::now();
    let mut log = Vec::new();
    for step in start..tc.steps {
        let mut r = rng::stream(tc.seed, STEP_TAG + step);
        let idx = batch_indices(tc.seed, step, tc.batch, data.len());
        let batch = make_batch(cfg, tc, data, &idx, &mut r)?;
        let terms = fm_loss(cfg, &model.params, &batch, tc.aux_weight as f64, &mut r)?;
        if !terms.total.is_finite() {
            return Err(Error::Config(format!("loss diverged at step {step}")));
        }
        opt.update(&mut model.params, &terms.grads, tc.lr_at(step))?;
        let rec = LossRecord {
            step,
            loss: terms.total,
            fm: terms.fm,
            aux: terms.aux,
            wallclock_s: clock.elapsed().as_secs_f64(),
        };
        if let Some((f, path)) = csv.as_mut() {
            writeln!(f, "{},{},{:.3}", rec.step, rec.loss, rec.wallclock_s).map_err(|e| Error::io(path.as_path(), e))?;
        }
        on_step(&rec);
        log.push(rec);
        let done = step + 1;
        if let Some(dir) = out {
            if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 && done < tc.steps {
                let ck = Checkpoint {
                    model: model.clone(),
                    step: done,
                    seed: tc.seed,
                    optimizer: Some(opt.clone()),
                };
                ck.save(&dir.join(checkpoint_name(done)))?;
            }
        }
    }
    let checkpoint = Checkpoint {
        model,
        step: tc.steps.max(start),
        seed: tc.seed,
        optimizer: Some(opt),
    };
    if let Some(dir) = out {
        checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let z0 = Tensor::new(vec![2], vec![2.0f32, 0.0]).unwrap();
        let eps = Tensor::new(vec![2], vec![0.0f32, 2.0]).unwrap();
        assert_eq!(noise(&z0, 0.0, &eps).unwrap(), z0);
        assert_eq!(noise(&z0, 1.0, &eps).unwrap(), eps);
        assert_eq!(noise(&z0, 0.5, &eps).unwrap().data(), &[1.0, 1.0]);
        assert!(noise(&z0, 1.5, &eps).is_err());
        let short = Tensor::new(vec![1], vec![0.0f32]).unwrap();
        assert!(matches!(noise(&z0, 0.5, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn velocity_identities() {
        let z0 = Tensor::new(vec![2], vec![1.0f32, 0.0]).unwrap();
        let eps = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        let v = velocity_target(&z0, &eps).unwrap();
        assert_eq!(v.data(), &[-1.0, 1.0]);
        assert!(velocity_target(&z0, &z0).unwrap().data().iter().all(|&x| x == 0.0));
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let zt = noise(&z0, t, &eps).unwrap();
            let back: Vec<f32> = zt.data().iter().zip(v.data()).map(|(&a, &b)| a - t as f32 * b).collect();
            assert_eq!(back, z0.data());
        }
    }

    #[test]
    fn euler_recovers_with_constant_field() {
        let z0 = Tensor::new(vec![3], vec![0.25f32, -0.5, 1.0]).unwrap();
        let eps = Tensor::new(vec![3], vec![1.0f32, 0.5, -0.75]).unwrap();
        let v = velocity_target(&z0, &eps).unwrap();
        for n in [1, 2, 4, 8] {
            let z = euler(eps.clone(), n, |_, _| Ok(v.clone())).unwrap();
            assert_eq!(z, z0, "{n} steps");
        }
        let z50 = euler(eps.clone(), 50, |_, _| Ok(v.clone())).unwrap();
        for (a, b) in z50.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(euler(eps, 0, |_, _| Ok(v.clone())).is_err());
    }

    #[test]
    fn euler_visits_descending_times() {
        let mut seen = Vec::new();
        euler(Tensor::zeros(&[1]), 4, |z, t| {
            seen.push(t);
            Ok(z.clone())
        })
        .unwrap();
        assert_eq!(seen, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn indices_cover_each_epoch() {
        let n = 10;
        let mut all: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, 2, n)).collect();
        all.sort();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, 4, n), batch_indices(3, 7, 4, n));
    }

    #[test]
    fn schedule() {
        let tc = TrainConfig {
            steps: 100,
            warmup: 10,
            min_lr_ratio: 0.1,
            lr: 1.0,
            ..TrainConfig::default()
        };
        assert!((tc.lr_at(0) - 0.1).abs() < 1e-6);
        assert!((tc.lr_at(9) - 1.0).abs() < 1e-6);
        assert!((tc.lr_at(10) - 1.0).abs() < 1e-6);
        assert!((tc.lr_at(100) - 0.1).abs() < 1e-6);
        let flat = TrainConfig::default();
        assert_eq!(flat.lr_at(0), flat.lr);
        assert_eq!(flat.lr_at(19_999), flat.lr);
    }
}
