//! Diffusion transformer velocity estimator with AdaLN conditioning.
//!
//! Tokens are `tp x tp` cells of the concatenated input latent. Every block
//! runs self-attention, cross-attention to the visual-condition tokens (when
//! present) and an MLP, each behind its own AdaLN modulation and residual.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::codec::LATENT_CHANNELS;
use crate::error::{Error, Result};
use crate::maa::{self, MaaConfig, MaaVars};
use crate::nn::{init_tensor, Bound, Init, ParamStore, INIT_STD};
use crate::scenegen::{IntrinsicMap, WeatherClass};
use crate::tensor::{Scalar, Tensor};

/// Selector rows: one per intrinsic map (decomposition) plus one render token.
pub const SELECTOR_COUNT: usize = 6;
pub const RENDER_SELECTOR: usize = 5;
/// `t` is multiplied by this before the sinusoidal encoding.
pub const TIME_SCALE: f64 = 100.0;
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Inverse rendering: image to intrinsic map.
    Ir,
    /// Forward rendering: intrinsic maps to image.
    Fr,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Ir => "ir",
            Task::Fr => "fr",
        }
    }

    /// Latent channels fed to the backbone: the noisy target plus the
    /// conditioning latents.
    pub fn in_channels(self) -> usize {
        match self {
            Task::Ir => 2 * LATENT_CHANNELS,
            Task::Fr => (1 + IntrinsicMap::ALL.len()) * LATENT_CHANNELS,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ir" => Ok(Task::Ir),
            "fr" => Ok(Task::Fr),
            other => Err(Error::Config(format!("unknown task '{other}'; expected ir or fr"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Side of the (square) latent grid.
    pub latent_size: usize,
    /// Side of the latent cell block merged into one token.
    pub token_patch: usize,
    pub in_channels: usize,
    pub mlp_ratio: usize,
    /// Adds `s(cond) * z_t` to the velocity, with a zero-init linear `s`
    /// per latent channel, so tokens narrower than their output can still
    /// pass the noisy latent through.
    #[serde(default)]
    pub noise_skip: bool,
    /// Hidden width of the per-cell head (0 disables it). The head maps
    /// every input latent cell, together with [`CELL_FEATURES`] features
    /// of its token, through a small MLP whose zero-init output is added to
    /// that cell's velocity.
    #[serde(default)]
    pub cell_head: usize,
}

impl BackboneConfig {
    pub fn tokens_per_side(&self) -> usize {
        self.latent_size / self.token_patch
    }

    pub fn patch_tokens(&self) -> usize {
        self.tokens_per_side().pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn token_in(&self) -> usize {
        self.token_patch * self.token_patch * self.in_channels
    }

    pub fn token_out(&self) -> usize {
        self.token_patch * self.token_patch * LATENT_CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.latent_size,
            self.token_patch,
            self.in_channels,
            self.mlp_ratio,
        ];
        if pos.contains(&0) {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::Config("d_model must be a multiple of 4".into()));
        }
        if self.latent_size % self.token_patch != 0 {
            return Err(Error::Config(format!(
                "latent size {} not divisible by token patch {}",
                self.latent_size, self.token_patch
            )));
        }
        Ok(())
    }
}

/// Full architecture description stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub image_size: usize,
    pub backbone: BackboneConfig,
    /// Map-aware attention; `None` disables the visual condition.
    pub maa: Option<MaaConfig>,
    /// Latents enter the flow as `(z - latent_shift) * latent_scale`.
    pub latent_shift: f32,
    pub latent_scale: f32,
}

impl ModelConfig {
    pub fn new(task: Task, image_size: usize, d_model: usize, n_layers: usize, n_heads: usize, token_patch: usize, maa: Option<MaaConfig>) -> Self {
        Self {
            task,
            image_size,
            backbone: BackboneConfig {
                d_model,
                n_layers,
                n_heads,
                latent_size: image_size / crate::codec::PATCH_SIZE,
                token_patch,
                in_channels: task.in_channels(),
                mlp_ratio: 4,
                noise_skip: true,
                cell_head: 64,
            },
            maa,
            latent_shift: 0.5,
            latent_scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.image_size == 0 || self.image_size % crate::codec::PATCH_SIZE != 0 {
            return Err(Error::Config(format!("image size {} must be even", self.image_size)));
        }
        if self.backbone.latent_size * crate::codec::PATCH_SIZE != self.image_size {
            return Err(Error::Config("latent size does not match image size".into()));
        }
        if self.backbone.in_channels != self.task.in_channels() {
            return Err(Error::Config(format!(
                "{} expects {} input channels, config has {}",
                self.task.name(),
                self.task.in_channels(),
                self.backbone.in_channels
            )));
        }
        if !(self.latent_scale.is_finite() && self.latent_scale > 0.0 && self.latent_shift.is_finite()) {
            return Err(Error::Config("latent normalization must be finite and positive".into()));
        }
        if let Some(m) = &self.maa {
            if self.task != Task::Ir {
                return Err(Error::Config("map-aware attention is only used for ir".into()));
            }
            m.validate(self.image_size)?;
        }
        Ok(())
    }
}

/// Every parameter of the architecture with its shape and initializer.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let b = &cfg.backbone;
    let d = b.d_model;
    let tn = Init::TruncNormal(INIT_STD);
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let lin = |out: &mut Vec<_>, name: &str, i: usize, o: usize, w: Init| {
        out.push((format!("{name}.w"), vec![i, o], w));
        out.push((format!("{name}.b"), vec![o], Init::Zeros));
    };
    lin(&mut out, "emb.weather", d, d, tn);
    lin(&mut out, "emb.time.0", d, d, tn);
    lin(&mut out, "emb.time.1", d, d, tn);
    out.push(("emb.sel".into(), vec![SELECTOR_COUNT, d], tn));
    lin(&mut out, "dit.in", b.token_in(), d, tn);
    let cross = cfg.maa.is_some();
    for l in 0..b.n_layers {
        let p = format!("dit.blocks.{l}");
        let mut subs = vec!["attn", "mlp"];
        if cross {
            subs.push("cross");
        }
        for s in subs {
            lin(&mut out, &format!("{p}.ada_{s}.scale"), d, d, Init::Zeros);
            lin(&mut out, &format!("{p}.ada_{s}.shift"), d, d, Init::Zeros);
        }
        for w in ["q", "k", "v", "o"] {
            lin(&mut out, &format!("{p}.attn.{w}"), d, d, tn);
            if cross {
                lin(&mut out, &format!("{p}.cross.{w}"), d, d, tn);
            }
        }
        lin(&mut out, &format!("{p}.mlp.0"), d, d * b.mlp_ratio, tn);
        lin(&mut out, &format!("{p}.mlp.1"), d * b.mlp_ratio, d, tn);
    }
    lin(&mut out, "dit.final.ada.scale", d, d, Init::Zeros);
    lin(&mut out, "dit.final.ada.shift", d, d, Init::Zeros);
    lin(&mut out, "dit.final.out", d, b.token_out(), Init::Zeros);
    if b.noise_skip {
        lin(&mut out, "dit.final.skip", d, LATENT_CHANNELS, Init::Zeros);
    }
    if b.cell_head > 0 {
        let cells = b.token_patch * b.token_patch;
        lin(&mut out, "dit.cell.feat", d, cells * CELL_FEATURES, tn);
        lin(&mut out, "dit.cell.0", b.in_channels + CELL_FEATURES, b.cell_head, tn);
        lin(&mut out, "dit.cell.1", b.cell_head, LATENT_CHANNELS, Init::Zeros);
    }
    if let Some(m) = &cfg.maa {
        out.extend(maa::param_specs(m, d));
    }
    out
}

/// Freshly initialized parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, shape, init) in param_specs(cfg) {
        let t = init_tensor(seed, &name, &shape, init);
        s.insert(name, t);
    }
    s
}

/// Checks that `params` holds exactly the architecture's parameters.
pub fn check_params<F: Scalar>(cfg: &ModelConfig, params: &ParamStore<F>) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "architecture has {} parameters, store has {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape, _) in specs {
        let t = params.get(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter '{name}' has shape {:?}, architecture needs {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// `[sin(x f_0), .., sin(x f_{h-1}), cos(x f_0), ..]` with geometric
/// frequencies `f_i = 10000^(-i/h)`, `h = dim / 2`.
pub fn sinusoidal(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (x * f).sin();
        out[half + i] = (x * f).cos();
    }
    out
}

/// Positional encoding of a weather class id, before projection.
pub fn weather_encoding(class: WeatherClass, dim: usize) -> Vec<f64> {
    sinusoidal(class.id() as f64, dim)
}

pub fn time_encoding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("timestep {t} outside [0, 1]")));
    }
    Ok(sinusoidal(t * TIME_SCALE, dim))
}

/// Fixed 2D sin-cos table for a `rows x cols` grid: the first half of the
/// channels encodes the row, the second half the column.
pub fn grid_encoding(rows: usize, cols: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            out.extend(sinusoidal(r as f64, half));
            out.extend(sinusoidal(c as f64, half));
        }
    }
    out
}

fn constant<F: Scalar>(g: &mut Graph<F>, shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<Var> {
    let t = Tensor::new(shape, data.into_iter().map(F::from_f64).collect())?;
    Ok(g.constant(t))
}

pub(crate) fn linear<F: Scalar>(g: &mut Graph<F>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    g.linear(x, w, Some(b))
}

/// `f_weather`: projected class encoding, one row per sample.
pub fn embed_weather<F: Scalar>(g: &mut Graph<F>, p: &Bound, classes: &[WeatherClass], d: usize) -> Result<Var> {
    let pe = constant(
        g,
        vec![classes.len(), d],
        classes.iter().flat_map(|&c| weather_encoding(c, d)),
    )?;
    linear(g, p, "emb.weather", pe)
}

/// `f_time`: sinusoidal encoding through a two-layer SiLU MLP.
pub fn embed_timestep<F: Scalar>(g: &mut Graph<F>, p: &Bound, t: &[f64], d: usize) -> Result<Var> {
    let mut data = Vec::with_capacity(t.len() * d);
    for &ti in t {
        data.extend(time_encoding(ti, d)?);
    }
    let pe = constant(g, vec![t.len(), d], data)?;
    let h = linear(g, p, "emb.time.0", pe)?;
    let h = g.silu(h);
    linear(g, p, "emb.time.1", h)
}

/// `f_sel`: rows of the selector table.
pub fn embed_selector<F: Scalar>(g: &mut Graph<F>, p: &Bound, selectors: &[usize]) -> Result<Var> {
    if selectors.iter().any(|&s| s >= SELECTOR_COUNT) {
        return Err(Error::Range(format!("selector outside 0..{SELECTOR_COUNT}")));
    }
    let table = p.var("emb.sel")?;
    g.select_rows(table, selectors)
}

/// Condition vector: `f_weather + f_time + f_sel`, `[batch, d]`.
pub fn build_condition<F: Scalar>(
    g: &mut Graph<F>,
    p: &Bound,
    classes: &[WeatherClass],
    t: &[f64],
    selectors: &[usize],
    d: usize,
) -> Result<Var> {
    if classes.len() != t.len() || t.len() != selectors.len() {
        return Err(Error::Shape("condition inputs differ in batch size".into()));
    }
    let w = embed_weather(g, p, classes, d)?;
    let tv = embed_timestep(g, p, t, d)?;
    let s = embed_selector(g, p, selectors)?;
    let ws = g.add(w, tv)?;
    g.add(ws, s)
}

/// `LN(h) * (1 + alpha) + beta` with `alpha`, `beta` predicted from the
/// (already SiLU-activated) condition. `h` is `[batch * tokens, d]`.
pub fn adaln_modulate<F: Scalar>(
    g: &mut Graph<F>,
    p: &Bound,
    name: &str,
    h: Var,
    cond_act: Var,
    tokens: usize,
) -> Result<Var> {
    let alpha = linear(g, p, &format!("{name}.scale"), cond_act)?;
    let beta = linear(g, p, &format!("{name}.shift"), cond_act)?;
    let n = g.layer_norm(h, LN_EPS);
    g.modulate(n, alpha, beta, tokens)
}

fn attention_block<F: Scalar>(
    g: &mut Graph<F>,
    p: &Bound,
    name: &str,
    x: Var,
    kv: Var,
    groups: usize,
    heads: usize,
) -> Result<Var> {
    let q = linear(g, p, &format!("{name}.q"), x)?;
    let k = linear(g, p, &format!("{name}.k"), kv)?;
    let v = linear(g, p, &format!("{name}.v"), kv)?;
    let a = g.attention(q, k, v, groups, heads)?;
    linear(g, p, &format!("{name}.o"), a)
}

/// Splits `[B, L, L, C]` latents into `[B * T, tp * tp * C]` tokens; each
/// token is its `tp x tp` block flattened in `(dy, dx, c)` order.
pub fn patchify<F: Scalar>(latent: &Tensor<F>, tp: usize) -> Result<Tensor<F>> {
    let s = latent.shape();
    if s.len() != 4 || s[1] != s[2] || tp == 0 || s[1] % tp != 0 {
        return Err(Error::Shape(format!("patchify: latent {s:?}, token patch {tp}")));
    }
    let (b, l, c) = (s[0], s[1], s[3]);
    let n = l / tp;
    let src = latent.data();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for ty in 0..n {
            for tx in 0..n {
                for dy in 0..tp {
                    let row = ((bi * l + ty * tp + dy) * l + tx * tp) * c;
                    out.extend_from_slice(&src[row..row + tp * c]);
                }
            }
        }
    }
    Tensor::new(vec![b * n * n, tp * tp * c], out)
}

/// Token features handed to each latent cell by the per-cell head.
pub const CELL_FEATURES: usize = 16;

/// Keeps the first [`LATENT_CHANNELS`] channels of every cell of a
/// patchified token matrix with `channels` channels per cell.
fn noisy_tokens<F: Scalar>(tokens: &Tensor<F>, channels: usize) -> Result<Tensor<F>> {
    let cells = tokens.cols() / channels;
    let data = tokens
        .data()
        .chunks(channels)
        .flat_map(|cell| cell[..LATENT_CHANNELS].iter().copied())
        .collect();
    Tensor::new(vec![tokens.rows(), cells * LATENT_CHANNELS], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Scalar>(tokens: &Tensor<F>, batch: usize, latent_size: usize, tp: usize) -> Result<Tensor<F>> {
    let n = latent_size / tp;
    let c = tokens.cols() / (tp * tp);
    if tokens.rows() != batch * n * n || c * tp * tp != tokens.cols() || n * tp != latent_size {
        return Err(Error::Shape(format!(
            "unpatchify: tokens {:?} for batch {batch}, latent {latent_size}, tp {tp}",
            tokens.shape()
        )));
    }
    let src = tokens.data();
    let l = latent_size;
    let mut out = vec![F::ZERO; batch * l * l * c];
    let mut k = 0;
    for bi in 0..batch {
        for ty in 0..n {
            for tx in 0..n {
                for dy in 0..tp {
                    let row = ((bi * l + ty * tp + dy) * l + tx * tp) * c;
                    out[row..row + tp * c].copy_from_slice(&src[k..k + tp * c]);
                    k += tp * c;
                }
            }
        }
    }
    Tensor::new(vec![batch, l, l, c], out)
}

/// One backbone evaluation.
pub struct Inputs<'a, F: Scalar> {
    /// `[B, L, L, in_channels]`, noisy target first.
    pub z_in: &'a Tensor<F>,
    pub t: &'a [f64],
    pub weather: &'a [WeatherClass],
    pub selector: &'a [usize],
    /// `[B, H, W, 3]` images for the map-aware attention.
    pub image: Option<&'a Tensor<F>>,
    /// Map whose learnable queries drive the gate, per sample.
    pub map: Option<&'a [IntrinsicMap]>,
}

pub struct Outputs {
    /// Velocity in token layout, `[B * T, tp * tp * 16]`.
    pub velocity: Var,
    pub maa: Option<MaaVars>,
}

/// Records the forward pass on `g`.
pub fn forward<F: Scalar>(g: &mut Graph<F>, p: &Bound, cfg: &ModelConfig, x: &Inputs<'_, F>) -> Result<Outputs> {
    let b = &cfg.backbone;
    let zs = x.z_in.shape();
    let batch = x.t.len();
    if zs.len() != 4 || zs[0] != batch || zs[1] != b.latent_size || zs[2] != b.latent_size || zs[3] != b.in_channels {
        return Err(Error::Shape(format!(
            "backbone input {zs:?}, expected [{batch}, {l}, {l}, {c}]",
            l = b.latent_size,
            c = b.in_channels
        )));
    }
    let d = b.d_model;
    let tokens = b.patch_tokens();
    let cond = build_condition(g, p, x.weather, x.t, x.selector, d)?;
    let cond_act = g.silu(cond);

    let maa_vars = match (&cfg.maa, x.image, x.map) {
        (Some(m), Some(img), Some(maps)) => Some(maa::forward(g, p, m, d, img, maps)?),
        (Some(_), _, _) => return Err(Error::Shape("map-aware model needs images and target maps".into())),
        (None, _, _) => None,
    };

    let tok = g.constant(patchify(x.z_in, b.token_patch)?);
    let mut h = linear(g, p, "dit.in", tok)?;
    let n = b.tokens_per_side();
    let pos_row = grid_encoding(n, n, d);
    let pos = constant(
        g,
        vec![batch * tokens, d],
        (0..batch).flat_map(|_| pos_row.iter().copied()),
    )?;
    h = g.add(h, pos)?;

    for l in 0..b.n_layers {
        let pre = format!("dit.blocks.{l}");
        let m = adaln_modulate(g, p, &format!("{pre}.ada_attn"), h, cond_act, tokens)?;
        let a = attention_block(g, p, &format!("{pre}.attn"), m, m, batch, b.n_heads)?;
        h = g.add(h, a)?;
        if let Some(mv) = &maa_vars {
            let m = adaln_modulate(g, p, &format!("{pre}.ada_cross"), h, cond_act, tokens)?;
            let a = attention_block(g, p, &format!("{pre}.cross"), m, mv.visual, batch, b.n_heads)?;
            h = g.add(h, a)?;
        }
        let m = adaln_modulate(g, p, &format!("{pre}.ada_mlp"), h, cond_act, tokens)?;
        let f = linear(g, p, &format!("{pre}.mlp.0"), m)?;
        let f = g.gelu(f);
        let f = linear(g, p, &format!("{pre}.mlp.1"), f)?;
        h = g.add(h, f)?;
    }
    let m = adaln_modulate(g, p, "dit.final.ada", h, cond_act, tokens)?;
    let mut velocity = linear(g, p, "dit.final.out", m)?;
    if b.noise_skip {
        let s = linear(g, p, "dit.final.skip", cond_act)?;
        let width = b.token_out();
        let spread: Vec<(u32, u32)> = (0..batch * tokens)
            .flat_map(|r| {
                let base = (r / tokens * LATENT_CHANNELS) as u32;
                (0..width).map(move |j| (0u32, base + (j % LATENT_CHANNELS) as u32))
            })
            .collect();
        let s = g.gather(&[s], spread, vec![batch * tokens, width])?;
        let zt = g.constant(noisy_tokens(&patchify(x.z_in, b.token_patch)?, b.in_channels)?);
        let skip = g.mul(s, zt)?;
        velocity = g.add(velocity, skip)?;
    }
    if b.cell_head > 0 {
        let n_cells = batch * tokens * b.token_patch * b.token_patch;
        let feat = linear(g, p, "dit.cell.feat", m)?;
        let feat = g.reshape(feat, &[n_cells, CELL_FEATURES])?;
        let cells = g.reshape(tok, &[n_cells, b.in_channels])?;
        let x = g.concat_cols(&[cells, feat])?;
        let x = linear(g, p, "dit.cell.0", x)?;
        let x = g.gelu(x);
        let x = linear(g, p, "dit.cell.1", x)?;
        let x = g.reshape(x, &[batch * tokens, b.token_out()])?;
        velocity = g.add(velocity, x)?;
    }
    Ok(Outputs {
        velocity,
        maa: maa_vars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weather_table_pairwise_distinct() {
        for d in [4, 8, 64] {
            let rows: Vec<Vec<f64>> = WeatherClass::all().map(|c| weather_encoding(c, d)).collect();
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    let dist: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    assert!(dist > 1e-3, "classes {i} and {j} collide at dim {d}");
                }
            }
        }
    }

    #[test]
    fn time_range() {
        assert!(time_encoding(-1e-3, 8).is_err());
        assert!(time_encoding(1.0 + 1e-6, 8).is_err());
        assert!(time_encoding(0.0, 8).is_ok());
        assert!(time_encoding(1.0, 8).is_ok());
    }

    #[test]
    fn patchify_round_trip() {
        let data: Vec<f32> = (0..2 * 4 * 4 * 3).map(|i| i as f32).collect();
        let z = Tensor::new(vec![2, 4, 4, 3], data).unwrap();
        let t = patchify(&z, 2).unwrap();
        assert_eq!(t.shape(), &[8, 12]);
        // Second token of the first sample covers columns 2..4 of rows 0..2.
        assert_eq!(&t.data()[12..15], &z.data()[6..9]);
        assert_eq!(unpatchify(&t, 2, 4, 2).unwrap(), z);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new(Task::Ir, 16, 8, 1, 2, 2, None);
        assert!(c.validate().is_ok());
        c.backbone.n_heads = 3;
        assert!(c.validate().is_err());
        let fr = ModelConfig::new(Task::Fr, 16, 8, 1, 2, 2, Some(MaaConfig::default()));
        assert!(fr.validate().is_err());
        assert_eq!(Task::Fr.in_channels(), 96);
        assert_eq!(Task::Ir.in_channels(), 32);
    }
}
