//! Intrinsic map-aware attention.
//!
//! A small patch encoder turns the image into patch tokens with per-patch
//! semantic logits. Learnable per-map queries attend over the patches
//! (the gate), and logit-modulated semantic embeddings attend over the
//! gated tokens (the fuse). The visual condition handed to the backbone is
//! the fused semantic tokens followed by the gated map tokens.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::{grid_encoding, linear};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, INIT_STD};
use crate::scenegen::{IntrinsicMap, SemanticClass};
use crate::tensor::{Scalar, Tensor};

/// Pixel side of one patch: three stride-2 stages.
pub const PATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaaConfig {
    /// Output channels of the three stride-2 encoder stages.
    pub enc_channels: [usize; 3],
    /// Learnable queries per intrinsic map.
    pub queries: usize,
    /// Semantic classes predicted per patch.
    pub classes: usize,
}

impl Default for MaaConfig {
    fn default() -> Self {
        Self {
            enc_channels: [16, 32, 64],
            queries: 4,
            classes: SemanticClass::COUNT,
        }
    }
}

impl MaaConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.enc_channels.contains(&0) || self.queries == 0 || self.classes == 0 {
            return Err(Error::Config("map-aware attention sizes must be positive".into()));
        }
        if image_size % PATCH != 0 {
            return Err(Error::Config(format!(
                "image size {image_size} not divisible by the {PATCH}px patch"
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.classes + self.queries
    }
}

pub fn param_specs(m: &MaaConfig, d: usize) -> Vec<(String, Vec<usize>, Init)> {
    let tn = Init::TruncNormal(INIT_STD);
    let fan = |n: usize| Init::TruncNormal((1.0 / n as f32).sqrt());
    let [c0, c1, c2] = m.enc_channels;
    let mut out = Vec::new();
    let mut lin = |name: &str, i: usize, o: usize, w: Init| {
        out.push((format!("maa.{name}.w"), vec![i, o], w));
        out.push((format!("maa.{name}.b"), vec![o], Init::Zeros));
    };
    lin("enc.0", 12, c0, fan(12));
    lin("enc.1", 4 * c0, c1, fan(4 * c0));
    lin("enc.2", 4 * c1, c2, fan(4 * c1));
    lin("enc.3", c2, d, fan(c2));
    lin("sem_head", d, m.classes, tn);
    for w in ["q", "k", "v"] {
        lin(&format!("gate.{w}"), d, d, tn);
        lin(&format!("fuse.{w}"), d, d, tn);
    }
    out.push((
        "maa.map_queries".into(),
        vec![IntrinsicMap::ALL.len() * m.queries, d],
        tn,
    ));
    out.push(("maa.sem_tokens".into(), vec![m.classes, d], tn));
    out.push(("maa.alpha".into(), vec![1], Init::Const(1.0)));
    out
}

/// Graph handles produced by one map-aware attention pass.
#[derive(Clone, Debug)]
pub struct MaaVars {
    /// Patch tokens `[B * N, D]`.
    pub tokens: Var,
    /// Semantic logits `[B * N, K]`.
    pub logits: Var,
    /// Gate attention output `p'`, `[B * M_q, D]`; its probabilities are
    /// available through [`Graph::attention_probs`].
    pub gate: Var,
    /// Fused semantic tokens `c'`, `[B * K, D]`.
    pub fused: Var,
    /// Visual condition `[B * (K + M_q), D]`.
    pub visual: Var,
    pub grid: (usize, usize),
}

/// Space-to-depth on a `[B * h * w, C]` row-major grid: each 2x2 block
/// becomes one row of `4C` in `(dy, dx, c)` order.
pub fn space_to_depth<F: Scalar>(g: &mut Graph<F>, x: Var, batch: usize, h: usize, w: usize) -> Result<Var> {
    let c = g.value(x).cols();
    if g.value(x).rows() != batch * h * w || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "space_to_depth: {:?} as {batch}x{h}x{w}",
            g.shape(x)
        )));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(batch * h * w * c);
    for b in 0..batch {
        for i in 0..h2 {
            for j in 0..w2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = ((b * h + 2 * i + dy) * w + 2 * j + dx) * c;
                        index.extend((0..c).map(|k| (0u32, (src + k) as u32)));
                    }
                }
            }
        }
    }
    g.gather(&[x], index, vec![batch * h2 * w2, 4 * c])
}

/// Patch encoder: `[B, H, W, 3]` images to tokens and semantic logits.
pub fn encode_patches<F: Scalar>(g: &mut Graph<F>, p: &Bound, d: usize, images: &Tensor<F>) -> Result<(Var, Var, (usize, usize))> {
    let s = images.shape();
    if s.len() != 4 || s[3] != 3 || s[1] % PATCH != 0 || s[2] % PATCH != 0 || s[1] == 0 || s[2] == 0 {
        return Err(Error::Shape(format!(
            "patch encoder needs [B, H, W, 3] with H, W multiples of {PATCH}, got {s:?}"
        )));
    }
    let (batch, h, w) = (s[0], s[1], s[2]);
    let x = g.constant(images.clone().reshape(&[batch * h * w, 3])?);
    let mut x = space_to_depth(g, x, batch, h, w)?;
    let (mut hh, mut ww) = (h / 2, w / 2);
    for stage in 0..3 {
        if stage > 0 {
            x = space_to_depth(g, x, batch, hh, ww)?;
            hh /= 2;
            ww /= 2;
        }
        x = linear(g, p, &format!("maa.enc.{stage}"), x)?;
        x = g.gelu(x);
    }
    let tokens = linear(g, p, "maa.enc.3", x)?;
    let pos = grid_encoding(hh, ww, d);
    let pos = Tensor::new(
        vec![batch * hh * ww, d],
        (0..batch).flat_map(|_| pos.iter().map(|&v| F::from_f64(v))).collect(),
    )?;
    let pos = g.constant(pos);
    let tokens = g.add(tokens, pos)?;
    let logits = linear(g, p, "maa.sem_head", tokens)?;
    Ok((tokens, logits, (hh, ww)))
}

/// Rows of the query table for each sample's map.
pub fn map_queries<F: Scalar>(g: &mut Graph<F>, p: &Bound, m: &MaaConfig, maps: &[IntrinsicMap]) -> Result<Var> {
    let rows: Vec<usize> = maps
        .iter()
        .flat_map(|mp| (0..m.queries).map(move |q| mp.index() * m.queries + q))
        .collect();
    let table = p.var("maa.map_queries")?;
    g.select_rows(table, &rows)
}

/// Single-head cross-attention with the map queries `d` over patches `p`.
pub fn gate<F: Scalar>(g: &mut Graph<F>, p: &Bound, tokens: Var, queries: Var, batch: usize) -> Result<Var> {
    let q = linear(g, p, "maa.gate.q", queries)?;
    let k = linear(g, p, "maa.gate.k", tokens)?;
    let v = linear(g, p, "maa.gate.v", tokens)?;
    g.attention(q, k, v, batch, 1)
}

/// Fusion: `c_hat_k = c_k * (1 + mean_n softmax(logits_n)_k)`, then
/// `c' = alpha * Attn(c_hat, p') + c_hat`.
pub fn fuse<F: Scalar>(
    g: &mut Graph<F>,
    p: &Bound,
    logits: Var,
    gated: Var,
    batch: usize,
    patches: usize,
) -> Result<(Var, Var)> {
    let c = p.var("maa.sem_tokens")?;
    let (k, d) = (g.value(c).rows(), g.value(c).cols());
    if g.value(logits).cols() != k {
        return Err(Error::Shape("fuse: logit classes differ from semantic tokens".into()));
    }
    let probs = g.softmax_rows(logits);
    let pooled = g.group_mean_rows(probs, patches)?;
    let spread: Vec<(u32, u32)> = (0..batch * k)
        .flat_map(|r| std::iter::repeat_n((0u32, r as u32), d))
        .collect();
    let pooled = g.gather(&[pooled], spread, vec![batch * k, d])?;
    let rows: Vec<usize> = (0..batch).flat_map(|_| 0..k).collect();
    let c_rep = g.select_rows(c, &rows)?;
    let scaled = g.mul(c_rep, pooled)?;
    let c_hat = g.add(c_rep, scaled)?;
    let q = linear(g, p, "maa.fuse.q", c_hat)?;
    let kk = linear(g, p, "maa.fuse.k", gated)?;
    let v = linear(g, p, "maa.fuse.v", gated)?;
    let a = g.attention(q, kk, v, batch, 1)?;
    let alpha = p.var("maa.alpha")?;
    let a = g.scale_by(a, alpha)?;
    let fused = g.add(a, c_hat)?;
    Ok((fused, c_hat))
}

/// Full pass: encoder, gate, fuse and the concatenated visual condition.
pub fn forward<F: Scalar>(
    g: &mut Graph<F>,
    p: &Bound,
    m: &MaaConfig,
    d: usize,
    images: &Tensor<F>,
    maps: &[IntrinsicMap],
) -> Result<MaaVars> {
    let batch = images.shape().first().copied().unwrap_or(0);
    if maps.len() != batch {
        return Err(Error::Shape(format!("{} maps for a batch of {batch}", maps.len())));
    }
    let (tokens, logits, grid) = encode_patches(g, p, d, images)?;
    let queries = map_queries(g, p, m, maps)?;
    let gated = gate(g, p, tokens, queries, batch)?;
    let (fused, _) = fuse(g, p, logits, gated, batch, grid.0 * grid.1)?;
    let visual = g.concat_rows_grouped(&[fused, gated], batch)?;
    Ok(MaaVars {
        tokens,
        logits,
        gate: gated,
        fused,
        visual,
        grid,
    })
}

/// Mean gate probability over the queries, one `[rows, cols]` grid per
/// sample. `probs` is laid out `[B, 1, M_q, N]`.
pub fn heatmap<F: Scalar>(probs: &[F], batch: usize, queries: usize, grid: (usize, usize)) -> Result<Vec<Tensor>> {
    let n = grid.0 * grid.1;
    if probs.len() != batch * queries * n || queries == 0 {
        return Err(Error::Shape(format!(
            "heatmap: {} probabilities for {batch}x{queries}x{n}",
            probs.len()
        )));
    }
    (0..batch)
        .map(|b| {
            let mut cells = vec![0.0f64; n];
            for q in 0..queries {
                let row = &probs[(b * queries + q) * n..(b * queries + q + 1) * n];
                for (c, &v) in cells.iter_mut().zip(row) {
                    *c += v.to_f64();
                }
            }
            let data = cells.iter().map(|&c| (c / queries as f64) as f32).collect();
            Tensor::new(vec![grid.0, grid.1, 1], data)
        })
        .collect()
}

/// Majority semantic class of each `PATCH x PATCH` cell (ties go to the
/// lower class id).
pub fn patch_labels(semantics: &Tensor, classes: usize) -> Result<Vec<usize>> {
    let s = semantics.shape();
    if s.len() != 3 || s[2] != 1 || s[0] % PATCH != 0 || s[1] % PATCH != 0 {
        return Err(Error::Shape(format!("semantics must be [H, W, 1] in {PATCH}px cells, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let (rows, cols) = (h / PATCH, w / PATCH);
    let data = semantics.data();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut count = vec![0usize; classes];
            for y in r * PATCH..(r + 1) * PATCH {
                for x in c * PATCH..(c + 1) * PATCH {
                    let id = data[y * w + x].round().max(0.0) as usize;
                    count[id.min(classes - 1)] += 1;
                }
            }
            let best = (0..classes).max_by_key(|&k| (count[k], std::cmp::Reverse(k))).unwrap_or(0);
            out.push(best);
        }
    }
    Ok(out)
}
