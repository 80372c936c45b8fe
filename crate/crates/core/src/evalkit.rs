//! Image and map quality metrics: PSNR, windowed SSIM and mean angular
//! error, plus per-map reports and paired ablation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pipelines;
use crate::scenegen::{IntrinsicMap, SemanticClass};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 8;
/// Images decomposed per sampler batch during evaluation.
const EVAL_CHUNK: usize = 8;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("metric inputs differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Shape("metric inputs are empty".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `+inf`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (mse / (peak * peak)).log10())
}

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights, population
/// statistics), averaged over channels. Inputs are `[H, W, C]`.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let s = a.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("ssim expects [H, W, C], got {s:?}")));
    }
    let (h, w, ch) = (s[0], s[1], s[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for c in 0..ch {
        let px = |d: &[f32], y: usize, x: usize| d[(y * w + x) * ch + c] as f64;
        let mut sum = 0.0;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        ma += px(ad, y, x);
                        mb += px(bd, y, x);
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let da = px(ad, y, x) - ma;
                        let db = px(bd, y, x) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
                va /= n;
                vb /= n;
                cov /= n;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += sum / ((h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1)) as f64;
    }
    Ok(total / ch as f64)
}

/// Mean angle in degrees between two `[H, W, 3]` normal fields over the
/// pixels where `mask` (`[H, W, 1]`) is nonzero. Vectors need not be unit
/// length.
pub fn mae_angular(n_hat: &Tensor, n_gt: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    same_shape(n_hat, n_gt)?;
    let s = n_hat.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Shape(format!("normal fields must be [H, W, 3], got {s:?}")));
    }
    let pixels = s[0] * s[1];
    if let Some(m) = mask {
        if m.shape() != [s[0], s[1], 1] {
            return Err(Error::Shape(format!("mask must be [{}, {}, 1], got {:?}", s[0], s[1], m.shape())));
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for p in 0..pixels {
        if mask.is_some_and(|m| m.data()[p] == 0.0) {
            continue;
        }
        let a = &n_hat.data()[3 * p..3 * p + 3];
        let b = &n_gt.data()[3 * p..3 * p + 3];
        if a != b {
            sum += angle_deg(a, b);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Range("angular error mask selects no pixels".into()));
    }
    Ok(sum / count as f64)
}

/// Angle between two vectors; a zero vector counts as perpendicular.
fn angle_deg(a: &[f32], b: &[f32]) -> f64 {
    let dot = |u: &[f32], v: &[f32]| -> f64 { u.iter().zip(v).map(|(&x, &y)| x as f64 * y as f64).sum() };
    let norm = (dot(a, a) * dot(b, b)).sqrt();
    if norm == 0.0 {
        return 90.0;
    }
    (dot(a, b) / norm).clamp(-1.0, 1.0).acos().to_degrees()
}

/// `[H, W, 1]` mask that is 1 wherever the semantic class is not sky.
pub fn sky_mask(semantics: &Tensor) -> Tensor {
    semantics.map(|v| if v as usize == SemanticClass::Sky.id() { 0.0 } else { 1.0 })
}

/// PSNR/SSIM peak for a map: normals span `[-1, 1]`, everything else is
/// measured against 1.
pub fn peak_for(name: &str) -> f64 {
    if name == IntrinsicMap::Normal.name() {
        2.0
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae_deg: Option<f64>,
}

/// Mean metrics for one map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae_deg: Option<f64>,
    pub n: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Per-sample metrics grouped by map name (`albedo`, ..., or `image`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub maps: BTreeMap<String, Vec<SampleMetrics>>,
}

impl MetricReport {
    /// Scores one prediction. Angular error is computed for normals only,
    /// restricted to `mask` when given.
    pub fn add(&mut self, name: &str, pred: &Tensor, gt: &Tensor, mask: Option<&Tensor>) -> Result<SampleMetrics> {
        let peak = peak_for(name);
        let m = SampleMetrics {
            psnr_db: psnr(pred, gt, peak)?,
            ssim: ssim(pred, gt, peak)?,
            mae_deg: if name == IntrinsicMap::Normal.name() {
                Some(mae_angular(pred, gt, mask)?)
            } else {
                None
            },
        };
        self.maps.entry(name.to_string()).or_default().push(m);
        Ok(m)
    }

    pub fn summary(&self) -> BTreeMap<String, MapSummary> {
        self.maps
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| {
                let mae = v.iter().map(|m| m.mae_deg).collect::<Option<Vec<_>>>().map(|x| mean(x.into_iter()));
                let s = MapSummary {
                    psnr_db: mean(v.iter().map(|m| m.psnr_db)),
                    ssim: mean(v.iter().map(|m| m.ssim)),
                    mae_deg: mae,
                    n: v.len(),
                };
                (k.clone(), s)
            })
            .collect()
    }

    /// `map,metric,value,n` rows, one per (map, metric).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("map,metric,value,n\n");
        for (map, s) in self.summary() {
            let _ = writeln!(out, "{map},psnr_db,{},{}", s.psnr_db, s.n);
            let _ = writeln!(out, "{map},ssim,{},{}", s.ssim, s.n);
            if let Some(m) = s.mae_deg {
                let _ = writeln!(out, "{map},mae_deg,{m},{}", s.n);
            }
        }
        out
    }
}

/// Decomposes every sample into `targets` and scores against ground truth.
/// Normal error excludes sky pixels.
pub fn evaluate_ir(model: &Model, samples: &[Sample], targets: &[IntrinsicMap], steps: usize, seed: u64) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for chunk in samples.chunks(EVAL_CHUNK) {
        let inputs: Vec<_> = chunk.iter().map(|s| (&s.stack.image, s.weather())).collect();
        let preds = pipelines::decompose_many(model, &inputs, targets, steps, seed)?;
        for (s, maps) in chunk.iter().zip(preds) {
            let mask = sky_mask(&s.stack.gbuffer.semantics);
            for (&t, pred) in targets.iter().zip(maps) {
                report.add(t.name(), &pred, s.stack.map(t), Some(&mask))?;
            }
        }
    }
    Ok(report)
}

/// Paired evaluation of a full model and its no-MAA counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub full: MetricReport,
    pub no_maa: MetricReport,
}

/// Per-map `full - no_maa` differences of the summary metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricDelta {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mae_deg: Option<f64>,
}

impl AblationReport {
    pub fn deltas(&self) -> BTreeMap<String, MetricDelta> {
        let a = self.full.summary();
        let b = self.no_maa.summary();
        a.iter()
            .filter_map(|(k, x)| {
                let y = b.get(k)?;
                Some((
                    k.clone(),
                    MetricDelta {
                        psnr_db: diff(x.psnr_db, y.psnr_db),
                        ssim: x.ssim - y.ssim,
                        mae_deg: x.mae_deg.zip(y.mae_deg).map(|(p, q)| p - q),
                    },
                ))
            })
            .collect()
    }

    /// `map,metric,value,n` rows with metrics suffixed `_full`, `_no_maa`
    /// and `_delta`.
    pub fn to_csv(&self) -> String {
        let a = self.full.summary();
        let b = self.no_maa.summary();
        let d = self.deltas();
        let mut out = String::from("map,metric,value,n\n");
        for (map, x) in &a {
            let Some(y) = b.get(map) else { continue };
            let dd = d[map];
            let mut rows = vec![
                ("psnr_db", x.psnr_db, y.psnr_db, dd.psnr_db),
                ("ssim", x.ssim, y.ssim, dd.ssim),
            ];
            if let (Some(p), Some(q), Some(r)) = (x.mae_deg, y.mae_deg, dd.mae_deg) {
                rows.push(("mae_deg", p, q, r));
            }
            let n = x.n.min(y.n);
            for (metric, f, g, delta) in rows {
                let _ = writeln!(out, "{map},{metric}_full,{f},{n}");
                let _ = writeln!(out, "{map},{metric}_no_maa,{g},{n}");
                let _ = writeln!(out, "{map},{metric}_delta,{delta},{n}");
            }
        }
        out
    }
}

/// Equal values (including two infinities) differ by zero.
fn diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

/// Scores both checkpoints on the same samples, seeds and sampler steps.
pub fn ablation_report(
    full: &Model,
    no_maa: &Model,
    samples: &[Sample],
    targets: &[IntrinsicMap],
    steps: usize,
    seed: u64,
) -> Result<AblationReport> {
    Ok(AblationReport {
        full: evaluate_ir(full, samples, targets, steps, seed)?,
        no_maa: evaluate_ir(no_maa, samples, targets, steps, seed)?,
    })
}
