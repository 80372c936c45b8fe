//! A model (architecture plus parameters) and its checkpoint file.
//!
//! Checkpoint layout:
//!
//! ```text
//! "WCK1" | header_len: u64 LE | header: JSON | payload: f32 LE tensors in header order
//! ```
//!
//! The header lists every tensor's name and shape; optimizer moments, when
//! present, follow the parameters under `adam.m.<name>` / `adam.v.<name>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::backbone::{self, check_params, init_params, Inputs, ModelConfig};
use crate::error::{Error, Result};
use crate::maa;
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::scenegen::{IntrinsicMap, WeatherClass};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Conditioning shared by every step of one sampling run.
#[derive(Clone, Debug)]
pub struct Conditioning {
    /// Normalized conditioning latents `[B, L, L, in_channels - 16]`.
    pub latents: Tensor,
    pub weather: Vec<WeatherClass>,
    pub selector: Vec<usize>,
    /// Images `[B, H, W, 3]` for the map-aware attention.
    pub image: Option<Tensor>,
    pub maps: Option<Vec<IntrinsicMap>>,
}

impl Conditioning {
    pub fn batch(&self) -> usize {
        self.weather.len()
    }
}

/// Concatenates `[B, L, L, a]` and `[B, L, L, b]` along channels.
pub fn concat_channels<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[..3] != sb[..3] {
        return Err(Error::Shape(format!("concat_channels: {sa:?} and {sb:?}")));
    }
    let (ca, cb) = (sa[3], sb[3]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Tensor::new(vec![sa[0], sa[1], sa[2], ca + cb], out)
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self { config, params })
    }

    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn has_maa(&self) -> bool {
        self.config.maa.is_some()
    }

    /// Velocity prediction `[B, L, L, 16]` for noisy latents `z_t` at time `t`.
    pub fn velocity(&self, z_t: &Tensor, t: f64, cond: &Conditioning) -> Result<Tensor> {
        let z_in = concat_channels(z_t, &cond.latents)?;
        let batch = cond.batch();
        let ts = vec![t; batch];
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let out = backbone::forward(
            &mut g,
            &p,
            &self.config,
            &Inputs {
                z_in: &z_in,
                t: &ts,
                weather: &cond.weather,
                selector: &cond.selector,
                image: cond.image.as_ref(),
                map: cond.maps.as_deref(),
            },
        )?;
        let b = &self.config.backbone;
        backbone::unpatchify(g.value(out.velocity), batch, b.latent_size, b.token_patch)
    }

    /// Gate heatmaps (`[rows, cols, 1]`, one per image) and per-patch
    /// semantic logits for `map`.
    pub fn heatmaps(&self, images: &Tensor, map: IntrinsicMap) -> Result<(Vec<Tensor>, Tensor)> {
        let m = self
            .config
            .maa
            .as_ref()
            .ok_or_else(|| Error::CheckpointMismatch("model has no map-aware attention".into()))?;
        let batch = images.shape().first().copied().unwrap_or(0);
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let maps = vec![map; batch];
        let v = maa::forward(&mut g, &p, m, self.config.backbone.d_model, images, &maps)?;
        let probs = g.attention_probs(v.gate).expect("gate is an attention node");
        let hm = maa::heatmap(probs, batch, m.queries, v.grid)?;
        Ok((hm, g.value(v.logits).clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub seed: u64,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    seed: u64,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(model: Model, step: u64, seed: u64) -> Self {
        Self {
            model,
            step,
            seed,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor)> = self
            .model
            .params
            .iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (k, v) in opt.m.iter() {
                tensors.push((format!("adam.m.{k}"), v));
            }
            for (k, v) in opt.v.iter() {
                tensors.push((format!("adam.v.{k}"), v));
            }
        }
        let header = Header {
            config: self.model.config.clone(),
            step: self.step,
            seed: self.seed,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + json.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(malformed("missing WCK1 magic"));
        }
        let hl = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < hl {
            return Err(malformed("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hl]).map_err(|e| malformed(format!("header: {e}")))?;
        let mut payload = &body[hl..];
        let mut params = ParamStore::new();
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for e in header.tensors {
            let n = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| malformed("tensor size overflow"))?;
            if payload.len() < n * 4 {
                return Err(malformed(format!("payload truncated at '{}'", e.name)));
            }
            let data = payload[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            payload = &payload[n * 4..];
            let t = Tensor::new(e.shape, data)?;
            if let Some(k) = e.name.strip_prefix("adam.m.") {
                m.insert(k, t);
            } else if let Some(k) = e.name.strip_prefix("adam.v.") {
                v.insert(k, t);
            } else {
                params.insert(e.name, t);
            }
        }
        if !payload.is_empty() {
            return Err(malformed("trailing bytes after payload"));
        }
        let model = Model::new(header.config, params)?;
        let optimizer = match header.optimizer {
            Some(o) => {
                let names_match = |s: &ParamStore| {
                    s.len() == model.params.len() && model.params.names().all(|n| s.contains(n))
                };
                if !names_match(&m) || !names_match(&v) {
                    return Err(malformed("optimizer moments do not match parameters"));
                }
                Some(Adam {
                    config: o.config,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Self {
            model,
            step: header.step,
            seed: header.seed,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint(path.display().to_string()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}
