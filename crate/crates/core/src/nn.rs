//! Named parameter storage, initialization and the Adam optimizer.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub const INIT_STD: f32 = 0.02;

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f32),
    /// Normal with the given standard deviation, resampled outside ±2σ.
    TruncNormal(f32),
}

/// Parameter tensor for `name`. The values depend only on `(seed, name)`,
/// so models that share parameter names share their initial values.
pub fn init_tensor(seed: u64, name: &str, shape: &[usize], init: Init) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Const(c) => Tensor::full(shape, c),
        Init::TruncNormal(std) => {
            let mut r = rng::stream(seed, rng::hash_str(name));
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let z: f32 = StandardNormal.sample(&mut r);
                    if z.abs() <= 2.0 {
                        break z * std;
                    }
                })
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape product")
        }
    }
}

/// Ordered map from parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F: Scalar = f32> {
    params: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient of every bound parameter; parameters no gradient reached get
    /// zeros.
    pub fn collect_grads<F: Scalar>(
        &self,
        g: &Graph<F>,
        grads: &Gradients<F>,
    ) -> BTreeMap<String, Vec<F>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let gr = grads
                    .get(v)
                    .map(<[F]>::to_vec)
                    .unwrap_or_else(|| vec![F::ZERO; g.value(v).len()]);
                (k.clone(), gr)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default)]
    pub clip_norm: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            let mut s = ParamStore::new();
            for (k, t) in p.iter() {
                s.insert(k, Tensor::zeros(t.shape()));
            }
            s
        };
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Vec<f32>>,
        lr: f32,
    ) -> Result<()> {
        let c = self.config;
        let mut clip = 1.0f32;
        if c.clip_norm > 0.0 {
            let sq: f64 = grads
                .values()
                .flat_map(|g| g.iter())
                .map(|&x| (x as f64) * (x as f64))
                .sum();
            let norm = sq.sqrt() as f32;
            if norm > c.clip_norm {
                clip = c.clip_norm / norm;
            }
        }
        self.step += 1;
        let b1t = 1.0 - c.beta1.powi(self.step as i32);
        let b2t = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("no parameter '{name}'")))?;
            let m = self.m.get_mut(name).expect("moments track params");
            let md = m.data_mut();
            let v = self.v.get_mut(name).expect("moments track params");
            let vd = v.data_mut();
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g).enumerate() {
                let gi = gi * clip;
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                let mh = md[i] / b1t;
                let vh = vd[i] / b2t;
                *w -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
