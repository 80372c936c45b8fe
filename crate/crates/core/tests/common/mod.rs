#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use weatherflow::backbone::{param_specs, ModelConfig};
use weatherflow::nn::ParamStore;
use weatherflow::rng;
use weatherflow::tensor::Tensor;

/// Every architecture parameter drawn from N(0, std^2), zero-init ones
/// included, so that all paths carry signal.
pub fn random_params(cfg: &ModelConfig, seed: u64, std: f64) -> ParamStore<f64> {
    let mut r = rng::stream(seed, 1);
    let mut p = ParamStore::new();
    for (name, shape, _) in param_specs(cfg) {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                z * std
            })
            .collect();
        p.insert(name, Tensor::new(shape, data).unwrap());
    }
    p
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 2);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn lin(p: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{name}.w")).unwrap();
    let b = p.get(&format!("{name}.b")).unwrap();
    let (i, o) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), i, "{name}");
    (0..o)
        .map(|j| b.data()[j] + (0..i).map(|k| x[k] * w.data()[k * o + j]).sum::<f64>())
        .collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

pub fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    x.iter().map(|a| (a - m) / (v + 1e-6).sqrt()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|a| (a - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|a| a / s).collect()
}

/// Multi-head attention with contiguous head slices.
pub fn attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], heads: usize) -> Vec<Vec<f64>> {
    let d = q[0].len();
    let hd = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let sl = h * hd..(h + 1) * hd;
        for (qi, qrow) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|krow| sl.clone().map(|j| qrow[j] * krow[j]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for j in sl.clone() {
                out[qi][j] = p.iter().zip(v).map(|(w, vr)| w * vr[j]).sum();
            }
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

pub mod gradcheck {
    use rand::Rng;
    use weatherflow::backbone::{ModelConfig, Task};
    use weatherflow::flow::{fm_loss_at, FlowBatch};
    use weatherflow::maa::MaaConfig;
    use weatherflow::nn::ParamStore;
    use weatherflow::rng;
    use weatherflow::scenegen::{IntrinsicMap, WeatherClass};

    pub const STEP: f64 = 1e-5;
    pub const STD: f64 = 0.3;
    pub const MAA_WIDEN: f64 = 4.0;
    /// Denominator floor of the relative error: central differences at
    /// `STEP` cannot resolve gradients much below this.
    pub const FLOOR: f64 = 1e-5;
    pub const AUX_WEIGHT: f64 = 0.1;

    pub struct Case {
        pub cfg: ModelConfig,
        pub params: ParamStore<f64>,
        pub batch: FlowBatch<f64>,
        pub t: Vec<f64>,
        pub eps: weatherflow::tensor::Tensor<f64>,
    }

    /// Micro IR model with map-aware attention and a two-sample batch.
    pub fn micro_case(seed: u64) -> Case {
        let m = MaaConfig {
            enc_channels: [4, 4, 4],
            queries: 2,
            classes: 5,
        };
        let mut cfg = ModelConfig::new(Task::Ir, 16, 8, 1, 2, 2, Some(m));
        cfg.backbone.mlp_ratio = 2;
        cfg.backbone.cell_head = 2;
        let mut params = super::random_params(&cfg, seed, STD);
        // Larger attention weights in the map-aware block keep its softmax
        // away from uniform, so its gradients stand clear of round-off.
        let wide: Vec<String> = params
            .names()
            .filter(|n| n.starts_with("maa.gate.") || n.starts_with("maa.fuse.") || *n == "maa.map_queries")
            .map(str::to_string)
            .collect();
        for n in wide {
            params.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v *= MAA_WIDEN);
        }
        let mut r = rng::stream(seed, 3);
        let batch = FlowBatch {
            z0: super::random_tensor(&[2, 8, 8, 16], seed + 10, -1.0, 1.0),
            cond: super::random_tensor(&[2, 8, 8, 16], seed + 11, -1.0, 1.0),
            weather: vec![WeatherClass::FOGGY, WeatherClass::DAWN_DUSK],
            selector: vec![IntrinsicMap::Normal.index(), IntrinsicMap::Metallic.index()],
            image: Some(super::random_tensor(&[2, 16, 16, 3], seed + 12, 0.0, 1.0)),
            maps: Some(vec![IntrinsicMap::Normal, IntrinsicMap::Metallic]),
            labels: Some((0..8).map(|_| r.random_range(0..5)).collect()),
        };
        Case {
            cfg,
            params,
            batch,
            t: vec![0.35, 0.8],
            eps: super::random_tensor(&[2, 8, 8, 16], seed + 13, -2.0, 2.0),
        }
    }

    pub struct Report {
        pub params: usize,
        pub coords: usize,
        pub max_rel: f64,
        pub worst: String,
        /// Parameters whose analytic gradient is identically zero.
        pub dead: Vec<String>,
    }

    fn loss(c: &Case, p: &ParamStore<f64>) -> f64 {
        fm_loss_at(&c.cfg, p, &c.batch, &c.t, &c.eps, AUX_WEIGHT).unwrap().total
    }

    /// Central differences on `coords` coordinates: one from every tensor,
    /// the rest uniformly at random.
    pub fn run(seed: u64, coords: usize) -> Report {
        let c = micro_case(seed);
        let grads = fm_loss_at(&c.cfg, &c.params, &c.batch, &c.t, &c.eps, AUX_WEIGHT).unwrap().grads;
        let names: Vec<String> = c.params.names().map(str::to_string).collect();
        let mut r = rng::stream(seed, 4);
        let mut picks: Vec<(String, usize)> = names
            .iter()
            .map(|n| (n.clone(), r.random_range(0..c.params.get(n).unwrap().len())))
            .collect();
        while picks.len() < coords {
            let n = &names[r.random_range(0..names.len())];
            picks.push((n.clone(), r.random_range(0..c.params.get(n).unwrap().len())));
        }
        let mut max_rel: f64 = 0.0;
        let mut worst = String::new();
        for (name, i) in &picks {
            let mut p = c.params.clone();
            let base = p.get(name).unwrap().data()[*i];
            p.get_mut(name).unwrap().data_mut()[*i] = base + STEP;
            let up = loss(&c, &p);
            p.get_mut(name).unwrap().data_mut()[*i] = base - STEP;
            let down = loss(&c, &p);
            let num = (up - down) / (2.0 * STEP);
            let ana = grads[name][*i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]: analytic {ana:e}, numeric {num:e}");
            }
        }
        let dead = grads
            .iter()
            .filter(|(_, g)| g.iter().all(|&v| v == 0.0))
            .map(|(n, _)| n.clone())
            .collect();
        Report {
            params: c.params.numel(),
            coords: picks.len(),
            max_rel,
            worst,
            dead,
        }
    }
}
