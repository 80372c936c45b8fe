mod common;

use common::*;
use weatherflow::autograd::Graph;
use weatherflow::backbone::{self, adaln_modulate, build_condition, embed_timestep, init_params, Inputs, ModelConfig, Task};
use weatherflow::flow::{fm_loss_at, FlowBatch};
use weatherflow::nn::ParamStore;
use weatherflow::scenegen::WeatherClass;
use weatherflow::tensor::Tensor;

/// Scalar-loop forward pass of a backbone without the visual condition.
fn oracle_forward(
    cfg: &ModelConfig,
    p: &ParamStore<f64>,
    z: &Tensor<f64>,
    t: &[f64],
    weather: &[WeatherClass],
    selector: &[usize],
) -> Vec<Vec<f64>> {
    let b = &cfg.backbone;
    let (d, tp, l, c) = (b.d_model, b.token_patch, b.latent_size, b.in_channels);
    let n = l / tp;
    let half = d / 2;
    let freq = |i: usize| 10000f64.powf(-(i as f64) / half as f64);
    let pe = |x: f64| -> Vec<f64> {
        let mut v: Vec<f64> = (0..half).map(|i| (x * freq(i)).sin()).collect();
        v.extend((0..half).map(|i| (x * freq(i)).cos()));
        v
    };
    let q = d / 4;
    let pe_q = |x: f64| -> Vec<f64> {
        let f = |i: usize| 10000f64.powf(-(i as f64) / q as f64);
        let mut v: Vec<f64> = (0..q).map(|i| (x * f(i)).sin()).collect();
        v.extend((0..q).map(|i| (x * f(i)).cos()));
        v
    };
    let mut out = Vec::new();
    for s in 0..t.len() {
        let w = lin(p, "emb.weather", &pe(weather[s].id() as f64));
        let h0 = lin(p, "emb.time.0", &pe(t[s] * 100.0));
        let tv = lin(p, "emb.time.1", &h0.iter().map(|&x| silu(x)).collect::<Vec<_>>());
        let sel = &p.get("emb.sel").unwrap().data()[selector[s] * d..(selector[s] + 1) * d];
        let cond = add(&add(&w, &tv), sel);
        let ca: Vec<f64> = cond.iter().map(|&x| silu(x)).collect();
        let modulate = |name: &str, h: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let a = lin(p, &format!("{name}.scale"), &ca);
            let bb = lin(p, &format!("{name}.shift"), &ca);
            h.iter()
                .map(|row| layer_norm(row).iter().enumerate().map(|(j, &v)| v * (1.0 + a[j]) + bb[j]).collect())
                .collect()
        };
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        for ty in 0..n {
            for tx in 0..n {
                let mut tok = Vec::new();
                for dy in 0..tp {
                    for dx in 0..tp {
                        for ch in 0..c {
                            tok.push(z.data()[(((s * l + ty * tp + dy) * l) + tx * tp + dx) * c + ch]);
                        }
                    }
                }
                let mut pos = pe_q(ty as f64);
                pos.extend(pe_q(tx as f64));
                h.push(add(&lin(p, "dit.in", &tok), &pos));
                inputs.push(tok);
            }
        }
        for layer in 0..b.n_layers {
            let pre = format!("dit.blocks.{layer}");
            let m = modulate(&format!("{pre}.ada_attn"), &h);
            let proj = |w: &str| -> Vec<Vec<f64>> { m.iter().map(|r| lin(p, &format!("{pre}.attn.{w}"), r)).collect() };
            let a = attention(&proj("q"), &proj("k"), &proj("v"), b.n_heads);
            for (hr, ar) in h.iter_mut().zip(&a) {
                *hr = add(hr, &lin(p, &format!("{pre}.attn.o"), ar));
            }
            let m = modulate(&format!("{pre}.ada_mlp"), &h);
            for (hr, mr) in h.iter_mut().zip(&m) {
                let f: Vec<f64> = lin(p, &format!("{pre}.mlp.0"), mr).iter().map(|&x| gelu(x)).collect();
                *hr = add(hr, &lin(p, &format!("{pre}.mlp.1"), &f));
            }
        }
        let m = modulate("dit.final.ada", &h);
        // Per-channel skip from the noisy latent and the per-cell head.
        let skip = lin(p, "dit.final.skip", &ca);
        for (row, tok) in m.iter().zip(&inputs) {
            let mut v = lin(p, "dit.final.out", row);
            let feat = lin(p, "dit.cell.feat", row);
            for cell in 0..tp * tp {
                let mut x = tok[cell * c..(cell + 1) * c].to_vec();
                x.extend_from_slice(&feat[cell * 16..(cell + 1) * 16]);
                let hidden: Vec<f64> = lin(p, "dit.cell.0", &x).iter().map(|&v| gelu(v)).collect();
                let local = lin(p, "dit.cell.1", &hidden);
                for ch in 0..16 {
                    v[cell * 16 + ch] += skip[ch] * tok[cell * c + ch] + local[ch];
                }
            }
            out.push(v);
        }
    }
    out
}

fn graph_forward(
    cfg: &ModelConfig,
    p: &ParamStore<f64>,
    z: &Tensor<f64>,
    t: &[f64],
    weather: &[WeatherClass],
    selector: &[usize],
) -> Vec<Vec<f64>> {
    let mut g = Graph::<f64>::new();
    let bound = p.bind(&mut g, false);
    let out = backbone::forward(
        &mut g,
        &bound,
        cfg,
        &Inputs {
            z_in: z,
            t,
            weather,
            selector,
            image: None,
            map: None,
        },
    )
    .unwrap();
    rows(g.value(out.velocity))
}

fn check_forward(cfg: ModelConfig, seed: u64) {
    assert!(cfg.backbone.noise_skip && cfg.backbone.cell_head > 0);
    let p = random_params(&cfg, seed, 0.4);
    let l = cfg.backbone.latent_size;
    let z = random_tensor(&[2, l, l, cfg.backbone.in_channels], seed, -1.0, 1.0);
    let t = [0.25, 0.9];
    let w = [WeatherClass::FOGGY, WeatherClass::NIGHT_RAIN];
    let sel = [1, 4];
    let got = graph_forward(&cfg, &p, &z, &t, &w, &sel);
    let want = oracle_forward(&cfg, &p, &z, &t, &w, &sel);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn micro_forward_matches_scalar_oracle() {
    check_forward(ModelConfig::new(Task::Ir, 4, 4, 1, 1, 1, None), 3);
}

#[test]
fn multi_head_patched_forward_matches_scalar_oracle() {
    check_forward(ModelConfig::new(Task::Fr, 8, 8, 2, 2, 2, None), 4);
}

fn adaln_case(zero: bool, constant_h: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let cfg = ModelConfig::new(Task::Ir, 4, 8, 1, 1, 1, None);
    let mut p = random_params(&cfg, 9, 0.5);
    if zero {
        for n in ["w", "b"] {
            for s in ["scale", "shift"] {
                let name = format!("dit.blocks.0.ada_attn.{s}.{n}");
                p.get_mut(&name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let h = if constant_h {
        Tensor::full(&[3, 8], 0.5)
    } else {
        random_tensor(&[3, 8], 5, -2.0, 2.0)
    };
    let cond = random_tensor(&[1, 8], 6, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let bound = p.bind(&mut g, false);
    let hv = g.constant(h.clone());
    let cv = g.constant(cond.clone());
    let out = adaln_modulate(&mut g, &bound, "dit.blocks.0.ada_attn", hv, cv, 3).unwrap();
    let ln = g.layer_norm(hv, backbone::LN_EPS);
    let alpha = lin(&p, "dit.blocks.0.ada_attn.scale", cond.data());
    let beta = lin(&p, "dit.blocks.0.ada_attn.shift", cond.data());
    let mut oracle = Vec::new();
    for r in h.data().chunks(8) {
        oracle.extend(layer_norm(r).iter().enumerate().map(|(j, v)| v * (1.0 + alpha[j]) + beta[j]));
    }
    (g.value(out).data().to_vec(), g.value(ln).data().to_vec(), oracle, beta, alpha)
}

#[test]
fn zero_adaln_is_exactly_layer_norm() {
    let (out, ln, _, _, _) = adaln_case(true, false);
    assert_eq!(out, ln);
}

#[test]
fn constant_tokens_give_the_shift() {
    let (out, ln, _, beta, _) = adaln_case(false, true);
    assert!(ln.iter().all(|&v| v == 0.0));
    for row in out.chunks(8) {
        for (a, b) in row.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn adaln_matches_scalar_oracle() {
    let (out, _, oracle, _, _) = adaln_case(false, false);
    for (a, b) in out.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn timestep_embedding_is_continuous() {
    let cfg = ModelConfig::new(Task::Ir, 16, 64, 1, 4, 2, None);
    let p = init_params(&cfg, 0);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, false);
    let e = embed_timestep(&mut g, &b, &[0.0, 1.0, 0.37, 0.37 + 1e-6, 1.0 - 1e-6], 64).unwrap();
    let v = g.value(e).data().to_vec();
    let row = |i: usize| &v[i * 64..(i + 1) * 64];
    assert!(row(0).iter().zip(row(1)).any(|(a, b)| a != b));
    for (a, b) in [(2, 3), (1, 4)] {
        for (x, y) in row(a).iter().zip(row(b)) {
            assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn condition_is_the_sum_of_its_parts() {
    let cfg = ModelConfig::new(Task::Ir, 16, 8, 1, 2, 2, None);
    let p = random_params(&cfg, 2, 0.3);
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let cond = build_condition(&mut g, &b, &[WeatherClass::SNOW], &[0.6], &[3], 8).unwrap();
    let w = backbone::embed_weather(&mut g, &b, &[WeatherClass::SNOW], 8).unwrap();
    let t = embed_timestep(&mut g, &b, &[0.6], 8).unwrap();
    let s = backbone::embed_selector(&mut g, &b, &[3]).unwrap();
    let manual = add(&add(g.value(w).data(), g.value(t).data()), g.value(s).data());
    assert_eq!(g.value(cond).data(), manual.as_slice());

    let mut zero = p.clone();
    for name in p.names().filter(|n| n.starts_with("emb.")) {
        zero.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::<f64>::new();
    let b = zero.bind(&mut g, false);
    let cond = build_condition(&mut g, &b, &[WeatherClass::SNOW], &[0.6], &[3], 8).unwrap();
    assert!(g.value(cond).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_init_loss_is_the_target_energy() {
    let cfg = ModelConfig::new(Task::Ir, 16, 16, 1, 2, 2, None);
    let p = init_params(&cfg, 11);
    let z0 = random_tensor(&[2, 8, 8, 16], 1, -1.0, 1.0).cast::<f32>();
    let cond = random_tensor(&[2, 8, 8, 16], 2, -1.0, 1.0).cast::<f32>();
    let eps = random_tensor(&[2, 8, 8, 16], 3, -2.0, 2.0).cast::<f32>();
    let batch = FlowBatch {
        z0: z0.clone(),
        cond,
        weather: vec![WeatherClass::SUNNY, WeatherClass::RAINY],
        selector: vec![0, 2],
        image: None,
        maps: None,
        labels: None,
    };
    let loss = fm_loss_at(&cfg, &p, &batch, &[0.2, 0.7], &eps, 0.0).unwrap();
    let want: f64 = eps
        .data()
        .iter()
        .zip(z0.data())
        .map(|(&e, &z)| (e as f64 - z as f64).powi(2))
        .sum::<f64>()
        / z0.len() as f64;
    assert!((loss.total - want).abs() < 1e-5 * want, "{} vs {want}", loss.total);
}
