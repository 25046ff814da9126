//! Checks the engine-built transformer against a direct loop-based evaluation.

mod common;

use common::{gaussian, rng};
use rand::Rng;
use villani_core::model::{Batch, ModelConfig, ParamVector, Transformer};

const EPS: f64 = 1e-5;

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let s = (var + EPS).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| g * (v - mu) / s + b).collect()
}

// y[j] = Σ_i x[i] w[i, j] + b[j]
fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = b.len();
    let mut y = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            y[j] += xi * w[i * cols + j];
        }
    }
    y
}

/// Mean next-token negative log-likelihood, evaluated token by token.
fn reference_loss(cfg: &ModelConfig, p: &ParamVector, batch: &Batch) -> f64 {
    let (d, h) = (cfg.d_model, cfg.heads);
    let dh = d / h;
    let get = |l: Option<usize>, n: &str| p.tensor(l, n).unwrap();
    let mut total = 0.0;
    for s in 0..batch.sequences {
        let t = batch.seq_len;
        let toks = &batch.inputs[s * t..(s + 1) * t];
        let mut xs: Vec<Vec<f64>> = toks
            .iter()
            .enumerate()
            .map(|(pos, &tok)| {
                let e = &get(None, "tok_emb")[tok * d..(tok + 1) * d];
                let pe = &get(None, "pos_emb")[pos * d..(pos + 1) * d];
                e.iter().zip(pe).map(|(a, b)| a + b).collect()
            })
            .collect();
        for l in 0..cfg.layers {
            let l = Some(l);
            let a: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| layer_norm(x, get(l, "ln1.gain"), get(l, "ln1.bias")))
                .collect();
            let q: Vec<Vec<f64>> = a.iter().map(|x| affine(x, get(l, "attn.wq"), get(l, "attn.bq"))).collect();
            let k: Vec<Vec<f64>> = a.iter().map(|x| affine(x, get(l, "attn.wk"), get(l, "attn.bk"))).collect();
            let v: Vec<Vec<f64>> = a.iter().map(|x| affine(x, get(l, "attn.wv"), get(l, "attn.bv"))).collect();
            let mut ctx = vec![vec![0.0; d]; t];
            for head in 0..h {
                let r = head * dh..(head + 1) * dh;
                for i in 0..t {
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                                / (dh as f64).sqrt()
                        })
                        .collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = w.iter().sum();
                    for j in 0..=i {
                        for c in r.clone() {
                            ctx[i][c] += w[j] / z * v[j][c];
                        }
                    }
                }
            }
            for i in 0..t {
                let o = affine(&ctx[i], get(l, "attn.wo"), get(l, "attn.bo"));
                xs[i].iter_mut().zip(&o).for_each(|(x, o)| *x += o);
                let m = layer_norm(&xs[i], get(l, "ln2.gain"), get(l, "ln2.bias"));
                let hdn: Vec<f64> = affine(&m, get(l, "mlp.w1"), get(l, "mlp.b1"))
                    .into_iter()
                    .map(erf_gelu)
                    .collect();
                let f = affine(&hdn, get(l, "mlp.w2"), get(l, "mlp.b2"));
                xs[i].iter_mut().zip(&f).for_each(|(x, f)| *x += f);
            }
        }
        for i in 0..t {
            let n = layer_norm(&xs[i], &vec![1.0; d], &vec![0.0; d]);
            let z = affine(&n, get(None, "unembed.w"), get(None, "unembed.b"));
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[batch.targets[s * t + i]];
        }
    }
    total / batch.predictions() as f64
}

#[test]
fn matches_loop_reference_on_random_models() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let heads = r.random_range(1..=3);
        let cfg = ModelConfig {
            layers: r.random_range(1..=3),
            d_model: heads * r.random_range(1..=4),
            heads,
            d_ff: r.random_range(1..=9),
            vocab: r.random_range(2..=11),
            context: r.random_range(1..=6),
            ..Default::default()
        };
        let model = Transformer::new(cfg.clone()).unwrap();
        let t = r.random_range(1..=cfg.context);
        let windows: Vec<Vec<usize>> = (0..r.random_range(1..=3))
            .map(|_| (0..=t).map(|_| r.random_range(0..cfg.vocab)).collect())
            .collect();
        let batch = Batch::from_windows(&windows).unwrap();
        let theta = gaussian(model.dim(), 0.8, &mut r);
        let p = ParamVector::from_vec(model.layout().clone(), theta.clone()).unwrap();
        let want = reference_loss(&cfg, &p, &batch);
        let got = model.data_loss(&theta, &batch).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn single_token_width_two_by_hand() {
    // One layer, d_model = 2, one head, one input token: attention weight is 1,
    // and a 2-vector LayerNorm reduces to ±δ/sqrt(δ² + ε) with δ = (a − b)/2.
    let cfg = ModelConfig {
        layers: 1,
        d_model: 2,
        heads: 1,
        d_ff: 2,
        vocab: 2,
        context: 1,
        ..Default::default()
    };
    let model = Transformer::new(cfg.clone()).unwrap();
    let mut r = rng(99);
    let theta = gaussian(model.dim(), 0.7, &mut r);
    let p = ParamVector::from_vec(model.layout().clone(), theta.clone()).unwrap();
    let batch = Batch::from_windows(&[vec![1, 0]]).unwrap();

    let get = |l: Option<usize>, n: &str| p.tensor(l, n).unwrap().to_vec();
    let l0 = Some(0);
    let ln2 = |x: [f64; 2], g: &[f64], b: &[f64]| {
        let delta = (x[0] - x[1]) / 2.0;
        let s = (delta * delta + EPS).sqrt();
        [g[0] * delta / s + b[0], -g[1] * delta / s + b[1]]
    };
    let lin = |x: [f64; 2], w: &[f64], b: &[f64]| {
        [x[0] * w[0] + x[1] * w[2] + b[0], x[0] * w[1] + x[1] * w[3] + b[1]]
    };
    let (te, pe) = (get(None, "tok_emb"), get(None, "pos_emb"));
    let mut x = [te[2] + pe[0], te[3] + pe[1]];
    let a = ln2(x, &get(l0, "ln1.gain"), &get(l0, "ln1.bias"));
    let v = lin(a, &get(l0, "attn.wv"), &get(l0, "attn.bv"));
    let o = lin(v, &get(l0, "attn.wo"), &get(l0, "attn.bo"));
    x = [x[0] + o[0], x[1] + o[1]];
    let m = ln2(x, &get(l0, "ln2.gain"), &get(l0, "ln2.bias"));
    let hdn = lin(m, &get(l0, "mlp.w1"), &get(l0, "mlp.b1")).map(erf_gelu);
    let f = lin(hdn, &get(l0, "mlp.w2"), &get(l0, "mlp.b2"));
    x = [x[0] + f[0], x[1] + f[1]];
    let n = ln2(x, &[1.0, 1.0], &[0.0, 0.0]);
    let z = lin(n, &get(None, "unembed.w"), &get(None, "unembed.b"));
    // target 0
    let want = (z[0].exp() + z[1].exp()).ln() - z[0];
    let got = model.data_loss(&theta, &batch).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn uniform_logits_give_log_vocab() {
    let cfg = ModelConfig {
        vocab: 4,
        ..ModelConfig::tiny(1, 4, 2, 4, 4)
    };
    let model = Transformer::new(cfg).unwrap();
    let mut r = rng(5);
    let mut theta = gaussian(model.dim(), 0.5, &mut r);
    // zero unembedding ⇒ all logits equal
    let e = model.layout().find(None, "unembed.w").unwrap().range.clone();
    let b = model.layout().find(None, "unembed.b").unwrap().range.clone();
    theta[e].fill(0.0);
    theta[b].fill(0.3);
    let batch = Batch::from_windows(&[vec![0, 1, 2, 3, 0]]).unwrap();
    assert!((model.data_loss(&theta, &batch).unwrap() - 4f64.ln()).abs() < 1e-14);
}

#[test]
fn data_loss_nonnegative_on_random_points() {
    let model = Transformer::new(ModelConfig::tiny(1, 4, 2, 6, 4)).unwrap();
    let batch = Batch::from_windows(&[vec![0, 1, 2, 3, 4], vec![5, 4, 3, 2, 1]]).unwrap();
    let mut r = rng(11);
    for i in 0..1000 {
        let scale = 10f64.powf(-2.0 + 4.0 * (i as f64) / 1000.0);
        let theta = gaussian(model.dim(), scale, &mut r);
        assert!(model.data_loss(&theta, &batch).unwrap() >= 0.0);
    }
}
