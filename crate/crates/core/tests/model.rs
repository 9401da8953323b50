use amvdsn::data::MultiViewDataset;
use amvdsn::model::{
    consistent_attention, decode_view, encode_view, forward, global_attention, init_params, joint_loss,
    loss_and_gradients, pretrain_loss, self_representation, ModelConfig, ModelParams, ParamGroup, WeightReg,
};
use amvdsn::numerics::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(view_dims: Vec<usize>, hidden: usize, depth: usize, shortcut: bool, consistent: bool) -> ModelConfig {
    ModelConfig {
        view_dims,
        hidden_dim: hidden,
        encoder_depth: depth,
        lambda1: 1.5,
        lambda2: 0.7,
        lambda3: 0.05,
        weight_reg: WeightReg::L2,
        use_shortcut: shortcut,
        use_consistent_layer: consistent,
        seed: 11,
    }
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn dataset(dims: &[usize], n: usize, seed: u64) -> MultiViewDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = dims.iter().map(|&m| uniform(m, n, 0.0, 1.0, &mut rng)).collect();
    MultiViewDataset::new("toy", views, None).unwrap()
}

/// Every tensor, biases and `C` included, drawn away from zero so no ReLU or
/// absolute value sits on a kink.
fn random_params(cfg: &ModelConfig, n: usize, seed: u64) -> ModelParams {
    let mut p = init_params(cfg, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        let (r, c) = t.value.shape();
        let scale = if t.group == ParamGroup::Coefficient { 0.2 } else { 0.6 };
        t.value = uniform(r, c, -scale, scale, &mut rng);
    }
    p
}

fn col(m: &Matrix, c: usize) -> Vec<f64> {
    m.column(c)
}

fn affine_ref(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let k = w.cols() - 1;
    assert_eq!(x.len(), k);
    (0..w.rows())
        .map(|r| (0..k).map(|i| w.get(r, i) * x[i]).sum::<f64>() + w.get(r, k))
        .collect()
}

fn linear_ref(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|i| w.get(r, i) * x[i]).sum())
        .collect()
}

fn relu_vec(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.max(0.0)).collect()
}

fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn score_ref(q: &Matrix, k: &Matrix, h: &[f64]) -> f64 {
    affine_ref(k, h).iter().zip(q.data()).map(|(x, qi)| qi * x.tanh()).sum()
}

fn softmax_ref(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let t: f64 = e.iter().sum();
    e.iter().map(|x| x / t).collect()
}

struct RefOut {
    z: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    recon: Vec<Vec<Vec<f64>>>,
    loss: f64,
}

/// Sample-by-sample evaluation of the whole network and objective, written
/// with plain loops and independent of the taped implementation.
fn reference(p: &ModelParams, cfg: &ModelConfig, d: &MultiViewDataset) -> RefOut {
    let n = d.n_samples();
    let nv = d.num_views();
    let mh = cfg.hidden_dim;
    let get = |name: &str| p.get(name).unwrap();
    let mut z = Vec::with_capacity(n);
    for s in 0..n {
        let mut hs = Vec::new();
        for v in 0..nv {
            let x = col(d.view(v), s);
            let mut a = x.clone();
            for l in 0..cfg.encoder_depth {
                a = relu_vec(affine_ref(get(&format!("view{v}.encoder.{l}")), &a));
            }
            if cfg.use_shortcut {
                a = add_vec(&a, &linear_ref(get(&format!("view{v}.shortcut_enc")), &x));
            }
            hs.push(a);
        }
        let mut scores: Vec<f64> = (0..nv)
            .map(|v| score_ref(get("global_query"), get(&format!("view{v}.global_key")), &hs[v]))
            .collect();
        let mut sources = hs.clone();
        if cfg.use_consistent_layer {
            let hcv: Vec<Vec<f64>> = hs.iter().map(|h| affine_ref(get("consistent_weight"), h)).collect();
            let sc: Vec<f64> = (0..nv)
                .map(|v| {
                    score_ref(
                        get("consistent_query"),
                        get(&format!("view{v}.consistent_key")),
                        &hcv[v],
                    )
                })
                .collect();
            let ac = softmax_ref(&sc);
            let mut hc = vec![0.0; mh];
            for v in 0..nv {
                for i in 0..mh {
                    hc[i] += ac[v] * hcv[v][i];
                }
            }
            scores.push(score_ref(get("global_query"), get("consistent_source_key"), &hc));
            sources.push(hc);
        }
        let alpha = softmax_ref(&scores);
        let mut zn = vec![0.0; mh];
        for (a, src) in alpha.iter().zip(&sources) {
            for i in 0..mh {
                zn[i] += a * src[i];
            }
        }
        if cfg.use_shortcut {
            for h in &hs {
                for i in 0..mh {
                    zn[i] += h[i] / nv as f64;
                }
            }
        }
        z.push(zn);
    }
    let c = p.coefficients();
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mh)
                .map(|i| (0..n).filter(|&j| j != s).map(|j| c.get(j, s) * z[j][i]).sum())
                .collect()
        })
        .collect();
    let recon: Vec<Vec<Vec<f64>>> = (0..nv)
        .map(|v| {
            (0..n)
                .map(|s| {
                    let mut a = zs[s].clone();
                    for l in 0..cfg.encoder_depth {
                        a = relu_vec(affine_ref(get(&format!("view{v}.decoder.{l}")), &a));
                    }
                    if cfg.use_shortcut {
                        a = add_vec(&a, &linear_ref(get(&format!("view{v}.shortcut_dec")), &zs[s]));
                    }
                    a
                })
                .collect()
        })
        .collect();

    let mut reg_c = 0.0;
    for x in c.data() {
        reg_c += x * x;
    }
    let mut se = 0.0;
    for s in 0..n {
        for i in 0..mh {
            se += (z[s][i] - zs[s][i]).powi(2);
        }
    }
    let mut rec = 0.0;
    for v in 0..nv {
        for s in 0..n {
            for (m, xhat) in recon[v][s].iter().enumerate() {
                rec += (d.view(v).get(m, s) - xhat).powi(2);
            }
        }
    }
    let mut omega = 0.0;
    let mut add_block = |w: &Matrix| {
        for x in w.data() {
            omega += match cfg.weight_reg {
                WeightReg::L1 => x.abs(),
                WeightReg::L2 => x * x,
            };
        }
    };
    for v in 0..nv {
        for l in 0..cfg.encoder_depth {
            add_block(get(&format!("view{v}.encoder.{l}")));
            add_block(get(&format!("view{v}.decoder.{l}")));
        }
    }
    if cfg.use_consistent_layer {
        add_block(get("consistent_weight"));
    }
    let loss = reg_c + cfg.lambda1 / n as f64 * se + cfg.lambda2 * (rec / (n * nv) as f64 + cfg.lambda3 * omega);
    RefOut { z, zs, recon, loss }
}

fn assert_close_cols(m: &Matrix, cols: &[Vec<f64>], tol: f64) {
    for (s, c) in cols.iter().enumerate() {
        for (i, x) in c.iter().enumerate() {
            let y = m.get(i, s);
            assert!((x - y).abs() <= tol * (1.0 + x.abs()), "({i},{s}): {x} vs {y}");
        }
    }
}

fn zero_group(p: &mut ModelParams, keep: impl Fn(&str, ParamGroup) -> bool) {
    for t in p.tensors_mut() {
        if !keep(&t.name, t.group) {
            t.value = Matrix::zeros(t.value.rows(), t.value.cols());
        }
    }
}

#[test]
fn encoder_with_zero_weights_outputs_zero() {
    let cfg = config(vec![5, 7], 4, 2, false, true);
    let d = dataset(&[5, 7], 6, 1);
    let mut p = random_params(&cfg, 6, 2);
    zero_group(&mut p, |_, g| g != ParamGroup::Encoder);
    let h = encode_view(&p, &cfg, 1, d.view(1)).unwrap();
    assert!(h.data().iter().all(|&x| x == 0.0));
}

#[test]
fn encoder_shortcut_passthrough() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let d = dataset(&[5, 7], 6, 1);
    let mut p = random_params(&cfg, 6, 2);
    zero_group(&mut p, |_, g| g != ParamGroup::Encoder);
    let h = encode_view(&p, &cfg, 0, d.view(0)).unwrap();
    assert_eq!(h, p.get("view0.shortcut_enc").unwrap().matmul(d.view(0)).unwrap());
}

#[test]
fn single_layer_encoder_and_decoder_match_reference() {
    let cfg = config(vec![5], 3, 1, false, true);
    let d = dataset(&[5], 4, 1);
    let p = random_params(&cfg, 4, 2);
    let h = encode_view(&p, &cfg, 0, d.view(0)).unwrap();
    let w = p.get("view0.encoder.0").unwrap();
    let expect: Vec<Vec<f64>> = (0..4).map(|s| relu_vec(affine_ref(w, &col(d.view(0), s)))).collect();
    assert_close_cols(&h, &expect, 1e-15);

    let zs = uniform(3, 4, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let xhat = decode_view(&p, &cfg, 0, &zs).unwrap();
    let wd = p.get("view0.decoder.0").unwrap();
    let expect: Vec<Vec<f64>> = (0..4).map(|s| relu_vec(affine_ref(wd, &col(&zs, s)))).collect();
    assert_close_cols(&xhat, &expect, 1e-15);
}

#[test]
fn decoder_zero_and_shortcut_cases() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let mut p = random_params(&cfg, 6, 2);
    zero_group(&mut p, |_, g| g != ParamGroup::Decoder);
    let zs = uniform(4, 6, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let xhat = decode_view(&p, &cfg, 1, &zs).unwrap();
    assert_eq!(xhat, p.get("view1.shortcut_dec").unwrap().matmul(&zs).unwrap());

    let cfg = config(vec![5, 7], 4, 2, false, true);
    let mut p = random_params(&cfg, 6, 2);
    zero_group(&mut p, |_, g| g != ParamGroup::Decoder);
    assert!(decode_view(&p, &cfg, 1, &zs).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn encoder_rejects_wrong_input_rows() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let p = random_params(&cfg, 6, 2);
    assert!(encode_view(&p, &cfg, 0, &Matrix::zeros(7, 6)).is_err());
}

#[test]
fn single_view_consistent_weights_are_one() {
    let cfg = config(vec![5], 4, 1, true, true);
    let p = random_params(&cfg, 6, 3);
    let h = uniform(4, 6, -2.0, 2.0, &mut ChaCha8Rng::seed_from_u64(1));
    let out = consistent_attention(&p, &cfg, std::slice::from_ref(&h)).unwrap();
    assert!(out.weights.data().iter().all(|&w| w == 1.0));
    assert_eq!(out.fused, out.views[0]);
}

#[test]
fn zero_consistent_keys_give_uniform_weights() {
    let cfg = config(vec![5, 7, 3], 4, 1, true, true);
    let mut p = random_params(&cfg, 6, 3);
    zero_group(&mut p, |name, _| !name.ends_with("consistent_key"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h: Vec<Matrix> = (0..3).map(|_| uniform(4, 6, -2.0, 2.0, &mut rng)).collect();
    let out = consistent_attention(&p, &cfg, &h).unwrap();
    for &w in out.weights.data() {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(consistent_attention(&p, &cfg, &[]).is_err());
}

#[test]
fn consistent_attention_hand_computed() {
    let cfg = config(vec![2, 2], 2, 1, false, true);
    let mut p = ModelParams::zeros(&cfg, 1).unwrap();
    p.set(
        "consistent_weight",
        Matrix::from_rows(&[vec![0.5, -0.2, 0.1], vec![0.3, 0.4, -0.1]]).unwrap(),
    )
    .unwrap();
    p.set("consistent_query", Matrix::column_vector(&[0.7, -0.3])).unwrap();
    p.set(
        "view0.consistent_key",
        Matrix::from_rows(&[vec![0.2, 0.1, 0.0], vec![-0.4, 0.3, 0.05]]).unwrap(),
    )
    .unwrap();
    p.set(
        "view1.consistent_key",
        Matrix::from_rows(&[vec![-0.1, 0.6, 0.2], vec![0.25, 0.0, -0.3]]).unwrap(),
    )
    .unwrap();
    let h1 = Matrix::column_vector(&[1.0, 2.0]);
    let h2 = Matrix::column_vector(&[-0.5, 0.8]);
    let out = consistent_attention(&p, &cfg, &[h1, h2]).unwrap();

    // h_c^1 = (0.5 - 0.4 + 0.1, 0.3 + 0.8 - 0.1) = (0.2, 1.0)
    // h_c^2 = (-0.25 - 0.16 + 0.1, -0.15 + 0.32 - 0.1) = (-0.31, 0.07)
    let hc1 = [0.2, 1.0];
    let hc2 = [-0.31, 0.07];
    let a1 = 0.7 * (0.2 * 0.2 + 0.1 * 1.0f64).tanh() - 0.3 * (-0.4 * 0.2 + 0.3 * 1.0 + 0.05f64).tanh();
    let a2 = 0.7 * (-0.1 * -0.31 + 0.6 * 0.07 + 0.2f64).tanh() - 0.3 * (0.25 * -0.31 + 0.0 * 0.07 - 0.3f64).tanh();
    let w1 = a1.exp() / (a1.exp() + a2.exp());
    let w2 = 1.0 - w1;
    assert!((out.views[0].get(0, 0) - hc1[0]).abs() < 1e-12);
    assert!((out.views[1].get(1, 0) - hc2[1]).abs() < 1e-12);
    assert!((out.weights.get(0, 0) - w1).abs() < 1e-12);
    assert!((out.weights.get(1, 0) - w2).abs() < 1e-12);
    for i in 0..2 {
        assert!((out.fused.get(i, 0) - (w1 * hc1[i] + w2 * hc2[i])).abs() < 1e-12);
    }
}

#[test]
fn zero_global_keys_give_uniform_weights() {
    let cfg = config(vec![5, 7], 4, 1, false, true);
    let mut p = random_params(&cfg, 6, 3);
    zero_group(&mut p, |name, _| {
        !name.ends_with("global_key") && name != "consistent_source_key"
    });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h: Vec<Matrix> = (0..2).map(|_| uniform(4, 6, -2.0, 2.0, &mut rng)).collect();
    let hc = uniform(4, 6, -2.0, 2.0, &mut rng);
    let (w, _) = global_attention(&p, &cfg, &h, Some(&hc)).unwrap();
    assert_eq!(w.rows(), 3);
    for &x in w.data() {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(global_attention(&p, &cfg, &h, None).is_err());
}

#[test]
fn shortcut_adds_residual_mean() {
    let cfg = config(vec![5, 7], 4, 1, true, true);
    let mut p = random_params(&cfg, 6, 3);
    zero_group(&mut p, |name, _| {
        !name.ends_with("global_key") && name != "consistent_source_key"
    });
    let h = uniform(4, 6, -2.0, 2.0, &mut ChaCha8Rng::seed_from_u64(1));
    let (_, z) = global_attention(&p, &cfg, &[h.clone(), h.clone()], Some(&h)).unwrap();
    for (a, b) in z.data().iter().zip(h.data()) {
        assert!((a - 2.0 * b).abs() < 1e-14);
    }
}

#[test]
fn self_representation_examples() {
    let cfg = config(vec![3], 2, 1, false, false);
    let mut p = ModelParams::zeros(&cfg, 2).unwrap();
    let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    *p.coefficients_mut() = Matrix::identity(2).scale(5.0);
    assert!(self_representation(&p, &cfg, &z)
        .unwrap()
        .data()
        .iter()
        .all(|&x| x == 0.0));
    *p.coefficients_mut() = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let zs = self_representation(&p, &cfg, &z).unwrap();
    assert_eq!(zs, Matrix::from_rows(&[vec![2.0, 1.0], vec![4.0, 3.0]]).unwrap());
    assert!(self_representation(&p, &cfg, &Matrix::zeros(2, 3)).is_err());
}

#[test]
fn self_representation_matches_loop() {
    let cfg = config(vec![3], 4, 1, false, false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = ModelParams::zeros(&cfg, 9).unwrap();
    *p.coefficients_mut() = uniform(9, 9, -1.0, 1.0, &mut rng);
    let z = uniform(4, 9, -1.0, 1.0, &mut rng);
    let zs = self_representation(&p, &cfg, &z).unwrap();
    let c = p.coefficients();
    for n in 0..9 {
        for i in 0..4 {
            let expect: f64 = (0..9).filter(|&j| j != n).map(|j| c.get(j, n) * z.get(i, j)).sum();
            assert!((zs.get(i, n) - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn zero_coefficients_give_zero_self_expression() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let d = dataset(&[5, 7], 6, 1);
    let p = init_params(&cfg, 6).unwrap();
    let b = forward(&p, &cfg, &d).unwrap();
    assert!(b.zs.data().iter().all(|&x| x == 0.0));
    let terms = joint_loss(&p, &cfg, &d, &b).unwrap();
    assert_eq!(terms.selfexpr, cfg.lambda1 / 6.0 * b.z.frobenius_sq());
}

#[test]
fn forward_shapes_and_purity() {
    for (shortcut, consistent) in [(true, true), (false, false), (true, false), (false, true)] {
        let cfg = config(vec![5, 7], 4, 2, shortcut, consistent);
        let d = dataset(&[5, 7], 6, 1);
        let p = random_params(&cfg, 6, 2);
        let b = forward(&p, &cfg, &d).unwrap();
        for h in &b.h {
            assert_eq!(h.shape(), (4, 6));
        }
        assert_eq!(b.z.shape(), (4, 6));
        assert_eq!(b.zs.shape(), (4, 6));
        assert_eq!(b.recon[0].shape(), (5, 6));
        assert_eq!(b.recon[1].shape(), (7, 6));
        assert_eq!(b.hc.is_some(), consistent);
        assert_eq!(b.global_weights.rows(), if consistent { 3 } else { 2 });
        if let Some(hc) = &b.hc {
            assert_eq!(hc.shape(), (4, 6));
        }
        assert_eq!(b, forward(&p, &cfg, &d).unwrap());
    }
}

#[test]
fn forward_and_loss_match_reference() {
    for (shortcut, consistent, reg) in [
        (false, false, WeightReg::L2),
        (true, false, WeightReg::L1),
        (false, true, WeightReg::L1),
        (true, true, WeightReg::L2),
    ] {
        let mut cfg = config(vec![5, 7], 4, 2, shortcut, consistent);
        cfg.weight_reg = reg;
        let d = dataset(&[5, 7], 8, 4);
        let p = random_params(&cfg, 8, 9);
        let b = forward(&p, &cfg, &d).unwrap();
        let r = reference(&p, &cfg, &d);
        assert_close_cols(&b.z, &r.z, 1e-13);
        assert_close_cols(&b.zs, &r.zs, 1e-13);
        for v in 0..2 {
            assert_close_cols(&b.recon[v], &r.recon[v], 1e-13);
        }
        let terms = joint_loss(&p, &cfg, &d, &b).unwrap();
        assert!(
            (terms.total - r.loss).abs() <= 1e-12 * r.loss.abs().max(1.0),
            "{} vs {}",
            terms.total,
            r.loss
        );
        let parts = terms.selfexpr + terms.recon + terms.reg_c + terms.reg_w;
        assert!((parts - terms.total).abs() <= 1e-12 * terms.total);
        let (taped, _) = loss_and_gradients(&p, &cfg, &d, |_| true).unwrap();
        assert!((taped.total - terms.total).abs() <= 1e-12 * terms.total);
    }
}

#[test]
fn zero_lambda2_leaves_decoder_without_gradient() {
    let mut cfg = config(vec![5, 7], 4, 2, true, true);
    cfg.lambda2 = 0.0;
    let d = dataset(&[5, 7], 6, 1);
    let p = random_params(&cfg, 6, 2);
    let (terms, grads) = loss_and_gradients(&p, &cfg, &d, |_| true).unwrap();
    assert_eq!(terms.recon, 0.0);
    assert_eq!(terms.reg_w, 0.0);
    for (t, g) in p.tensors().iter().zip(&grads) {
        if t.group == ParamGroup::Decoder {
            assert!(g.data().iter().all(|&x| x == 0.0), "{}", t.name);
        }
    }
}

#[test]
fn coefficient_diagonal_gradient_comes_only_from_penalty() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let d = dataset(&[5, 7], 6, 1);
    let p = random_params(&cfg, 6, 2);
    let (_, grads) = loss_and_gradients(&p, &cfg, &d, |_| true).unwrap();
    let idx = p
        .tensors()
        .iter()
        .position(|t| t.group == ParamGroup::Coefficient)
        .unwrap();
    for n in 0..6 {
        assert_eq!(grads[idx].get(n, n), 2.0 * p.coefficients().get(n, n));
    }
}

fn permute_params(p: &ModelParams, perm: &[usize]) -> ModelParams {
    let mut q = p.clone();
    let c = p.coefficients();
    let n = perm.len();
    *q.coefficients_mut() = Matrix::from_fn(n, n, |i, j| c.get(perm[i], perm[j]));
    q
}

#[test]
fn permuting_samples_permutes_the_bundle() {
    let cfg = config(vec![5, 7], 4, 2, true, true);
    let d = dataset(&[5, 7], 8, 7);
    let p = random_params(&cfg, 8, 8);
    let perm = [3, 0, 7, 5, 1, 2, 6, 4];
    let dp = d.permute_samples(&perm).unwrap();
    let pp = permute_params(&p, &perm);
    let b = forward(&p, &cfg, &d).unwrap();
    let bp = forward(&pp, &cfg, &dp).unwrap();
    for (i, &src) in perm.iter().enumerate() {
        for r in 0..4 {
            assert!((bp.z.get(r, i) - b.z.get(r, src)).abs() < 1e-13);
            assert!((bp.zs.get(r, i) - b.zs.get(r, src)).abs() < 1e-13);
        }
    }
    let l = joint_loss(&p, &cfg, &d, &b).unwrap().total;
    let lp = joint_loss(&pp, &cfg, &dp, &bp).unwrap().total;
    assert!((l - lp).abs() < 1e-12 * l);
}

#[test]
fn pretrain_loss_examples() {
    let cfg = ModelConfig {
        lambda3: 0.0,
        ..config(vec![3], 3, 1, false, false)
    };
    let d = dataset(&[3], 5, 3);
    let mut p = ModelParams::zeros(&cfg, 5).unwrap();
    let n = 5.0;
    assert!((pretrain_loss(&p, &cfg, 0, &d).unwrap() - d.view(0).frobenius_sq() / n).abs() < 1e-15);
    let identity = Matrix::from_fn(3, 4, |r, c| if r == c { 1.0 } else { 0.0 });
    p.set("view0.encoder.0", identity.clone()).unwrap();
    p.set("view0.decoder.0", identity).unwrap();
    assert_eq!(pretrain_loss(&p, &cfg, 0, &d).unwrap(), 0.0);
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest per-entry relative error between analytic and central-difference
/// gradients across all tensors.
fn max_gradient_error(p: &ModelParams, cfg: &ModelConfig, d: &MultiViewDataset) -> f64 {
    let (_, grads) = loss_and_gradients(p, cfg, d, |_| true).unwrap();
    let eval = |q: &ModelParams| {
        let b = forward(q, cfg, d).unwrap();
        joint_loss(q, cfg, d, &b).unwrap().total
    };
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = q.tensors()[t].value.data()[i];
            q.tensors_mut()[t].value.data_mut()[i] = orig + step;
            let up = eval(&q);
            q.tensors_mut()[t].value.data_mut()[i] = orig - step;
            let down = eval(&q);
            q.tensors_mut()[t].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(g.data()[i], numeric));
        }
    }
    worst
}

#[test]
fn joint_gradient_matches_finite_differences() {
    for (shortcut, consistent, reg) in [(true, true, WeightReg::L1), (false, false, WeightReg::L2)] {
        let mut cfg = config(vec![5, 7], 4, 2, shortcut, consistent);
        cfg.weight_reg = reg;
        let d = dataset(&[5, 7], 8, 21);
        let p = random_params(&cfg, 8, 22);
        let err = max_gradient_error(&p, &cfg, &d);
        assert!(err <= 1e-4, "shortcut={shortcut} consistent={consistent}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_columns_are_probability_vectors(seed in any::<u64>(), views in 1usize..4, n in 1usize..7) {
        let dims: Vec<usize> = (0..views).map(|v| 2 + v).collect();
        let cfg = config(dims.clone(), 3, 1, seed % 2 == 0, true);
        let d = dataset(&dims, n, seed);
        let p = random_params(&cfg, n, seed.wrapping_add(1));
        let b = forward(&p, &cfg, &d).unwrap();
        for w in [b.consistent_weights.as_ref().unwrap(), &b.global_weights] {
            for c in 0..n {
                let column = w.column(c);
                prop_assert!((column.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                if w.rows() == 1 {
                    prop_assert!(column[0] == 1.0);
                } else {
                    prop_assert!(column.iter().all(|&x| x > 0.0 && x < 1.0));
                }
            }
        }
    }
}
