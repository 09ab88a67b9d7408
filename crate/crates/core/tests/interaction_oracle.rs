mod common;

use common::*;
use ndarray::{array, Array2};
use qder::interaction::{
    attend, build_features, mean_pool, AblationConfig, BilinearModel, HeadKind, InteractionOp,
    OpSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn attend_matches_softmax_oracle() {
    let q = array![[1.0, 0.0], [0.0, 1.0]];
    let d = array![[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
    let got = attend(q.view(), d.view()).unwrap();
    let (w, att) = naive_attend(&to_mat(&q), &to_mat(&d));
    for i in 0..2 {
        for j in 0..3 {
            assert!((got.weights[[i, j]] - w[i][j]).abs() < 1e-9);
        }
        for k in 0..2 {
            assert!((got.attended[[i, k]] - att[i][k]).abs() < 1e-9);
        }
    }
    // Row 0: logits (2, 0, 1).
    let z = 1.0 + (-2f64).exp() + (-1f64).exp();
    assert!((got.weights[[0, 0]] - 1.0 / z).abs() < 1e-12);
}

#[test]
fn mean_pool_matches_naive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_mat(&mut rng, 3, 2, 5.0);
    let got = mean_pool(from_mat(&m, 2).view()).unwrap();
    for k in 0..2 {
        let expected = (m[0][k] + m[1][k] + m[2][k]) / 3.0;
        assert!((got[k] - expected).abs() < 1e-12);
    }
}

#[test]
fn build_features_composes_per_op_oracles() {
    let pair = Pair {
        q_tok: vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.5]],
        d_tok: vec![
            vec![1.0, 1.0, 0.0],
            vec![-0.5, 2.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ],
        q_ent: vec![vec![1.0, -2.0]],
        d_ent: vec![vec![0.5, 0.5], vec![-1.0, 1.0]],
        dt: 3,
        de: 2,
        s: 1.7,
    };
    let (q, d) = pair.records();
    let cfg = AblationConfig::default();
    let got = build_features(&q, &d, pair.s, &cfg, 3, 2).unwrap().concat();
    let expected = pair.features(&[Op::Mul, Op::Add], true, true, true);
    assert_eq!(got.len(), expected.len());
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn forward_matches_end_to_end_oracle_on_toy_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pair = Pair::random(&mut rng, (3, 5, 4), (2, 3, 2));
    let (q, d) = pair.records();
    for (ops, naive_ops) in [
        (
            vec![InteractionOp::Multiply, InteractionOp::Add],
            vec![Op::Mul, Op::Add],
        ),
        (InteractionOp::ALL.to_vec(), vec![Op::Mul, Op::Add, Op::Sub]),
        (vec![], vec![]),
    ] {
        let cfg = AblationConfig {
            ops: OpSet::of(&ops),
            ..AblationConfig::default()
        };
        let model = BilinearModel::init(4, 2, cfg, 99).unwrap();
        let m = to_mat(model.matrix().unwrap());
        let h = pair.features(&naive_ops, true, true, true);
        let expected = naive_bilinear(&h, &m);
        let got = model.forward(&q, &d, pair.s).unwrap();
        assert!(
            (got.raw - expected).abs() < 1e-9,
            "{ops:?}: {} vs {expected}",
            got.raw
        );
        assert!((got.prob - 1.0 / (1.0 + (-expected).exp())).abs() < 1e-12);
    }
}

fn fd_check_bilinear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = Pair::random(&mut rng, (3, 5, 4), (2, 3, 2));
    let (q, d) = pair.records();
    let cfg = AblationConfig::default();
    let model = BilinearModel::init(4, 2, cfg, seed).unwrap();
    let label = (seed % 2) as f64;
    let grad = model.backward(&q, &d, pair.s, label).unwrap();
    let grad = grad.matrix().unwrap();
    let h = pair.features(&[Op::Mul, Op::Add], true, true, true);
    let m0 = to_mat(model.matrix().unwrap());
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..m0.len() {
        for j in 0..m0.len() {
            let mut plus = m0.clone();
            plus[i][j] += eps;
            let mut minus = m0.clone();
            minus[i][j] -= eps;
            let numeric = (naive_bce_logit(naive_bilinear(&h, &plus), label)
                - naive_bce_logit(naive_bilinear(&h, &minus), label))
                / (2.0 * eps);
            worst = worst.max(rel_err(grad[[i, j]], numeric));
        }
    }
    worst
}

#[test]
fn bilinear_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let worst = fd_check_bilinear(seed);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}

/// Finite differences over every parameter through the library's own
/// forward pass; covers the linear head and the adapter's backprop path.
fn fd_check_flat(model: &BilinearModel, pair: &Pair, label: f64) -> f64 {
    let (q, d) = pair.records();
    let analytic = model.backward(&q, &d, pair.s, label).unwrap().to_flat();
    let base = model.to_flat();
    let loss = |params: &[f64]| {
        let mut m = model.clone();
        m.set_flat(params).unwrap();
        naive_bce_logit(m.forward(&q, &d, pair.s).unwrap().raw, label)
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

#[test]
fn linear_head_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pair = Pair::random(&mut rng, (3, 4, 3), (2, 2, 2));
    let model = BilinearModel::init_with_head(3, 2, AblationConfig::default(), HeadKind::Linear, 1)
        .unwrap();
    assert!(fd_check_flat(&model, &pair, 1.0) < 1e-4);
}

#[test]
fn adapter_gradient_matches_finite_differences() {
    for (seed, ops) in [
        (1u64, vec![InteractionOp::Multiply, InteractionOp::Add]),
        (2, InteractionOp::ALL.to_vec()),
        (3, vec![]),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = Pair::random(&mut rng, (3, 4, 3), (2, 3, 2));
        let cfg = AblationConfig {
            ops: OpSet::of(&ops),
            ..AblationConfig::default()
        };
        let mut model = BilinearModel::init(3, 2, cfg, seed).unwrap().with_adapter();
        // Move the adapter off the identity so every term is exercised.
        let mut flat = model.to_flat();
        let head = model.d() * model.d();
        for (i, p) in flat[head..].iter_mut().enumerate() {
            *p += 0.05 * ((i * 7 % 11) as f64 - 5.0) / 5.0;
        }
        model.set_flat(&flat).unwrap();
        for label in [0.0, 1.0] {
            let worst = fd_check_flat(&model, &pair, label);
            assert!(worst < 1e-4, "ops {ops:?} label {label}: {worst}");
        }
    }
}

#[test]
fn adapter_gradient_skips_empty_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pair = Pair::random(&mut rng, (2, 3, 3), (2, 0, 2));
    pair.d_ent.clear();
    let model = BilinearModel::init(3, 2, AblationConfig::default(), 8)
        .unwrap()
        .with_adapter();
    let (q, d) = pair.records();
    let g = model.backward(&q, &d, pair.s, 1.0).unwrap();
    let adapter = g.adapter.unwrap();
    assert!(adapter.entity.weight.iter().all(|&x| x == 0.0));
    assert!(adapter.text.weight.iter().any(|&x| x != 0.0));
    assert!(fd_check_flat(&model, &pair, 1.0) < 1e-4);
}

#[test]
fn from_matrix_rejects_wrong_shape() {
    assert!(
        BilinearModel::from_matrix(2, 1, AblationConfig::default(), Array2::zeros((5, 5))).is_err()
    );
}
