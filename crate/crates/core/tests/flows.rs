use dduq_core::flows::check::{fd_jacobian, gradient_check, jitter_parameters, log_abs_det, triangularity_violation};
use dduq_core::flows::{train_flow, FlowConfig, FlowModel, TrainConfig};
use dduq_core::nn::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_config(stages: usize) -> FlowConfig {
    FlowConfig { stages, layers: 2, gamma: 0.6, hidden: vec![8, 8], bins: 8 }
}

fn jittered(dim: usize, dim_c: usize, stages: usize, seed: u64) -> FlowModel {
    let mut m = if dim_c > 0 {
        FlowModel::conditional(dim, dim_c, small_config(stages), seed).unwrap()
    } else {
        FlowModel::unconditional(dim, small_config(stages), seed).unwrap()
    };
    jitter_parameters(&mut m, 0.3, seed + 100);
    m
}

fn normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Mat {
    Mat::from_vec(n, d, (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
}

#[test]
fn logdet_and_triangularity_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (stages, dim_c) in [(2, 2), (4, 1), (3, 0)] {
        let m = jittered(4, dim_c, stages, stages as u64);
        for _ in 0..20 {
            let a: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let c: Vec<f64> = (0..dim_c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let jac = fd_jacobian(&m, &a, &c, 1e-5).unwrap();
            let (_, ld) = m.forward(&Mat::row_vector(&a), &Mat::row_vector(&c)).unwrap();
            assert!((ld[0] - log_abs_det(&jac)).abs() < 1e-5, "R={stages}: {} vs {}", ld[0], log_abs_det(&jac));
            assert!(triangularity_violation(&m, &jac) < 1e-8);
        }
    }
}

#[test]
fn tape_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = jittered(3, 2, 2, 11);
    let a = normal_rows(&mut rng, 5, 3, 1.0);
    let c = normal_rows(&mut rng, 5, 2, 1.0);
    let err = gradient_check(&m, &a, &c, 1e-5).unwrap();
    assert!(err < 1e-5, "relative gradient error {err}");
}

#[test]
fn two_dimensional_density_integrates_to_one() {
    let m = jittered(2, 1, 2, 5);
    let n = 400;
    let h = 16.0 / n as f64;
    let pts: Vec<Vec<f64>> = (0..n)
        .flat_map(|i| (0..n).map(move |j| vec![-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h]))
        .collect();
    let ctx = Mat::from_rows(&vec![vec![0.4]; pts.len()]);
    let lp = m.log_density(&Mat::from_rows(&pts), &ctx).unwrap();
    let mass: f64 = lp.iter().map(|v| v.exp()).sum::<f64>() * h * h;
    assert!((0.98..=1.02).contains(&mass), "mass {mass}");
}

#[test]
fn identity_model_samples_are_destandardized_prior_draws() {
    let mut m = FlowModel::conditional(2, 1, small_config(2), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = normal_rows(&mut rng, 100, 2, 1.0);
    m.fit_standardization(&a, &normal_rows(&mut rng, 100, 1, 1.0));
    let shift = m.manifest().alpha_std.shift.clone();
    let s = m.sample(&[0.0], 20_000, 9).unwrap();
    let mean = s.col_sums();
    for j in 0..2 {
        let se = m.manifest().alpha_std.scale[j] / (20_000f64).sqrt();
        assert!((mean.get(0, j) / 20_000.0 - shift[j]).abs() < 4.0 * se);
    }
    let lp = m.log_density(&s, &Mat::zeros(20_000, 1)).unwrap();
    assert!(lp.iter().all(|v| v.is_finite()));
}

#[test]
fn unconditional_flow_ignores_context() {
    let m = jittered(3, 0, 3, 2);
    let a = Mat::from_rows(&[[0.1, -0.5, 2.0], [1.0, 0.2, -0.3]]);
    let l1 = m.log_density(&a, &Mat::zeros(2, 0)).unwrap();
    let l2 = m.log_density(&a, &Mat::filled(2, 5, 3.0)).unwrap();
    assert_eq!(l1, l2);
}

#[test]
fn checkpoint_round_trip_reproduces_density() {
    let m = jittered(4, 2, 2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.ckrw");
    m.save(&path).unwrap();
    let back = FlowModel::load(&path).unwrap();
    let a = Mat::from_rows(&[[0.1, -0.5, 2.0, 0.3]]);
    let c = Mat::from_rows(&[[0.7, -1.1]]);
    assert_eq!(m.log_density(&a, &c).unwrap(), back.log_density(&a, &c).unwrap());
    assert_eq!(m.manifest(), back.manifest());
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let mut m = jittered(2, 1, 2, 4);
    let before = m.to_checkpoint().unwrap();
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    train_flow(&mut m, &Mat::zeros(10, 2), &Mat::zeros(10, 1), &cfg).unwrap();
    assert_eq!(before, m.to_checkpoint().unwrap());
}

/// `α1 | c ~ N(c, 0.5²)`, `α2 | α1, c ~ N(0.8 α1 − 0.3 c, 0.3²)` with `c ~ N(0, 1)`.
fn conditional_gaussian(n: usize, seed: u64) -> (Mat, Mat, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(2 * n);
    let mut c = Vec::with_capacity(n);
    let mut ll = 0.0;
    for _ in 0..n {
        let cc: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let a1 = cc + 0.5 * e1;
        let a2 = 0.8 * a1 - 0.3 * cc + 0.3 * e2;
        a.extend([a1, a2]);
        c.push(cc);
        ll += -0.5 * (e1 * e1 + e2 * e2) - (2.0 * std::f64::consts::PI).ln() - (0.5f64 * 0.3).ln();
    }
    (Mat::from_vec(n, 2, a), Mat::from_vec(n, 1, c), ll / n as f64)
}

#[test]
fn training_recovers_a_conditional_gaussian() {
    let (a, c, _) = conditional_gaussian(4000, 1);
    let (at, ct, analytic) = conditional_gaussian(4000, 2);
    let mut m = FlowModel::conditional(2, 1, FlowConfig { hidden: vec![16, 16], ..Default::default() }, 3).unwrap();
    let cfg = TrainConfig { epochs: 60, batch_size: 128, lr: 3e-3, seed: 4, holdout: 0.1, ..Default::default() };
    let rep = train_flow(&mut m, &a, &c, &cfg).unwrap();
    assert!(rep.holdout_nll[rep.best_epoch - 1] < rep.initial_holdout_nll);
    let lp = m.log_density(&at, &ct).unwrap();
    let mean = lp.iter().sum::<f64>() / lp.len() as f64;
    assert!((mean - analytic).abs() < 0.1, "model {mean} vs analytic {analytic}");
}

#[test]
fn holdout_loss_decreases_over_early_epochs() {
    let mut curves = vec![0.0; 10];
    for seed in 0..5 {
        let (a, c, _) = conditional_gaussian(2000, 10 + seed);
        let mut m = FlowModel::conditional(2, 1, small_config(2), seed).unwrap();
        let cfg = TrainConfig { epochs: 10, batch_size: 100, lr: 1e-3, seed, holdout: 0.2, ..Default::default() };
        let rep = train_flow(&mut m, &a, &c, &cfg).unwrap();
        for (acc, v) in curves.iter_mut().zip(&rep.holdout_nll) {
            *acc += v / 5.0;
        }
    }
    assert!(curves.windows(2).all(|w| w[1] < w[0]), "{curves:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inverse_undoes_forward(seed in 0u64..1000, rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 5), 1..8)) {
        let m = jittered(3, 2, 2, seed);
        let a = Mat::from_rows(&rows.iter().map(|r| r[..3].to_vec()).collect::<Vec<_>>());
        let c = Mat::from_rows(&rows.iter().map(|r| r[3..].to_vec()).collect::<Vec<_>>());
        let (z, _) = m.forward(&a, &c).unwrap();
        let back = m.inverse(&z, &c).unwrap();
        prop_assert!(back.max_abs_diff(&a) < 1e-8);
    }

    #[test]
    fn coupling_scales_stay_in_band(seed in 0u64..1000, x in prop::collection::vec(-6.0f64..6.0, 4)) {
        let m = jittered(2, 2, 2, seed);
        let xs = Mat::from_rows(&[x[..2].to_vec()]);
        let cs = Mat::from_rows(&[x[2..].to_vec()]);
        for layer in m.layers() {
            if let dduq_core::flows::Layer::Coupling(cl) = layer {
                let (scale, _) = cl.scale_shift(m.params(), &xs, &cs);
                for &s in scale.as_slice() {
                    prop_assert!(s > 1.0 - cl.gamma && s < 1.0 + cl.gamma);
                }
            }
        }
    }
}
