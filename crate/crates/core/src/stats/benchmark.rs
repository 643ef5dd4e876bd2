//! Conditional versus joint flow estimation of a Gaussian mixture.
//!
//! The mixture variable is split as `ω = [α, c]` with `c` the trailing
//! coordinates. The conditional model learns `p(α | c)` and is combined with
//! the exact marginal of `c`; the joint model learns `p(ω)` directly. Both use
//! `R = dim α` stages.

use serde::{Deserialize, Serialize};

use super::{relative_kl_error, MixtureLaw, StatsError};
use crate::flows::{train_flow_with, FlowConfig, FlowModel, TrainConfig};
use crate::nn::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureBenchConfig {
    pub context_dim: usize,
    pub n_train: usize,
    pub n_validation: usize,
    /// Seeds the covariances of the mixture.
    pub law_seed: u64,
    /// Seeds training data, validation data and network initialization.
    pub seed: u64,
    /// `stages` is overridden by `dim α`.
    pub flow: FlowConfig,
    pub train: TrainConfig,
    /// Evaluate both errors after every epoch, not just at the end.
    pub track_epochs: bool,
}

impl Default for MixtureBenchConfig {
    fn default() -> Self {
        Self {
            context_dim: 8,
            n_train: 200_000,
            n_validation: 1_000_000,
            law_seed: 0,
            seed: 0,
            flow: FlowConfig { stages: 1, layers: 4, gamma: 0.6, hidden: vec![32, 32], bins: 32 },
            train: TrainConfig { epochs: 10, ..Default::default() },
            track_epochs: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEpoch {
    pub epoch: usize,
    pub conditional: f64,
    pub joint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBenchReport {
    pub context_dim: usize,
    pub n_train: usize,
    pub law_seed: u64,
    pub seed: u64,
    /// Per-epoch errors when tracking is enabled.
    pub curve: Vec<BenchEpoch>,
    /// Errors of the returned (best held-out) parameters.
    pub conditional: f64,
    pub joint: f64,
}

impl MixtureBenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,delta_conditional,delta_joint\n");
        for e in &self.curve {
            s.push_str(&format!("{},{:?},{:?}\n", e.epoch, e.conditional, e.joint));
        }
        s
    }
}

struct Validation {
    omega: Mat,
    alpha: Mat,
    c: Mat,
    log_ref: Vec<f64>,
    log_marginal: Vec<f64>,
}

impl Validation {
    fn conditional_error(&self, m: &FlowModel) -> Result<f64, StatsError> {
        let lc = m.log_density(&self.alpha, &self.c)?;
        let est: Vec<f64> = lc.iter().zip(&self.log_marginal).map(|(a, b)| a + b).collect();
        relative_kl_error(&self.log_ref, &est)
    }

    fn joint_error(&self, m: &FlowModel) -> Result<f64, StatsError> {
        let est = m.log_density(&self.omega, &Mat::zeros(self.omega.rows(), 0))?;
        relative_kl_error(&self.log_ref, &est)
    }
}

fn split(omega: &Mat, k: usize) -> (Mat, Mat) {
    let d = omega.cols();
    (omega.columns(0, d - k), omega.columns(d - k, d))
}

/// Trains both models on the 16-dimensional benchmark mixture.
pub fn mixture_benchmark(cfg: &MixtureBenchConfig) -> Result<MixtureBenchReport, StatsError> {
    let law = MixtureLaw::benchmark16(cfg.law_seed)?;
    let d = law.dim();
    let k = cfg.context_dim;
    if k == 0 || k >= d {
        return Err(StatsError::Shape(format!("context dimension {k} must lie in 1..{d}")));
    }
    let train = law.sample(cfg.n_train, cfg.seed.wrapping_mul(2).wrapping_add(1));
    let omega = law.sample(cfg.n_validation, cfg.seed.wrapping_mul(2).wrapping_add(2));
    let (alpha, c) = split(&omega, k);
    let marginal = law.marginal(&(d - k..d).collect::<Vec<_>>())?;
    let val =
        Validation { log_ref: law.log_pdf_rows(&omega), log_marginal: marginal.log_pdf_rows(&c), omega, alpha, c };

    let flow = FlowConfig { stages: d - k, ..cfg.flow.clone() };
    let mut cond = FlowModel::conditional(d - k, k, flow.clone(), cfg.seed)?;
    let mut joint = FlowModel::unconditional(d, flow, cfg.seed)?;
    let (a_tr, c_tr) = split(&train, k);

    let mut cond_curve = Vec::new();
    let mut joint_curve = Vec::new();
    let mut failure = None;
    train_flow_with(&mut cond, &a_tr, &c_tr, &cfg.train, |e, m| {
        if cfg.track_epochs && failure.is_none() {
            match val.conditional_error(m) {
                Ok(v) => cond_curve.push((e, v)),
                Err(err) => failure = Some(err),
            }
        }
    })?;
    train_flow_with(&mut joint, &train, &Mat::zeros(train.rows(), 0), &cfg.train, |e, m| {
        if cfg.track_epochs && failure.is_none() {
            match val.joint_error(m) {
                Ok(v) => joint_curve.push((e, v)),
                Err(err) => failure = Some(err),
            }
        }
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    let curve = cond_curve
        .into_iter()
        .zip(joint_curve)
        .map(|((epoch, conditional), (_, joint))| BenchEpoch { epoch, conditional, joint })
        .collect();
    Ok(MixtureBenchReport {
        context_dim: k,
        n_train: cfg.n_train,
        law_seed: cfg.law_seed,
        seed: cfg.seed,
        curve,
        conditional: val.conditional_error(&cond)?,
        joint: val.joint_error(&joint)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_reports_finite_errors() {
        let cfg = MixtureBenchConfig {
            context_dim: 14,
            n_train: 2000,
            n_validation: 2000,
            flow: FlowConfig { stages: 1, layers: 2, gamma: 0.6, hidden: vec![8], bins: 8 },
            train: TrainConfig { epochs: 2, ..Default::default() },
            track_epochs: true,
            ..Default::default()
        };
        let r = mixture_benchmark(&cfg).unwrap();
        assert_eq!(r.curve.len(), 2);
        assert!(r.conditional.is_finite() && r.joint.is_finite());
        assert!(r.to_csv().lines().count() == 3);
    }
}
