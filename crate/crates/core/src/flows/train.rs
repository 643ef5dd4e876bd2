//! Maximum-likelihood training with mini-batch Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::FlowModel;
use super::FlowError;
use crate::nn::{Adam, AdamConfig, Graph, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of the data held out for monitoring.
    pub holdout: f64,
    /// Return the parameters with the lowest held-out loss instead of the
    /// final iterate.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 256, epochs: 100, lr: 1e-3, seed: 0, holdout: 0.1, restore_best: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean negative log-likelihood on the held-out rows after each epoch.
    pub holdout_nll: Vec<f64>,
    /// Epoch (1-based) with the lowest held-out loss; 0 means the initial parameters.
    pub best_epoch: usize,
    pub initial_holdout_nll: f64,
}

/// Trains `model` on rows `(alpha[i], c[i])`.
///
/// The data are shuffled once to carve out the held-out split, then the
/// training rows are reshuffled every epoch. With `restore_best` the
/// parameters with the lowest held-out loss are restored at the end.
pub fn train_flow(model: &mut FlowModel, alpha: &Mat, c: &Mat, cfg: &TrainConfig) -> Result<TrainReport, FlowError> {
    train_flow_with(model, alpha, c, cfg, |_, _| {})
}

/// [`train_flow`] with a callback invoked after each epoch.
pub fn train_flow_with(
    model: &mut FlowModel,
    alpha: &Mat,
    c: &Mat,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &FlowModel),
) -> Result<TrainReport, FlowError> {
    if cfg.epochs == 0 {
        return Ok(TrainReport::default());
    }
    let n = alpha.rows();
    if n < cfg.batch_size.max(2) {
        return Err(FlowError::Config(format!("{n} training rows is fewer than the batch size {}", cfg.batch_size)));
    }
    let c = if model.is_conditional() { c.clone() } else { Mat::zeros(n, 0) };
    if model.is_conditional() && (c.rows() != n || c.cols() != model.dim_c()) {
        return Err(FlowError::Shape(format!("context must be {n}x{}", model.dim_c())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_hold = ((n as f64 * cfg.holdout).round() as usize).min(n - cfg.batch_size);
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let (a_tr, c_tr) = (alpha.select_rows(train_idx), c.select_rows(train_idx));
    let (a_ho, c_ho) = (alpha.select_rows(hold_idx), c.select_rows(hold_idx));

    if !model.is_standardized() {
        model.fit_standardization(&a_tr, &c_tr);
    }
    let (a_tr, c_tr) = model.standardized_inputs(&a_tr, &c_tr);

    let holdout_loss = |m: &FlowModel| -> Result<f64, FlowError> {
        if n_hold == 0 {
            return Ok(f64::NAN);
        }
        let lp = m.log_density(&a_ho, &c_ho)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    };

    let mut adam = Adam::new(model.params(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut report = TrainReport { initial_holdout_nll: holdout_loss(model)?, ..Default::default() };
    let mut best = (report.initial_holdout_nll, model.params().clone());
    let mut rows: Vec<usize> = (0..a_tr.rows()).collect();
    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut rng);
        for (batch, idx) in rows.chunks(cfg.batch_size).enumerate() {
            let grads = {
                let mut g = Graph::new(model.params());
                let lp = model.graph_log_density(&mut g, a_tr.select_rows(idx), c_tr.select_rows(idx));
                let mean = g.mean(lp);
                let loss = g.affine(mean, -1.0, 0.0);
                if !g.value(loss).get(0, 0).is_finite() {
                    return Err(FlowError::NonFiniteLoss { epoch, batch });
                }
                g.backward(loss)?
            };
            let store = model.params_mut();
            store.accumulate(grads);
            adam.step(store).map_err(|source| FlowError::Optimizer { epoch, batch, source })?;
        }
        let h = holdout_loss(model)?;
        report.holdout_nll.push(h);
        if n_hold == 0 || h < best.0 {
            best = (h, model.params().clone());
            report.best_epoch = epoch;
        }
        on_epoch(epoch, model);
    }
    if cfg.restore_best {
        *model.params_mut() = best.1;
    }
    Ok(report)
}
