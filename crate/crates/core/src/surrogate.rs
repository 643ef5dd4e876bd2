//! Residual-network regression for interface coupling maps.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flows::Standardization;
use crate::nn::{
    apply_unary, Adam, AdamConfig, Checkpoint, Graph, LayerEntry, Linear, Mat, NnError, ParamStore, Unary, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub width: usize,
    /// Hidden layers inside residual blocks; must be even.
    pub hidden_layers: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub validation: f64,
    /// Standardized validation MSE above which the result is flagged.
    pub mse_ceiling: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            width: 64,
            hidden_layers: 10,
            batch_size: 256,
            max_epochs: 400,
            patience: 20,
            lr: 1e-3,
            validation: 0.1,
            mse_ceiling: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateManifest {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub x_std: Standardization,
    pub y_std: Standardization,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    /// Standardized MSE per epoch.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// 0 means the initial parameters were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub above_ceiling: bool,
}

/// `x → lift → blocks → head` with `h ← σ(h + W₂σ(W₁h))` per block.
#[derive(Clone, Debug)]
pub struct CouplingSurrogate {
    store: ParamStore,
    lift: Linear,
    blocks: Vec<(Linear, Linear)>,
    head: Linear,
    manifest: SurrogateManifest,
}

const ACT: Unary = Unary::LeakyRelu;
const EVAL_CHUNK: usize = 1024;

impl CouplingSurrogate {
    /// A fresh network; the zero head makes it predict the output mean.
    pub fn new(input_dim: usize, output_dim: usize, cfg: &SurrogateConfig) -> Result<Self, SurrogateError> {
        if cfg.hidden_layers == 0 || cfg.hidden_layers % 2 != 0 || cfg.width == 0 {
            return Err(SurrogateError::Config(format!(
                "need a positive width and an even number of hidden layers, got {} and {}",
                cfg.width, cfg.hidden_layers
            )));
        }
        if input_dim == 0 || output_dim == 0 {
            return Err(SurrogateError::Config("input and output dimensions must be positive".into()));
        }
        let manifest = SurrogateManifest {
            input_dim,
            output_dim,
            width: cfg.width,
            blocks: cfg.hidden_layers / 2,
            x_std: Standardization::identity(input_dim),
            y_std: Standardization::identity(output_dim),
        };
        Ok(Self::build(manifest, cfg.seed))
    }

    fn build(manifest: SurrogateManifest, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = manifest.width;
        let lift = Linear::new(&mut store, &mut rng, "lift", manifest.input_dim, w);
        let blocks = (0..manifest.blocks)
            .map(|k| {
                (
                    Linear::new(&mut store, &mut rng, &format!("block{k}.0"), w, w),
                    Linear::new(&mut store, &mut rng, &format!("block{k}.1"), w, w),
                )
            })
            .collect();
        let head = Linear::zeros(&mut store, "head", w, manifest.output_dim);
        Self { store, lift, blocks, head, manifest }
    }

    pub fn input_dim(&self) -> usize {
        self.manifest.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.manifest.output_dim
    }

    pub fn manifest(&self) -> &SurrogateManifest {
        &self.manifest
    }

    fn linears(&self) -> Vec<Linear> {
        let mut v = vec![self.lift];
        for (a, b) in &self.blocks {
            v.push(*a);
            v.push(*b);
        }
        v.push(self.head);
        v
    }

    fn graph_forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let l = self.lift.forward(g, x);
        let mut h = g.unary(l, ACT);
        for (a, b) in &self.blocks {
            let t = a.forward(g, h);
            let t = g.unary(t, ACT);
            let t = b.forward(g, t);
            let s = g.add(h, t);
            h = g.unary(s, ACT);
        }
        self.head.forward(g, h)
    }

    fn apply_standardized(&self, x: &Mat) -> Mat {
        let mut h = apply_unary(&self.lift.apply(&self.store, x), ACT);
        for (a, b) in &self.blocks {
            let t = b.apply(&self.store, &apply_unary(&a.apply(&self.store, &h), ACT));
            h = apply_unary(&h.zip_map(&t, |p, q| p + q), ACT);
        }
        self.head.apply(&self.store, &h)
    }

    /// Predictions for raw inputs, one row per sample.
    pub fn eval(&self, x: &Mat) -> Result<Mat, SurrogateError> {
        if x.cols() != self.input_dim() {
            return Err(SurrogateError::Shape(format!("expected {} inputs, got {}", self.input_dim(), x.cols())));
        }
        let xs = self.manifest.x_std.apply(x);
        let mut y = if xs.rows() <= EVAL_CHUNK {
            self.apply_standardized(&xs)
        } else {
            let idx: Vec<usize> = (0..xs.rows()).collect();
            let parts: Vec<Mat> =
                idx.par_chunks(EVAL_CHUNK).map(|rows| self.apply_standardized(&xs.select_rows(rows))).collect();
            Mat::vcat(&parts.iter().collect::<Vec<_>>())
        };
        self.manifest.y_std.unapply(&mut y);
        Ok(y)
    }

    pub fn eval_one(&self, x: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        Ok(self.eval(&Mat::row_vector(x))?.into_vec())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, SurrogateError> {
        let linears = self.linears();
        let layers = linears
            .iter()
            .map(|l| LayerEntry { kind: "dense".into(), shapes: vec![vec![l.fan_in, l.fan_out], vec![1, l.fan_out]] })
            .collect();
        let tensors =
            linears.iter().flat_map(|l| [self.store.value(l.w).clone(), self.store.value(l.b).clone()]).collect();
        let ext = serde_json::to_vec(&self.manifest).map_err(|e| SurrogateError::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { layers, tensors, ext })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SurrogateError> {
        let manifest: SurrogateManifest =
            serde_json::from_slice(&ck.ext).map_err(|e| SurrogateError::Checkpoint(e.to_string()))?;
        let mut model = Self::build(manifest, 0);
        let ids: Vec<_> = model.linears().iter().flat_map(|l| [l.w, l.b]).collect();
        if ids.len() != ck.tensors.len() {
            return Err(SurrogateError::Checkpoint(format!(
                "expected {} tensors, found {}",
                ids.len(),
                ck.tensors.len()
            )));
        }
        for (id, t) in ids.into_iter().zip(&ck.tensors) {
            let p = model.store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(SurrogateError::Checkpoint(format!("tensor {} has shape {:?}", p.name, t.shape())));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn mse(pred: &Mat, target: &Mat) -> f64 {
    let s: f64 = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum();
    s / pred.len().max(1) as f64
}

/// Fits a surrogate to rows `x[i] → y[i]` by mini-batch Adam on the
/// standardized mean squared error, with early stopping on a validation split.
/// Returns the parameters with the lowest validation error.
pub fn train_surrogate(
    x: &Mat,
    y: &Mat,
    cfg: &SurrogateConfig,
) -> Result<(CouplingSurrogate, SurrogateReport), SurrogateError> {
    let n = x.rows();
    if y.rows() != n {
        return Err(SurrogateError::Shape(format!("{n} inputs but {} targets", y.rows())));
    }
    if !(cfg.validation > 0.0 && cfg.validation < 1.0) || cfg.batch_size == 0 {
        return Err(SurrogateError::Config(
            "validation fraction must lie in (0, 1) and the batch size be positive".into(),
        ));
    }
    let n_val = (n as f64 * cfg.validation).round() as usize;
    if n_val == 0 || n - n_val < 2 {
        return Err(SurrogateError::Config(format!("{n} rows are too few to split")));
    }
    let mut model = CouplingSurrogate::new(x.cols(), y.cols(), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (val_idx, tr_idx) = order.split_at(n_val);
    let (x_tr, y_tr) = (x.select_rows(tr_idx), y.select_rows(tr_idx));
    model.manifest.x_std = Standardization::fit(&x_tr);
    model.manifest.y_std = Standardization::fit(&y_tr);
    let (x_tr, y_tr) = (model.manifest.x_std.apply(&x_tr), model.manifest.y_std.apply(&y_tr));
    let x_val = model.manifest.x_std.apply(&x.select_rows(val_idx));
    let y_val = model.manifest.y_std.apply(&y.select_rows(val_idx));

    let mut adam = Adam::new(&model.store, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut report = SurrogateReport::default();
    let mut best = (mse(&model.apply_standardized(&x_val), &y_val), model.store.clone());
    let mut since_best = 0;
    let mut rows: Vec<usize> = (0..x_tr.rows()).collect();
    for epoch in 1..=cfg.max_epochs {
        rows.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in rows.chunks(cfg.batch_size).enumerate() {
            let grads = {
                let mut g = Graph::new(&model.store);
                let xb = g.input(x_tr.select_rows(idx));
                let yb = g.input(y_tr.select_rows(idx));
                let pred = model.graph_forward(&mut g, xb);
                let diff = g.sub(pred, yb);
                let sq = g.mul(diff, diff);
                let loss = g.mean(sq);
                let l = g.value(loss).get(0, 0);
                if !l.is_finite() {
                    return Err(SurrogateError::NonFiniteLoss { epoch, batch });
                }
                total += l * idx.len() as f64;
                g.backward(loss)?
            };
            model.store.accumulate(grads);
            adam.step(&mut model.store)?;
        }
        report.train_mse.push(total / rows.len() as f64);
        let v = mse(&model.apply_standardized(&x_val), &y_val);
        report.val_mse.push(v);
        if v < best.0 {
            best = (v, model.store.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.store = best.1;
    report.best_val_mse = best.0;
    report.above_ceiling = best.0 > cfg.mse_ceiling;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn inputs(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn constant_target_is_fit_exactly() {
        let x = inputs(1000, 3, 1);
        let y = Mat::filled(1000, 2, 4.5);
        let cfg = SurrogateConfig { max_epochs: 5, ..Default::default() };
        let (s, r) = train_surrogate(&x, &y, &cfg).unwrap();
        assert!(r.best_val_mse < 1e-8);
        let p = s.eval(&x).unwrap();
        assert!(p.as_slice().iter().all(|v| (v - 4.5).abs() < 1e-6));
    }

    #[test]
    fn standardization_round_trip() {
        let x = inputs(50, 4, 2).map(|v| 3.0 * v + 7.0);
        let st = Standardization::fit(&x);
        let mut back = st.apply(&x);
        st.unapply(&mut back);
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn batch_equals_pointwise_and_is_repeatable() {
        let mut s = CouplingSurrogate::new(3, 2, &SurrogateConfig { seed: 4, ..Default::default() }).unwrap();
        // Give the head nonzero weights so the outputs depend on the input.
        let head = s.head;
        s.store.get_mut(head.w).value = inputs(64, 2, 9);
        let x = inputs(2000, 3, 3);
        let batch = s.eval(&x).unwrap();
        assert_eq!(batch, s.eval(&x).unwrap());
        for r in [0, 999, 1500] {
            let one = s.eval_one(x.row(r)).unwrap();
            for (a, b) in one.iter().zip(batch.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let x = inputs(400, 2, 5);
        let y = Mat::from_vec(400, 1, (0..400).map(|i| x.get(i, 0) - 2.0 * x.get(i, 1)).collect());
        let (s, _) = train_surrogate(&x, &y, &SurrogateConfig { max_epochs: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        s.to_checkpoint().unwrap().write_to(&mut buf).unwrap();
        let back = CouplingSurrogate::from_checkpoint(&Checkpoint::read_from(&buf[..]).unwrap()).unwrap();
        assert_eq!(back.eval(&x).unwrap(), s.eval(&x).unwrap());
    }

    #[test]
    fn odd_depth_is_rejected() {
        let cfg = SurrogateConfig { hidden_layers: 3, ..Default::default() };
        assert!(matches!(CouplingSurrogate::new(2, 2, &cfg), Err(SurrogateError::Config(_))));
    }
}
