//! The triangular flow model and its density.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{CouplingLayer, Layer, ScaleBias};
use super::FlowError;
use crate::nn::{Checkpoint, Graph, LayerEntry, Mat, ParamStore, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Number of blocks `R`; each block gets one group of couplings.
    pub stages: usize,
    /// Couplings per group `L`.
    pub layers: usize,
    pub gamma: f64,
    /// Hidden widths of every conditioner trunk.
    pub hidden: Vec<usize>,
    /// Bins of the terminal monotone map.
    pub bins: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { stages: 2, layers: 4, gamma: 0.6, hidden: vec![32, 32], bins: 32 }
    }
}

/// Frozen per-column affine normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self { shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Column means and standard deviations; constant columns get scale 1.
    pub fn fit(data: &Mat) -> Self {
        let n = data.rows().max(1) as f64;
        let shift: Vec<f64> = data.col_sums().as_slice().iter().map(|s| s / n).collect();
        let mut var = vec![0.0; data.cols()];
        for i in 0..data.rows() {
            for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&shift) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { shift, scale }
    }

    pub fn apply(&self, data: &Mat) -> Mat {
        let mut out = data.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn unapply(&self, data: &mut Mat) {
        for i in 0..data.rows() {
            for ((v, m), s) in data.row_mut(i).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
    }

    /// `-Σ log scale`, the log-determinant of [`Standardization::apply`].
    pub fn logdet(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Metadata stored alongside the parameters in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowManifest {
    pub dim: usize,
    pub dim_c: usize,
    pub conditional: bool,
    pub config: FlowConfig,
    pub blocks: Vec<usize>,
    pub alpha_std: Standardization,
    pub c_std: Standardization,
    pub standardized: bool,
}

/// Conditional (or, with no context, unconditional) Knothe–Rosenblatt flow.
///
/// Coordinates are split into `R` contiguous blocks. The output block `k`
/// depends only on input blocks `1..=k` and on the context, so the Jacobian
/// is block lower-triangular.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub(crate) store: ParamStore,
    pub(crate) layers: Vec<Layer>,
    pub(crate) manifest: FlowManifest,
}

/// Block sizes: the trailing `R - 1` blocks hold `⌈d/R⌉` coordinates and the
/// first block the rest, falling back to a near-even split when that would
/// leave the first block empty.
pub fn block_sizes(dim: usize, stages: usize) -> Vec<usize> {
    let m = dim.div_ceil(stages);
    if dim > (stages - 1) * m {
        let mut v = vec![dim - (stages - 1) * m];
        v.extend(std::iter::repeat_n(m, stages - 1));
        v
    } else {
        let base = dim / stages;
        let extra = dim % stages;
        (0..stages).map(|i| base + usize::from(i >= stages - extra)).collect()
    }
}

impl FlowModel {
    /// A conditional flow for `dim` coordinates given `dim_c` context values.
    pub fn conditional(dim: usize, dim_c: usize, config: FlowConfig, seed: u64) -> Result<Self, FlowError> {
        Self::build(dim, dim_c, true, config, seed)
    }

    /// A flow that ignores any context it is given.
    pub fn unconditional(dim: usize, config: FlowConfig, seed: u64) -> Result<Self, FlowError> {
        Self::build(dim, 0, false, config, seed)
    }

    fn build(dim: usize, dim_c: usize, conditional: bool, config: FlowConfig, seed: u64) -> Result<Self, FlowError> {
        if !(config.gamma > 0.0 && config.gamma < 1.0) {
            return Err(FlowError::Config(format!("gamma must lie in (0, 1), got {}", config.gamma)));
        }
        if dim == 0 {
            return Err(FlowError::Config("flow dimension must be positive".into()));
        }
        if config.stages == 0 || config.stages > dim {
            return Err(FlowError::Config(format!("stage count {} must lie in 1..={dim}", config.stages)));
        }
        if config.layers == 0 {
            return Err(FlowError::Config("at least one coupling per stage is required".into()));
        }
        if config.bins < 4 {
            return Err(FlowError::Config("the terminal map needs at least 4 bins".into()));
        }
        let blocks = block_sizes(dim, config.stages);
        let mut starts = vec![0];
        for b in &blocks {
            starts.push(starts.last().unwrap() + b);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        // Tail blocks first, then the leading block.
        for k in (0..blocks.len()).rev() {
            let block = starts[k]..starts[k + 1];
            let lead = 0..starts[k];
            push_group(&mut store, &mut rng, &mut layers, k, block.clone(), lead, dim_c, &config);
            layers.push(Layer::Squeeze { frozen: block });
        }
        let logits = store.add("terminal.logits", Mat::zeros(dim, config.bins));
        layers.push(Layer::Terminal { logits });

        let manifest = FlowManifest {
            dim,
            dim_c,
            conditional,
            config,
            blocks,
            alpha_std: Standardization::identity(dim),
            c_std: Standardization::identity(dim_c),
            standardized: false,
        };
        Ok(Self { store, layers, manifest })
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn dim_c(&self) -> usize {
        self.manifest.dim_c
    }

    pub fn is_conditional(&self) -> bool {
        self.manifest.conditional
    }

    pub fn manifest(&self) -> &FlowManifest {
        &self.manifest
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_standardized(&self) -> bool {
        self.manifest.standardized
    }

    /// Freezes the input normalization from training data.
    pub fn fit_standardization(&mut self, alpha: &Mat, c: &Mat) {
        self.manifest.alpha_std = Standardization::fit(alpha);
        if self.manifest.conditional {
            self.manifest.c_std = Standardization::fit(c);
        }
        self.manifest.standardized = true;
    }

    pub fn set_standardization(&mut self, alpha: Standardization, c: Standardization) {
        self.manifest.alpha_std = alpha;
        self.manifest.c_std = c;
        self.manifest.standardized = true;
    }

    fn check_shapes(&self, alpha: &Mat, c: &Mat) -> Result<(), FlowError> {
        if alpha.cols() != self.dim() {
            return Err(FlowError::Shape(format!("expected {} flow coordinates, got {}", self.dim(), alpha.cols())));
        }
        if self.manifest.conditional && (c.cols() != self.dim_c() || c.rows() != alpha.rows()) {
            return Err(FlowError::Shape(format!(
                "expected a {}x{} context, got {}x{}",
                alpha.rows(),
                self.dim_c(),
                c.rows(),
                c.cols()
            )));
        }
        Ok(())
    }

    pub(crate) fn standardized_inputs(&self, alpha: &Mat, c: &Mat) -> (Mat, Mat) {
        let a = self.manifest.alpha_std.apply(alpha);
        let cs = if self.manifest.conditional { self.manifest.c_std.apply(c) } else { Mat::zeros(alpha.rows(), 0) };
        (a, cs)
    }

    /// Builds the tape for a batch; returns the per-row log-density node.
    pub(crate) fn graph_log_density(&self, g: &mut Graph<'_>, alpha_std: Mat, c_std: Mat) -> Var {
        let rows = alpha_std.rows();
        let d = self.dim() as f64;
        let mut x = g.input(alpha_std);
        let ctx = g.input(c_std);
        let mut ld = g.input(Mat::filled(rows, 1, self.manifest.alpha_std.logdet()));
        for layer in &self.layers {
            (x, ld) = layer.graph_forward(g, x, ctx, ld);
        }
        let sq = g.mul(x, x);
        let sq = g.sum_cols(sq);
        let prior = g.affine(sq, -0.5, -0.5 * d * LN_2PI);
        g.add(prior, ld)
    }

    /// `z = f(α, c)` and `log |det ∂z/∂α|`, including the standardization.
    pub fn forward(&self, alpha: &Mat, c: &Mat) -> Result<(Mat, Vec<f64>), FlowError> {
        self.check_shapes(alpha, c)?;
        let (mut x, ctx) = self.standardized_inputs(alpha, c);
        let mut ld = vec![self.manifest.alpha_std.logdet(); x.rows()];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&self.store, &mut x, &ctx, &mut ld);
            if !x.all_finite() || ld.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::NonFinite { layer: i });
            }
        }
        Ok((x, ld))
    }

    /// `α = f⁻¹(z, c)`.
    pub fn inverse(&self, z: &Mat, c: &Mat) -> Result<Mat, FlowError> {
        self.check_shapes(z, c)?;
        let ctx = if self.manifest.conditional { self.manifest.c_std.apply(c) } else { Mat::zeros(z.rows(), 0) };
        let mut x = z.clone();
        for layer in self.layers.iter().rev() {
            layer.inverse(&self.store, &mut x, &ctx);
        }
        self.manifest.alpha_std.unapply(&mut x);
        Ok(x)
    }

    /// Log-density of each row of `alpha` given the matching row of `c`.
    pub fn log_density(&self, alpha: &Mat, c: &Mat) -> Result<Vec<f64>, FlowError> {
        self.check_shapes(alpha, c)?;
        let n = alpha.rows();
        let chunks: Vec<Range<usize>> = (0..n).step_by(EVAL_CHUNK).map(|s| s..(s + EVAL_CHUNK).min(n)).collect();
        let parts = chunks
            .into_par_iter()
            .map(|r| {
                let idx: Vec<usize> = r.collect();
                let a = alpha.select_rows(&idx);
                let cc = if self.manifest.conditional { c.select_rows(&idx) } else { Mat::zeros(idx.len(), 0) };
                let (z, ld) = self.forward(&a, &cc)?;
                let d = self.dim() as f64;
                Ok((0..z.rows())
                    .map(|i| -0.5 * z.row(i).iter().map(|v| v * v).sum::<f64>() - 0.5 * d * LN_2PI + ld[i])
                    .collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>, FlowError>>()?;
        Ok(parts.concat())
    }

    /// Draws `n` samples given one context vector.
    pub fn sample(&self, c: &[f64], n: usize, seed: u64) -> Result<Mat, FlowError> {
        let ctx = Mat::from_rows(&vec![c.to_vec(); n]);
        self.sample_batch(&ctx, seed)
    }

    /// One sample per context row.
    pub fn sample_batch(&self, c: &Mat, seed: u64) -> Result<Mat, FlowError> {
        let n = c.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Mat::from_vec(n, self.dim(), (0..n * self.dim()).map(|_| rng.sample(StandardNormal)).collect());
        self.inverse(&z, c)
    }

    /// Serializes parameters and manifest to the checkpoint format.
    pub fn to_checkpoint(&self) -> Result<Checkpoint, FlowError> {
        let entries = self
            .layers
            .iter()
            .map(|l| LayerEntry {
                kind: l.tag().into(),
                shapes: l
                    .params()
                    .iter()
                    .map(|&p| {
                        let v = self.store.value(p);
                        vec![v.rows(), v.cols()]
                    })
                    .collect(),
            })
            .collect();
        let tensors = self.layers.iter().flat_map(|l| l.params()).map(|p| self.store.value(p).clone()).collect();
        let ext = serde_json::to_vec(&self.manifest).map_err(|e| FlowError::Manifest(e.to_string()))?;
        Ok(Checkpoint { layers: entries, tensors, ext })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, FlowError> {
        let manifest: FlowManifest = serde_json::from_slice(&ck.ext).map_err(|e| FlowError::Manifest(e.to_string()))?;
        let mut model = Self::build(manifest.dim, manifest.dim_c, manifest.conditional, manifest.config.clone(), 0)?;
        if model.manifest.blocks != manifest.blocks {
            return Err(FlowError::Manifest("block partition differs from the rebuilt model".into()));
        }
        let ids: Vec<_> = model.layers.iter().flat_map(|l| l.params()).collect();
        if ids.len() != ck.tensors.len() || model.layers.len() != ck.layers.len() {
            return Err(FlowError::Manifest("layer manifest does not match the configuration".into()));
        }
        for (layer, entry) in model.layers.iter().zip(&ck.layers) {
            if layer.tag() != entry.kind {
                return Err(FlowError::Manifest(format!("expected a {} layer, found {}", layer.tag(), entry.kind)));
            }
        }
        for (id, t) in ids.into_iter().zip(&ck.tensors) {
            let p = model.store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(FlowError::Manifest(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        model.manifest = manifest;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), FlowError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, FlowError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Couplings for one block: alternate halves when the block has at least two
/// coordinates, always conditioning on the leading blocks and the context.
#[allow(clippy::too_many_arguments)]
fn push_group<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    layers: &mut Vec<Layer>,
    k: usize,
    block: Range<usize>,
    lead: Range<usize>,
    dim_c: usize,
    cfg: &FlowConfig,
) {
    let mid = block.start + block.len() / 2;
    for l in 0..cfg.layers {
        let name = format!("block{k}.coupling{l}");
        let (upd, mut cond) = if block.len() < 2 {
            (block.clone(), vec![])
        } else if l % 2 == 0 {
            (mid..block.end, vec![block.start..mid])
        } else {
            (block.start..mid, vec![mid..block.end])
        };
        if !lead.is_empty() {
            cond.insert(0, lead.clone());
        }
        let c = CouplingLayer::new(store, rng, &name, upd, cond, dim_c, &cfg.hidden, cfg.gamma);
        layers.push(Layer::Coupling(c));
        layers.push(Layer::ScaleBias(ScaleBias::new(store, &format!("block{k}.scale_bias{l}"), block.clone())));
    }
}
