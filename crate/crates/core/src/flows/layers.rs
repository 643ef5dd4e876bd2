//! Invertible layers of the triangular flow.
//!
//! Every layer acts on a standardized state matrix (`batch × dim`) and, for
//! couplings, a standardized context matrix (`batch × dim_c`). Each layer has
//! a tape path used for training and a tape-free path with an exact inverse.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::cdf::{self, Bins};
use crate::nn::{Graph, Mat, Mlp, ParamId, ParamStore, Unary, Var};

/// Conditional affine coupling on the columns `upd`.
///
/// `y_U = x_U ⊙ (1 + γ tanh s) + e^β ⊙ tanh t`, where `(s, t)` is produced by
/// one trunk from the columns in `cond` and the context.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub upd: Range<usize>,
    pub cond: Vec<Range<usize>>,
    pub use_context: bool,
    pub gamma: f64,
    pub net: Mlp,
    pub beta: ParamId,
}

/// `y = e^s ⊙ x + b` on the columns `range`.
#[derive(Clone, Debug)]
pub struct ScaleBias {
    pub range: Range<usize>,
    pub s: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Coupling(CouplingLayer),
    ScaleBias(ScaleBias),
    /// Marks `frozen` as final; no later layer except the terminal map touches it.
    Squeeze {
        frozen: Range<usize>,
    },
    /// Element-wise monotone map on all columns; logits are `dim × bins`.
    Terminal {
        logits: ParamId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Coupling,
    ScaleBias,
    Squeeze,
    Terminal,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Coupling(_) => LayerKind::Coupling,
            Layer::ScaleBias(_) => LayerKind::ScaleBias,
            Layer::Squeeze { .. } => LayerKind::Squeeze,
            Layer::Terminal { .. } => LayerKind::Terminal,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Layer::Coupling(_) => "coupling",
            Layer::ScaleBias(_) => "scale_bias",
            Layer::Squeeze { .. } => "squeeze",
            Layer::Terminal { .. } => "terminal",
        }
    }

    /// Parameters owned by the layer, in store order.
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Layer::Coupling(c) => {
                let mut v: Vec<ParamId> = c.net.layers.iter().flat_map(|l| [l.w, l.b]).collect();
                v.push(c.beta);
                v
            }
            Layer::ScaleBias(sb) => vec![sb.s, sb.b],
            Layer::Squeeze { .. } => vec![],
            Layer::Terminal { logits } => vec![*logits],
        }
    }
}

impl CouplingLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        upd: Range<usize>,
        cond: Vec<Range<usize>>,
        dim_c: usize,
        hidden: &[usize],
        gamma: f64,
    ) -> Self {
        let n_in = cond.iter().map(|r| r.len()).sum::<usize>() + dim_c;
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * upd.len());
        let net = Mlp::new(store, rng, name, &sizes, Unary::Relu, true);
        let beta = store.add(format!("{name}.beta"), Mat::zeros(1, upd.len()));
        Self { upd, cond, use_context: dim_c > 0, gamma, net, beta }
    }

    fn conditioner_input(&self, x: &Mat, ctx: &Mat) -> Mat {
        let mut parts: Vec<Mat> = self.cond.iter().map(|r| x.columns(r.start, r.end)).collect();
        if self.use_context {
            parts.push(ctx.clone());
        }
        let refs: Vec<&Mat> = parts.iter().collect();
        if refs.is_empty() {
            Mat::zeros(x.rows(), 0)
        } else {
            Mat::hcat(&refs)
        }
    }

    /// Returns `(scale, shift)` for every row, each `batch × |upd|`.
    pub fn scale_shift(&self, store: &ParamStore, x: &Mat, ctx: &Mat) -> (Mat, Mat) {
        let h = self.net.apply(store, &self.conditioner_input(x, ctx));
        let n = self.upd.len();
        let eb: Vec<f64> = store.value(self.beta).as_slice().iter().map(|b| b.exp()).collect();
        let mut scale = Mat::zeros(x.rows(), n);
        let mut shift = Mat::zeros(x.rows(), n);
        for i in 0..x.rows() {
            let hr = h.row(i);
            for j in 0..n {
                scale.set(i, j, 1.0 + self.gamma * hr[j].tanh());
                shift.set(i, j, eb[j] * hr[n + j].tanh());
            }
        }
        (scale, shift)
    }

    pub fn graph_forward(&self, g: &mut Graph<'_>, x: Var, ctx: Var, logdet: Var) -> (Var, Var) {
        let mut parts: Vec<Var> = self.cond.iter().map(|r| g.slice(x, r.start, r.end)).collect();
        if self.use_context {
            parts.push(ctx);
        }
        let rows = g.value(x).rows();
        let inp = if parts.is_empty() { g.input(Mat::zeros(rows, 0)) } else { g.concat(&parts) };
        let h = self.net.forward(g, inp);
        let n = self.upd.len();
        let s = g.slice(h, 0, n);
        let t = g.slice(h, n, 2 * n);
        let ts = g.tanh(s);
        let scale = g.affine(ts, self.gamma, 1.0);
        let tt = g.tanh(t);
        let beta = g.param(self.beta);
        let eb = g.exp(beta);
        let shift = g.mul_row(tt, eb);
        let xu = g.slice(x, self.upd.start, self.upd.end);
        let scaled = g.mul(xu, scale);
        let yu = g.add(scaled, shift);
        let ls = g.log(scale);
        let ld = g.sum_cols(ls);
        let logdet = g.add(logdet, ld);
        (splice(g, x, &self.upd, yu), logdet)
    }
}

/// Replaces columns `range` of `x` by `part`.
pub(crate) fn splice(g: &mut Graph<'_>, x: Var, range: &Range<usize>, part: Var) -> Var {
    let d = g.value(x).cols();
    let mut pieces = Vec::with_capacity(3);
    if range.start > 0 {
        pieces.push(g.slice(x, 0, range.start));
    }
    pieces.push(part);
    if range.end < d {
        pieces.push(g.slice(x, range.end, d));
    }
    if pieces.len() == 1 {
        part
    } else {
        g.concat(&pieces)
    }
}

impl ScaleBias {
    pub fn new(store: &mut ParamStore, name: &str, range: Range<usize>) -> Self {
        let n = range.len();
        let s = store.add(format!("{name}.s"), Mat::zeros(1, n));
        let b = store.add(format!("{name}.b"), Mat::zeros(1, n));
        Self { range, s, b }
    }
}

impl Layer {
    /// Tape path: returns the new state and the updated per-row log-determinant.
    pub fn graph_forward(&self, g: &mut Graph<'_>, x: Var, ctx: Var, logdet: Var) -> (Var, Var) {
        match self {
            Layer::Coupling(c) => c.graph_forward(g, x, ctx, logdet),
            Layer::ScaleBias(sb) => {
                let xs = g.slice(x, sb.range.start, sb.range.end);
                let s = g.param(sb.s);
                let b = g.param(sb.b);
                let es = g.exp(s);
                let y = g.mul_row(xs, es);
                let y = g.add_row(y, b);
                let ssum = g.sum_cols(s);
                let logdet = g.add_row(logdet, ssum);
                (splice(g, x, &sb.range, y), logdet)
            }
            Layer::Squeeze { .. } => (x, logdet),
            Layer::Terminal { logits } => {
                let th = g.param(*logits);
                let z = g.cdf(x, th);
                let ld = g.cdf_log_deriv(x, th);
                let ld = g.sum_cols(ld);
                (z, g.add(logdet, ld))
            }
        }
    }

    /// Tape-free forward; adds the layer's log-determinant into `logdet`.
    pub fn forward(&self, store: &ParamStore, x: &mut Mat, ctx: &Mat, logdet: &mut [f64]) {
        match self {
            Layer::Coupling(c) => {
                let (scale, shift) = c.scale_shift(store, x, ctx);
                for i in 0..x.rows() {
                    let row = x.row_mut(i);
                    for (j, col) in c.upd.clone().enumerate() {
                        let sc = scale.get(i, j);
                        row[col] = row[col] * sc + shift.get(i, j);
                        logdet[i] += sc.ln();
                    }
                }
            }
            Layer::ScaleBias(sb) => {
                let s = store.value(sb.s).as_slice();
                let b = store.value(sb.b).as_slice();
                let ssum: f64 = s.iter().sum();
                for i in 0..x.rows() {
                    let row = &mut x.row_mut(i)[sb.range.clone()];
                    for ((v, s), b) in row.iter_mut().zip(s).zip(b) {
                        *v = *v * s.exp() + b;
                    }
                    logdet[i] += ssum;
                }
            }
            Layer::Squeeze { .. } => {}
            Layer::Terminal { logits } => {
                let bins = terminal_bins(store.value(*logits));
                for i in 0..x.rows() {
                    for (v, b) in x.row_mut(i).iter_mut().zip(&bins) {
                        let p = cdf::eval(*v, b);
                        *v = p.z;
                        logdet[i] += p.log_deriv;
                    }
                }
            }
        }
    }

    /// Exact inverse of [`Layer::forward`] (without the log-determinant).
    pub fn inverse(&self, store: &ParamStore, y: &mut Mat, ctx: &Mat) {
        match self {
            Layer::Coupling(c) => {
                // Conditioner columns are disjoint from `upd`, so they read the same in y and x.
                let (scale, shift) = c.scale_shift(store, y, ctx);
                for i in 0..y.rows() {
                    let row = y.row_mut(i);
                    for (j, col) in c.upd.clone().enumerate() {
                        row[col] = (row[col] - shift.get(i, j)) / scale.get(i, j);
                    }
                }
            }
            Layer::ScaleBias(sb) => {
                let s = store.value(sb.s).as_slice();
                let b = store.value(sb.b).as_slice();
                for i in 0..y.rows() {
                    let row = &mut y.row_mut(i)[sb.range.clone()];
                    for ((v, s), b) in row.iter_mut().zip(s).zip(b) {
                        *v = (*v - b) * (-s).exp();
                    }
                }
            }
            Layer::Squeeze { .. } => {}
            Layer::Terminal { logits } => {
                let bins = terminal_bins(store.value(*logits));
                for i in 0..y.rows() {
                    for (v, b) in y.row_mut(i).iter_mut().zip(&bins) {
                        *v = cdf::invert(*v, b);
                    }
                }
            }
        }
    }
}

fn terminal_bins(logits: &Mat) -> Vec<Bins> {
    (0..logits.rows()).map(|j| Bins::from_logits(logits.row(j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One scalar coupling whose conditioner outputs the constants `(s, t)`.
    fn scalar_layer(store: &mut ParamStore, s: f64, t: f64, gamma: f64) -> CouplingLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = CouplingLayer::new(store, &mut rng, "c", 1..2, vec![0..1], 0, &[4], gamma);
        for l in &layer.net.layers {
            store.get_mut(l.w).value.fill(0.0);
        }
        let head = layer.net.layers.last().unwrap();
        store.get_mut(head.b).value = Mat::row_vector(&[s, t]);
        layer
    }

    #[test]
    fn scalar_coupling_matches_closed_form() {
        let mut store = ParamStore::new();
        let layer = Layer::Coupling(scalar_layer(&mut store, 1.0, 0.0, 0.5));
        let mut x = Mat::row_vector(&[0.3, 2.0]);
        let mut ld = vec![0.0];
        layer.forward(&store, &mut x, &Mat::zeros(1, 0), &mut ld);
        assert!((x.get(0, 1) - 2.761_594).abs() < 1e-6);
        assert!((ld[0] - 0.322_661).abs() < 1e-6);
        layer.inverse(&store, &mut x, &Mat::zeros(1, 0));
        assert!((x.get(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_conditioner_is_identity() {
        let mut store = ParamStore::new();
        let layer = Layer::Coupling(scalar_layer(&mut store, 0.0, 0.0, 0.6));
        let mut x = Mat::row_vector(&[0.3, -1.7]);
        let mut ld = vec![0.0];
        layer.forward(&store, &mut x, &Mat::zeros(1, 0), &mut ld);
        assert_eq!(x.as_slice(), &[0.3, -1.7]);
        assert_eq!(ld[0], 0.0);
    }
}
