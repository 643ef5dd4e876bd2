//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records operations as they
//! are evaluated and, on [`Graph::backward`], returns the gradient of a scalar
//! node with respect to every parameter that was touched.

use super::cdf::{self, Bins};
use super::tensor::{gemm, matmul, Mat};
use super::NnError;

/// Handle to a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParameterTensor {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
    pub trainable: bool,
}

/// Owns all parameter tensors of a model, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<ParameterTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let grad = Mat::zeros(value.rows(), value.cols());
        self.tensors.push(ParameterTensor { name: name.into(), value, grad, trainable: true });
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParameterTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParameterTensor {
        &mut self.tensors[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0].value
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParameterTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParameterTensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.grad.fill(0.0));
    }

    /// Adds gradients produced by [`Graph::backward`].
    pub fn accumulate(&mut self, grads: Vec<(ParamId, Mat)>) {
        for (id, g) in grads {
            self.tensors[id.0].grad.add_assign(&g);
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Relu,
    LeakyRelu,
    Exp,
    Log,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var },
    Unary { x: Var, f: Unary },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine { x: Var, scale: f64 },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Cdf { x: Var, logits: Var },
    CdfLogDeriv { x: Var, logits: Var },
}

struct Node {
    op: Op,
    value: Mat,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { op: Op::Input, value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node { op: Op::Param(id), value: Mat::zeros(0, 0), needs_grad: trainable });
        Var(self.nodes.len() - 1)
    }

    /// `x · W + b` with `W` stored as `in × out` and `b` as `1 × out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.rows(), "dense: input width");
        assert_eq!(bv.shape(), (1, wv.cols()), "dense: bias shape");
        let mut y = Mat::zeros(xv.rows(), wv.cols());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(bv.as_slice());
        }
        gemm(1.0, xv, false, wv, false, 1.0, &mut y);
        self.push(Op::Dense { x, w, b }, y, &[x, w, b])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let xv = self.value(x);
        let y = match f {
            Unary::Tanh => xv.map(f64::tanh),
            Unary::Relu => xv.map(|v| v.max(0.0)),
            Unary::LeakyRelu => xv.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
            Unary::Exp => xv.map(f64::exp),
            Unary::Log => xv.map(f64::ln),
            Unary::Sigmoid => xv.map(cdf::sigmoid),
        };
        self.push(Op::Unary { x, f }, y, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::LeakyRelu)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q);
        self.push(Op::Add(a, b), y, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q);
        self.push(Op::Sub(a, b), y, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        self.push(Op::Mul(a, b), y, &[a, b])
    }

    /// Adds the `1 × cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!(rv.shape(), (1, av.cols()), "add_row: shape");
        let mut y = av.clone();
        for i in 0..y.rows() {
            for (o, v) in y.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o += v;
            }
        }
        self.push(Op::AddRow(a, r), y, &[a, r])
    }

    /// Multiplies every row of `a` element-wise by the `1 × cols` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!(rv.shape(), (1, av.cols()), "mul_row: shape");
        let mut y = av.clone();
        for i in 0..y.rows() {
            for (o, v) in y.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o *= v;
            }
        }
        self.push(Op::MulRow(a, r), y, &[a, r])
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { x, scale }, y, &[x])
    }

    /// Per-row sum, giving a `rows × 1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let y = self.value(x).row_sums();
        self.push(Op::SumCols(x), y, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().sum();
        self.push(Op::Sum(x), Mat::from_vec(1, 1, vec![s]), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.as_slice().iter().sum::<f64>() / xv.len().max(1) as f64;
        self.push(Op::Mean(x), Mat::from_vec(1, 1, vec![s]), &[x])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Mat::hcat(&mats);
        self.push(Op::Concat(parts.to_vec()), y, parts)
    }

    /// Columns `[start, end)`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Var {
        let y = self.value(x).columns(start, end);
        self.push(Op::Slice { x, start }, y, &[x])
    }

    /// Element-wise monotone map; `logits` is `cols(x) × K`.
    pub fn cdf(&mut self, x: Var, logits: Var) -> Var {
        let y = self.cdf_apply(x, logits, |p| p.z);
        self.push(Op::Cdf { x, logits }, y, &[x, logits])
    }

    /// Log-derivative of [`Graph::cdf`], element-wise.
    pub fn cdf_log_deriv(&mut self, x: Var, logits: Var) -> Var {
        let y = self.cdf_apply(x, logits, |p| p.log_deriv);
        self.push(Op::CdfLogDeriv { x, logits }, y, &[x, logits])
    }

    fn cdf_apply(&self, x: Var, logits: Var, pick: impl Fn(&cdf::Point) -> f64) -> Mat {
        let (xv, lv) = (self.value(x), self.value(logits));
        assert_eq!(lv.rows(), xv.cols(), "cdf: one logit row per column");
        let bins: Vec<Bins> = (0..lv.rows()).map(|j| Bins::from_logits(lv.row(j))).collect();
        let mut y = Mat::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            for (j, b) in bins.iter().enumerate() {
                y.set(i, j, pick(&cdf::eval(xv.get(i, j), b)));
            }
        }
        y
    }

    /// Gradient of the scalar `loss` with respect to all trainable parameters reached.
    pub fn backward(&self, loss: Var) -> Result<Vec<(ParamId, Mat)>, NnError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NnError::Shape(format!("backward needs a 1x1 loss, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.push((*id, g)),
                Op::Dense { x, w, b } => {
                    if self.needs(*x) {
                        self.acc(&mut grads, *x, matmul(&g, false, self.value(*w), true));
                    }
                    if self.needs(*w) {
                        self.acc(&mut grads, *w, matmul(self.value(*x), true, &g, false));
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g.col_sums());
                    }
                }
                Op::Unary { x, f } => {
                    let xv = self.value(*x);
                    let y = &node.value;
                    let dx = match f {
                        Unary::Tanh => g.zip_map(y, |g, y| g * (1.0 - y * y)),
                        Unary::Relu => g.zip_map(xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                        Unary::LeakyRelu => g.zip_map(xv, |g, x| if x > 0.0 { g } else { LEAKY_SLOPE * g }),
                        Unary::Exp => g.zip_map(y, |g, y| g * y),
                        Unary::Log => g.zip_map(xv, |g, x| g / x),
                        Unary::Sigmoid => g.zip_map(y, |g, y| g * y * (1.0 - y)),
                    };
                    self.acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    self.acc_if(&mut grads, *b, || g.clone());
                    self.acc_if(&mut grads, *a, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.acc_if(&mut grads, *b, || g.map(|v| -v));
                    self.acc_if(&mut grads, *a, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc_if(&mut grads, *a, || g.zip_map(bv, |g, b| g * b));
                    self.acc_if(&mut grads, *b, || g.zip_map(av, |g, a| g * a));
                }
                Op::AddRow(a, r) => {
                    self.acc_if(&mut grads, *r, || g.col_sums());
                    self.acc_if(&mut grads, *a, || g.clone());
                }
                Op::MulRow(a, r) => {
                    let (av, rv) = (self.value(*a), self.value(*r));
                    self.acc_if(&mut grads, *r, || g.zip_map(av, |g, a| g * a).col_sums());
                    self.acc_if(&mut grads, *a, || {
                        let mut d = g.clone();
                        for i in 0..d.rows() {
                            for (o, v) in d.row_mut(i).iter_mut().zip(rv.as_slice()) {
                                *o *= v;
                            }
                        }
                        d
                    });
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    self.acc(&mut grads, *x, g.map(|v| s * v));
                }
                Op::SumCols(x) => {
                    let cols = self.value(*x).cols();
                    let mut d = Mat::zeros(g.rows(), cols);
                    for i in 0..g.rows() {
                        d.row_mut(i).fill(g.get(i, 0));
                    }
                    self.acc(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    self.acc(&mut grads, *x, Mat::filled(r, c, g.get(0, 0)));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let n = (r * c).max(1) as f64;
                    self.acc(&mut grads, *x, Mat::filled(r, c, g.get(0, 0) / n));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.needs(*p) {
                            self.acc(&mut grads, *p, g.columns(start, start + w));
                        }
                        start += w;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    self.acc(&mut grads, *x, d);
                }
                Op::Cdf { x, logits } => self.cdf_backward(&mut grads, &g, *x, *logits, false),
                Op::CdfLogDeriv { x, logits } => self.cdf_backward(&mut grads, &g, *x, *logits, true),
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, d: Mat) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
    }

    fn acc_if(&self, grads: &mut [Option<Mat>], v: Var, d: impl FnOnce() -> Mat) {
        if self.needs(v) {
            self.acc(grads, v, d());
        }
    }

    fn cdf_backward(&self, grads: &mut [Option<Mat>], g: &Mat, x: Var, logits: Var, log_deriv: bool) {
        let (xv, lv) = (self.value(x), self.value(logits));
        let k = lv.cols();
        let bins: Vec<Bins> = (0..lv.rows()).map(|j| Bins::from_logits(lv.row(j))).collect();
        let want_x = self.needs(x);
        let want_l = self.needs(logits);
        let mut dx = Mat::zeros(xv.rows(), xv.cols());
        let mut dl = Mat::zeros(lv.rows(), k);
        let mut buf = vec![0.0; k];
        for i in 0..xv.rows() {
            for (j, b) in bins.iter().enumerate() {
                let gij = g.get(i, j);
                if gij == 0.0 {
                    continue;
                }
                let p = cdf::eval(xv.get(i, j), b);
                let one_minus_2f = p.omf - p.f;
                if want_x {
                    let d = if log_deriv { (p.v - p.u) - one_minus_2f * p.dz_dx } else { p.dz_dx };
                    dx.set(i, j, gij * d);
                }
                if want_l {
                    cdf::dz_dtheta(&p, b, &mut buf);
                    let row = dl.row_mut(j);
                    for l in 0..k {
                        let d = if log_deriv {
                            let delta = if l == p.bin { 1.0 } else { 0.0 };
                            (delta - b.p[l]) - one_minus_2f * buf[l]
                        } else {
                            buf[l]
                        };
                        row[l] += gij * d;
                    }
                }
            }
        }
        if want_x {
            self.acc(grads, x, dx);
        }
        if want_l {
            self.acc(grads, logits, dl);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_derivative_at_half() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::filled(1, 1, 0.5));
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let t = g.tanh(wv);
        let s = g.sum(t);
        let grads = g.backward(s).unwrap();
        assert!((grads[0].1.get(0, 0) - 0.786_447_7).abs() < 1e-6);
    }

    #[test]
    fn leaky_relu_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::row_vector(&[-1.0, 2.0]));
        let y = g.leaky_relu(x);
        assert_eq!(g.value(y).as_slice(), &[-0.01, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Mat::zeros(2, 2));
        assert!(g.backward(x).is_err());
    }

    /// Builds a small expression touching every op and checks its parameter
    /// gradient against central differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::from_vec(3, 2, vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2]));
        let b = store.add("b", Mat::row_vector(&[0.1, -0.1]));
        let r = store.add("r", Mat::row_vector(&[0.7, -0.3]));
        let th = store.add("th", Mat::from_vec(2, 6, (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.3).collect()));
        let x = Mat::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin() * 1.5).collect());

        let eval = |store: &ParamStore| -> (f64, Vec<(ParamId, Mat)>) {
            let mut g = Graph::new(store);
            let xi = g.input(x.clone());
            let (wv, bv, rv, tv) = (g.param(w), g.param(b), g.param(r), g.param(th));
            let h = g.dense(xi, wv, bv);
            let a1 = g.tanh(h);
            let a2 = g.leaky_relu(h);
            let a3 = g.relu(h);
            let er = g.exp(rv);
            let m = g.mul_row(a1, er);
            let s = g.add_row(m, rv);
            let sg = g.unary(s, Unary::Sigmoid);
            let lg = g.log(sg);
            let p = g.mul(a2, a3);
            let q = g.sub(lg, p);
            let c = g.concat(&[q, a1]);
            let sl = g.slice(c, 1, 3);
            let z = g.cdf(sl, tv);
            let ld = g.cdf_log_deriv(sl, tv);
            let zz = g.mul(z, z);
            let t = g.add(zz, ld);
            let t = g.affine(t, 0.5, 1.0);
            let sc = g.sum_cols(t);
            let l1 = g.mean(sc);
            let l2 = g.sum(a1);
            let loss = g.add(l1, l2);
            (g.value(loss).get(0, 0), g.backward(loss).unwrap())
        };

        let (_, grads) = eval(&store);
        let eps = 1e-6;
        for (id, gmat) in grads {
            for k in 0..gmat.len() {
                let mut sp = store.clone();
                sp.get_mut(id).value.as_mut_slice()[k] += eps;
                let mut sm = store.clone();
                sm.get_mut(id).value.as_mut_slice()[k] -= eps;
                let fd = (eval(&sp).0 - eval(&sm).0) / (2.0 * eps);
                let ad = gmat.as_slice()[k];
                assert!((ad - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} [{k}]: {ad} vs {fd}", store.get(id).name);
            }
        }
    }
}
