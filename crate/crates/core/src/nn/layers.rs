//! Parameterized building blocks.

use rand::Rng;

use super::graph::{Graph, ParamId, ParamStore, Unary, Var};
use super::tensor::Mat;

/// Glorot-uniform matrix of shape `fan_in × fan_out`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Mat::from_vec(fan_in, fan_out, data)
}

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Mat::zeros(1, fan_out));
        Self { w, b, fan_in, fan_out }
    }

    /// A layer whose weights and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Mat::zeros(fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Mat::zeros(1, fan_out));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.dense(x, w, b)
    }

    /// Tape-free evaluation.
    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        let mut y = Mat::zeros(x.rows(), self.fan_out);
        let b = store.value(self.b);
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b.as_slice());
        }
        super::tensor::gemm(1.0, x, false, store.value(self.w), false, 1.0, &mut y);
        y
    }
}

/// Multi-layer perceptron with a shared hidden activation and a linear head.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Unary,
}

impl Mlp {
    /// `sizes = [in, h1, …, out]`. With `zero_head` the last layer starts at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        sizes: &[usize],
        activation: Unary,
        zero_head: bool,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_head && i == n - 1 {
                    Linear::zeros(store, &lname, sizes[i], sizes[i + 1])
                } else {
                    Linear::new(store, rng, &lname, sizes[i], sizes[i + 1])
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x, |h, (i, l)| {
            let y = l.forward(g, h);
            if i < last {
                g.unary(y, self.activation)
            } else {
                y
            }
        })
    }

    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Mat {
        let last = self.layers.len() - 1;
        let act = self.activation;
        self.layers.iter().enumerate().fold(x.clone(), |h, (i, l)| {
            let y = l.apply(store, &h);
            if i < last {
                apply_unary(&y, act)
            } else {
                y
            }
        })
    }
}

pub fn apply_unary(x: &Mat, f: Unary) -> Mat {
    match f {
        Unary::Tanh => x.map(f64::tanh),
        Unary::Relu => x.map(|v| v.max(0.0)),
        Unary::LeakyRelu => x.map(|v| if v > 0.0 { v } else { super::graph::LEAKY_SLOPE * v }),
        Unary::Exp => x.map(f64::exp),
        Unary::Log => x.map(f64::ln),
        Unary::Sigmoid => x.map(super::cdf::sigmoid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = glorot(&mut rng, 10, 6);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(m.as_slice().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn mlp_tape_and_direct_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "m", &[3, 5, 2], Unary::Relu, false);
        let x = Mat::from_vec(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.3, -0.5]);
        let mut g = Graph::new(&store);
        let xi = g.input(x.clone());
        let y = mlp.forward(&mut g, xi);
        assert!(g.value(y).max_abs_diff(&mlp.apply(&store, &x)) < 1e-14);
    }
}
