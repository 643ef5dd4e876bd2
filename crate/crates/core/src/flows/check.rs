//! Numerical checks of a flow against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::model::FlowModel;
use super::FlowError;
use crate::nn::{Graph, Mat};

/// Central-difference Jacobian `∂z/∂α` at one point (rows index `z`).
pub fn fd_jacobian(model: &FlowModel, alpha: &[f64], c: &[f64], step: f64) -> Result<Mat, FlowError> {
    let d = alpha.len();
    let ctx = Mat::from_rows(&vec![c.to_vec(); 2 * d]);
    let mut pts = Vec::with_capacity(2 * d);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut p = alpha.to_vec();
            p[j] += sign * step;
            pts.push(p);
        }
    }
    let (z, _) = model.forward(&Mat::from_rows(&pts), &ctx)?;
    let mut jac = Mat::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            jac.set(i, j, (z.get(2 * j, i) - z.get(2 * j + 1, i)) / (2.0 * step));
        }
    }
    Ok(jac)
}

/// `log |det J|` by LU decomposition.
pub fn log_abs_det(jac: &Mat) -> f64 {
    let n = jac.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, jac.as_slice());
    m.lu().determinant().abs().ln()
}

/// Largest `|J[i][j]|` over entries where output `i` lies in an earlier block
/// than input `j`, which must vanish for a block lower-triangular map.
pub fn triangularity_violation(model: &FlowModel, jac: &Mat) -> f64 {
    let blocks = &model.manifest().blocks;
    let block_of: Vec<usize> = blocks.iter().enumerate().flat_map(|(b, &n)| std::iter::repeat_n(b, n)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..jac.rows() {
        for j in 0..jac.cols() {
            if block_of[j] > block_of[i] {
                worst = worst.max(jac.get(i, j).abs());
            }
        }
    }
    worst
}

/// Adds `N(0, scale²)` noise to every parameter so that no layer is the identity.
pub fn jitter_parameters(model: &mut FlowModel, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, scale).expect("finite scale");
    for t in model.params_mut().iter_mut() {
        t.value.as_mut_slice().iter_mut().for_each(|v| *v += rng.sample(dist));
    }
}

/// Worst relative error between the tape gradient of the mean log-density
/// and central finite differences over every parameter entry.
pub fn gradient_check(model: &FlowModel, alpha: &Mat, c: &Mat, step: f64) -> Result<f64, FlowError> {
    let mean_ll = |m: &FlowModel| -> Result<f64, FlowError> {
        let lp = m.log_density(alpha, c)?;
        Ok(lp.iter().sum::<f64>() / lp.len() as f64)
    };
    let (a, cs) = model.standardized_inputs(alpha, c);
    let grads = {
        let mut g = Graph::new(model.params());
        let lp = model.graph_log_density(&mut g, a, cs);
        let mean = g.mean(lp);
        g.backward(mean)?
    };
    let mut worst: f64 = 0.0;
    for (id, gm) in grads {
        for k in 0..gm.len() {
            let mut plus = model.clone();
            plus.params_mut().get_mut(id).value.as_mut_slice()[k] += step;
            let mut minus = model.clone();
            minus.params_mut().get_mut(id).value.as_mut_slice()[k] -= step;
            let fd = (mean_ll(&plus)? - mean_ll(&minus)?) / (2.0 * step);
            let ad = gm.as_slice()[k];
            worst = worst.max((ad - fd).abs() / fd.abs().max(ad.abs()).max(1e-3));
        }
    }
    Ok(worst)
}
