//! Parallel Dirichlet–Neumann relaxation over a batch of samples.

use serde::{Deserialize, Serialize};

use super::decomposition::Decomposition;
use super::DdError;
use crate::nn::Mat;

/// Maps received interface parameters to exported coupling values.
pub trait CouplingOracle: Sync {
    /// For subdomain `sub` and the samples `rows`, `tau` holds the received
    /// parameters (one row per sample, incoming edges concatenated in edge
    /// order). Returns one matrix per outgoing edge of `sub`, in edge order,
    /// expressed in the receiving edge's coordinates.
    fn couple(&self, sub: usize, rows: &[usize], tau: &Mat) -> Result<Vec<Mat>, DdError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_steps: 500 }
    }
}

#[derive(Clone, Debug)]
pub struct IterationOutcome {
    /// Final parameters per edge, `samples × dim(edge)`.
    pub tau: Vec<Mat>,
    /// Steps taken by each sample.
    pub steps: Vec<usize>,
    pub converged: Vec<bool>,
    /// Last indicator value of each sample.
    pub final_indicator: Vec<f64>,
    /// Largest indicator among the samples still iterating, per step.
    pub history: Vec<f64>,
}

impl IterationOutcome {
    pub fn num_converged(&self) -> usize {
        self.converged.iter().filter(|&&c| c).count()
    }

    /// Concatenated incoming parameters of `sub` for every sample.
    pub fn tau_of(&self, dec: &Decomposition, sub: usize) -> Mat {
        let parts: Vec<&Mat> = dec.incoming(sub).into_iter().map(|e| &self.tau[e]).collect();
        Mat::hcat(&parts)
    }
}

/// One relaxation update; `theta = 0` replaces the old value.
#[inline]
pub fn dn_update(tau: f64, h: f64, theta: f64) -> f64 {
    if theta == 0.0 {
        h
    } else {
        theta * h + (1.0 - theta) * tau
    }
}

/// Runs the relaxation for `n` samples from `init` (zero when `None`).
///
/// Each sample stops once its indicator, the largest change of any interface
/// parameter, drops below `cfg.tol`.
pub fn iterate(
    dec: &Decomposition,
    dims: &[usize],
    oracle: &dyn CouplingOracle,
    n: usize,
    init: Option<Vec<Mat>>,
    cfg: &IterationConfig,
) -> Result<IterationOutcome, DdError> {
    if !(cfg.tol > 0.0) {
        return Err(DdError::Config(format!("tolerance must be positive, got {}", cfg.tol)));
    }
    if dims.len() != dec.edges.len() {
        return Err(DdError::Shape(format!("{} edge dimensions for {} edges", dims.len(), dec.edges.len())));
    }
    let mut tau = init.unwrap_or_else(|| dims.iter().map(|&d| Mat::zeros(n, d)).collect());
    let incoming: Vec<Vec<usize>> = (0..dec.len()).map(|i| dec.incoming(i)).collect();
    let outgoing: Vec<Vec<usize>> = (0..dec.len()).map(|i| dec.outgoing(i)).collect();
    let mut out = IterationOutcome {
        tau: Vec::new(),
        steps: vec![0; n],
        converged: vec![false; n],
        final_indicator: vec![f64::INFINITY; n],
        history: Vec::new(),
    };
    let mut active: Vec<usize> = (0..n).collect();
    for step in 1..=cfg.max_steps {
        if active.is_empty() {
            break;
        }
        // Jacobi sweep: every subdomain sees the parameters of the previous step.
        let mut exported: Vec<Option<Mat>> = vec![None; dec.edges.len()];
        for sub in 0..dec.len() {
            let parts: Vec<Mat> = incoming[sub].iter().map(|&e| tau[e].select_rows(&active)).collect();
            let refs: Vec<&Mat> = parts.iter().collect();
            let tau_i = if refs.is_empty() { Mat::zeros(active.len(), 0) } else { Mat::hcat(&refs) };
            let h = oracle.couple(sub, &active, &tau_i)?;
            if h.len() != outgoing[sub].len() {
                return Err(DdError::Shape(format!("oracle returned {} exports for subdomain {sub}", h.len())));
            }
            for (&e, m) in outgoing[sub].iter().zip(h) {
                if m.shape() != (active.len(), dims[e]) {
                    return Err(DdError::Shape(format!("edge {e}: oracle returned {:?}", m.shape())));
                }
                exported[e] = Some(m);
            }
        }
        let mut eps = vec![0.0f64; active.len()];
        for (e, h) in exported.into_iter().enumerate() {
            let h = h.ok_or_else(|| DdError::Shape(format!("edge {e} was not exported by its sender")))?;
            let theta = dec.edges[e].theta;
            for (r, &s) in active.iter().enumerate() {
                let row = tau[e].row_mut(s);
                for (t, &hv) in row.iter_mut().zip(h.row(r)) {
                    let new = dn_update(*t, hv, theta);
                    if !new.is_finite() {
                        return Err(DdError::Divergence { step, sample: s });
                    }
                    eps[r] = eps[r].max((new - *t).abs());
                    *t = new;
                }
            }
        }
        out.history.push(eps.iter().copied().fold(0.0, f64::max));
        let mut still = Vec::with_capacity(active.len());
        for (r, &s) in active.iter().enumerate() {
            out.steps[s] = step;
            out.final_indicator[s] = eps[r];
            if eps[r] < cfg.tol {
                out.converged[s] = true;
            } else {
                still.push(s);
            }
        }
        active = still;
    }
    out.tau = tau;
    Ok(out)
}

/// Least-squares slope and R² of `log(history)` against the step index.
pub fn log_linear_fit(history: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(k, &v)| ((k + 1) as f64, v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_rule() {
        assert_eq!(dn_update(2.0, 4.0, 0.5), 3.0);
        assert_eq!(dn_update(2.0, 4.0, 1.0), 4.0);
        assert_eq!(dn_update(2.0, 4.0, 0.0), 4.0);
    }

    /// Scalar linear coupling `h = a·τ_other + b` on the two-component layout.
    struct Linear;

    impl CouplingOracle for Linear {
        fn couple(&self, sub: usize, rows: &[usize], tau: &Mat) -> Result<Vec<Mat>, DdError> {
            let (a, b) = if sub == 0 { (0.5, 1.0) } else { (-0.4, 0.2) };
            let m =
                Mat::from_vec(rows.len(), 1, (0..rows.len()).map(|r| a * tau.get(r, 0) + b + rows[r] as f64).collect());
            Ok(vec![m])
        }
    }

    #[test]
    fn converges_to_the_linear_fixed_point() {
        let mut dec = Decomposition::two_component();
        dec.edges[0].theta = 1.0;
        let out = iterate(&dec, &[1, 1], &Linear, 3, None, &IterationConfig { tol: 1e-12, max_steps: 200 }).unwrap();
        assert_eq!(out.num_converged(), 3);
        for s in 0..3 {
            // t0 = -0.4 t1 + 0.2 + s, t1 = 0.5 t0 + 1 + s
            let k = s as f64;
            let t0 = (0.2 + k - 0.4 * (1.0 + k)) / 1.2;
            assert!((out.tau[0].get(s, 0) - t0).abs() < 1e-10);
        }
        let (slope, r2) = log_linear_fit(&out.history).unwrap();
        assert!(slope < 0.0 && r2 > 0.9);
    }

    #[test]
    fn fixed_point_start_converges_in_one_step() {
        let mut dec = Decomposition::two_component();
        dec.edges[0].theta = 1.0;
        let t0 = (0.2 - 0.4) / 1.2;
        let init = vec![Mat::filled(1, 1, t0), Mat::filled(1, 1, 0.5 * t0 + 1.0)];
        let out = iterate(&dec, &[1, 1], &Linear, 1, Some(init), &IterationConfig::default()).unwrap();
        assert_eq!(out.steps[0], 1);
        assert!(out.converged[0]);
    }
}
