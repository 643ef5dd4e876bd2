//! A linear-Gaussian coupled system whose interface law is known exactly.
//!
//! With local inputs `ξ ~ N(0, I)`, remote inputs `r ~ N(0, I)` and converged
//! interface parameters `τ = Lξ + Rr`, the target conditional is
//! `τ | ξ ~ N(Lξ, RRᵀ)`. The output `y = y₀ + cᵀξ + dᵀτ` is Gaussian, so its
//! mean and distribution function are available in closed form.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{sample_rng, stream_seed, PipelineError};
use crate::nn::Mat;
use crate::randfield::normal_cdf;
use crate::stats::GaussianLaw;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianSystem {
    /// `dim τ × dim ξ`.
    pub local: Mat,
    /// `dim τ × dim r`.
    pub remote: Mat,
    pub offset: f64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Offline samples with exact importance weights.
#[derive(Clone, Debug)]
pub struct SyntheticRun {
    pub xi: Mat,
    pub tau: Mat,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LinearGaussianSystem {
    pub fn example() -> Self {
        Self {
            local: Mat::from_rows(&[[0.8, -0.3], [0.2, 0.5]]),
            remote: Mat::from_rows(&[[0.4, 0.1], [-0.2, 0.3]]),
            offset: 1.0,
            c: vec![0.5, -0.25],
            d: vec![1.0, 0.7],
        }
    }

    pub fn xi_dim(&self) -> usize {
        self.local.cols()
    }

    pub fn tau_dim(&self) -> usize {
        self.local.rows()
    }

    fn conditional_cov(&self) -> Vec<f64> {
        let (m, k) = self.remote.shape();
        (0..m * m).map(|ij| (0..k).map(|l| self.remote.get(ij / m, l) * self.remote.get(ij % m, l)).sum()).collect()
    }

    pub fn conditional(&self, xi: &[f64]) -> Result<GaussianLaw, PipelineError> {
        let mean =
            (0..self.tau_dim()).map(|i| (0..self.xi_dim()).map(|j| self.local.get(i, j) * xi[j]).sum()).collect();
        Ok(GaussianLaw::new(mean, self.conditional_cov())?)
    }

    pub fn output(&self, xi: &[f64], tau: &[f64]) -> f64 {
        self.offset
            + self.c.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()
            + self.d.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Mean and variance of the coupled output.
    pub fn output_law(&self) -> (f64, f64) {
        // y − y₀ = (c + Lᵀd)ᵀξ + (Rᵀd)ᵀr
        let a: f64 = (0..self.xi_dim())
            .map(|j| self.c[j] + (0..self.tau_dim()).map(|i| self.local.get(i, j) * self.d[i]).sum::<f64>())
            .map(|v| v * v)
            .sum();
        let b: f64 = (0..self.remote.cols())
            .map(|j| (0..self.tau_dim()).map(|i| self.remote.get(i, j) * self.d[i]).sum::<f64>())
            .map(|v| v * v)
            .sum();
        (self.offset, a + b)
    }

    pub fn cdf(&self, a: f64) -> f64 {
        let (m, v) = self.output_law();
        normal_cdf((a - m) / v.sqrt())
    }

    /// Coupled samples `(ξ, τ)` as the online stage would produce them.
    pub fn coupled(&self, n: usize, seed: u64) -> (Mat, Mat) {
        let stream = stream_seed(seed, "synthetic-online");
        let mut xi = Mat::zeros(n, self.xi_dim());
        let mut tau = Mat::zeros(n, self.tau_dim());
        for s in 0..n {
            let mut rng = sample_rng(stream, s);
            let x: Vec<f64> = (0..self.xi_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let r: Vec<f64> = (0..self.remote.cols()).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..self.tau_dim() {
                let t = (0..x.len()).map(|j| self.local.get(i, j) * x[j]).sum::<f64>()
                    + (0..r.len()).map(|j| self.remote.get(i, j) * r[j]).sum::<f64>();
                tau.set(s, i, t);
            }
            xi.row_mut(s).copy_from_slice(&x);
        }
        (xi, tau)
    }

    /// Offline samples `ξ ~ N(0, I)`, `τ ~ proposal` with exact weights.
    pub fn offline(&self, proposal: &GaussianLaw, n: usize, seed: u64) -> Result<SyntheticRun, PipelineError> {
        let stream = stream_seed(seed, "synthetic-offline");
        let mut xi = Mat::zeros(n, self.xi_dim());
        let mut tau = Mat::zeros(n, self.tau_dim());
        let mut y = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for s in 0..n {
            let mut rng = sample_rng(stream, s);
            let x: Vec<f64> = (0..self.xi_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let t = proposal.sample(&mut rng);
            weights.push((self.conditional(&x)?.log_pdf(&t) - proposal.log_pdf(&t)).exp());
            y.push(self.output(&x, &t));
            xi.row_mut(s).copy_from_slice(&x);
            tau.row_mut(s).copy_from_slice(&t);
        }
        Ok(SyntheticRun { xi, tau, y, weights })
    }

    /// A proposal covering the marginal law of `τ` with inflated spread.
    pub fn covering_proposal(&self, inflation: f64) -> Result<GaussianLaw, PipelineError> {
        let m = self.tau_dim();
        let rc = self.conditional_cov();
        let cov = (0..m * m)
            .map(|ij| {
                let (i, j) = (ij / m, ij % m);
                let ll: f64 = (0..self.xi_dim()).map(|k| self.local.get(i, k) * self.local.get(j, k)).sum();
                inflation * inflation * (ll + rc[ij])
            })
            .collect();
        Ok(GaussianLaw::new(vec![0.0; m], cov)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::weighted_moments;

    #[test]
    fn coupled_samples_follow_the_output_law() {
        let sys = LinearGaussianSystem::example();
        let (xi, tau) = sys.coupled(100_000, 1);
        let y: Vec<f64> = (0..xi.rows()).map(|s| sys.output(xi.row(s), tau.row(s))).collect();
        let m = crate::pipeline::moments(&y).unwrap();
        let (mean, var) = sys.output_law();
        assert!((m.mean - mean).abs() < 4.0 * (var / 1e5).sqrt());
        assert!((m.variance / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn exact_weights_recover_the_mean() {
        let sys = LinearGaussianSystem::example();
        let prop = sys.covering_proposal(1.5).unwrap();
        let run = sys.offline(&prop, 20_000, 2).unwrap();
        let m = weighted_moments(&run.y, &run.weights).unwrap();
        let se = crate::pipeline::standard_error(&run.y, &run.weights).unwrap();
        assert!((m.mean - sys.output_law().0).abs() < 4.0 * se);
    }
}
