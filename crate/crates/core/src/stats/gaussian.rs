//! Multivariate normal laws.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::nn::Mat;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `N(mean, cov)` with a cached Cholesky factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    log_det: f64,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self, StatsError> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(StatsError::Shape(format!("covariance has {} entries for dimension {d}", cov.len())));
        }
        let m = DMatrix::from_row_slice(d, d, &cov);
        if (0..d).any(|i| (0..i).any(|j| (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * (1.0 + m[(i, j)].abs()))) {
            return Err(StatsError::Covariance("covariance is not symmetric".into()));
        }
        let l = m.cholesky().ok_or_else(|| StatsError::Covariance("covariance is not positive definite".into()))?.l();
        let chol: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
        let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    /// Sample mean and covariance of the rows of `data`, plus `jitter` on the diagonal.
    pub fn fit(data: &Mat, jitter: f64) -> Result<Self, StatsError> {
        let (n, d) = data.shape();
        if n < 2 {
            return Err(StatsError::Covariance(format!("{n} rows cannot fit a covariance")));
        }
        let mean: Vec<f64> = data.col_sums().as_slice().iter().map(|s| s / n as f64).collect();
        let mut cov = vec![0.0; d * d];
        for r in 0..n {
            let x = data.row(r);
            for i in 0..d {
                for j in 0..=i {
                    cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / (n - 1) as f64 + if i == j { jitter } else { 0.0 };
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.cov[i * self.dim() + i].sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d).map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * z[j]).sum::<f64>()).collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|j| self.chol[i * d + j] * y[j]).sum();
            y[i] = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
        }
        -0.5 * (d as f64 * LN_2PI + self.log_det + y.iter().map(|v| v * v).sum::<f64>())
    }

    pub fn log_pdf_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows()).map(|r| self.log_pdf(x.row(r))).collect()
    }

    /// Largest `|x_i − mean_i| / std_i` over the rows of `data`.
    pub fn max_standard_score(&self, data: &Mat) -> f64 {
        (0..data.rows())
            .flat_map(|r| (0..self.dim()).map(move |i| (r, i)))
            .map(|(r, i)| (data.get(r, i) - self.mean[i]).abs() / self.std(i))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_matches_closed_form() {
        let g = GaussianLaw::new(vec![1.0, -1.0], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        // det = 1.75, inverse = [1, -0.5; -0.5, 2] / 1.75
        let x = [2.0, 0.0];
        let q = (1.0 * 1.0 - 2.0 * 0.5 * 1.0 * 1.0 + 2.0 * 1.0 * 1.0) / 1.75;
        let expect = -0.5 * (2.0 * LN_2PI + 1.75f64.ln() + q);
        assert!((g.log_pdf(&x) - expect).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_moments() {
        let g = GaussianLaw::new(vec![0.5, 2.0, -1.0], vec![1.0, 0.3, 0.0, 0.3, 0.5, 0.1, 0.0, 0.1, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..200_000).map(|_| g.sample(&mut rng)).collect();
        let fit = GaussianLaw::fit(&Mat::from_rows(&rows), 0.0).unwrap();
        for (a, b) in fit.mean.iter().zip(&g.mean) {
            assert!((a - b).abs() < 0.01);
        }
        for (a, b) in fit.cov.iter().zip(&g.cov) {
            assert!((a - b).abs() < 0.02);
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        assert!(GaussianLaw::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
    }
}
