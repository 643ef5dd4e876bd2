//! Gaussian mixtures and the relative Kullback–Leibler error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gaussian::GaussianLaw;
use super::StatsError;
use crate::nn::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureLaw {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianLaw>,
}

const MU1: [f64; 16] = [-1.0, -1.0, -0.3, -0.3, -0.4, -0.4, -1.6, -1.6, -0.8, -0.8, -0.5, -0.5, -0.5, -0.3, -1.0, -1.0];
const MU3: [f64; 16] = [32.0, 32.0, 32.6, 32.6, 32.8, 32.8, 33.2, 33.2, 32.4, 32.4, 30.8, 30.8, 31.0, 31.0, 31.6, 31.6];

impl MixtureLaw {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianLaw>) -> Result<Self, StatsError> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(StatsError::Shape(format!("{} weights for {} components", weights.len(), components.len())));
        }
        if weights.iter().any(|&b| !(b > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(StatsError::Mixture(format!("weights {weights:?} must be positive and sum to one")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(StatsError::Shape("components differ in dimension".into()));
        }
        Ok(Self { weights, components })
    }

    /// The three-component 16-dimensional benchmark. Covariances are
    /// `Σ̃Σ̃ᵀ` with `Σ̃` entries uniform on `[0, 1]`, drawn from `seed`.
    pub fn benchmark16(seed: u64) -> Result<Self, StatsError> {
        let mu2: Vec<f64> = MU1.iter().zip(&MU3).map(|(a, b)| 0.5 * (a + b)).collect();
        let means = [MU1.to_vec(), mu2, MU3.to_vec()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = means
            .into_iter()
            .map(|mean| {
                let f: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
                let cov =
                    (0..256).map(|ij| (0..16).map(|k| f[(ij / 16) * 16 + k] * f[(ij % 16) * 16 + k]).sum()).collect();
                GaussianLaw::new(mean, cov)
            })
            .collect::<Result<_, _>>()?;
        Self::new(vec![0.3, 0.4, 0.3], components)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.weights.iter().zip(&self.components).map(|(b, c)| b * c.mean[i]).sum()).collect()
    }

    /// Law of the coordinates `idx`.
    pub fn marginal(&self, idx: &[usize]) -> Result<Self, StatsError> {
        let d = self.dim();
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = idx.iter().map(|&i| c.mean[i]).collect();
                let cov = idx.iter().flat_map(|&i| idx.iter().map(move |&j| c.cov[i * d + j])).collect();
                GaussianLaw::new(mean, cov)
            })
            .collect::<Result<_, _>>()?;
        Self::new(self.weights.clone(), components)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self.weights.iter().zip(&self.components).map(|(b, c)| b.ln() + c.log_pdf(x)).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    pub fn log_pdf_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows()).into_par_iter().map(|r| self.log_pdf(x.row(r))).collect()
    }

    /// Categorical component choice, then a Gaussian draw.
    pub fn sample(&self, n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Mat::zeros(n, self.dim());
        for r in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (m, b) in self.weights.iter().enumerate() {
                acc += b;
                if u < acc {
                    k = m;
                    break;
                }
            }
            let x = self.components[k].sample(&mut rng);
            out.row_mut(r).copy_from_slice(&x);
        }
        out
    }
}

/// `δ = KL(p_ref ‖ p_est) / H(p_ref)`, both by Monte Carlo over samples of
/// the reference law.
pub fn relative_kl_error(log_ref: &[f64], log_est: &[f64]) -> Result<f64, StatsError> {
    if log_ref.len() != log_est.len() || log_ref.is_empty() {
        return Err(StatsError::Shape("log-density columns must be non-empty and equally long".into()));
    }
    let n = log_ref.len() as f64;
    let entropy = -log_ref.iter().sum::<f64>() / n;
    if !(entropy > 0.0) {
        return Err(StatsError::Degenerate(format!("reference entropy estimate {entropy} is not positive")));
    }
    let kl = log_ref.iter().zip(log_est).map(|(r, e)| r - e).sum::<f64>() / n;
    Ok(kl / entropy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_parameters() {
        let m = MixtureLaw::benchmark16(0).unwrap();
        assert_eq!(m.weights, vec![0.3, 0.4, 0.3]);
        assert_eq!(m.components[1].mean[6], 0.5 * (-1.6 + 33.2));
        let c = &m.components[0].cov;
        assert!((0..16).all(|i| (0..16).all(|j| c[i * 16 + j] == c[j * 16 + i])));
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        let g = |m: f64, v: f64| GaussianLaw::new(vec![m], vec![v]).unwrap();
        let law = MixtureLaw::new(vec![0.2, 0.5, 0.3], vec![g(-2.0, 0.5), g(0.0, 1.0), g(3.0, 2.0)]).unwrap();
        let h = 1e-3;
        let total: f64 = (0..40_000).map(|k| -20.0 + (k as f64 + 0.5) * h).map(|x| law.log_pdf(&[x]).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sample_mean_matches() {
        let law = MixtureLaw::benchmark16(3).unwrap();
        let x = law.sample(200_000, 4);
        let mean = law.mean();
        for i in [0, 7, 15] {
            let col: Vec<f64> = (0..x.rows()).map(|r| x.get(r, i)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            assert!((m - mean[i]).abs() < 3.5 * sd / (col.len() as f64).sqrt(), "coordinate {i}");
        }
    }

    #[test]
    fn shifted_normal_relative_error() {
        // Analytic: KL = 0.125, H = 0.5 ln(2πe) = 1.418939.
        let r = GaussianLaw::new(vec![0.0], vec![1.0]).unwrap();
        let e = GaussianLaw::new(vec![0.5], vec![1.0]).unwrap();
        let law = MixtureLaw::new(vec![1.0], vec![r.clone()]).unwrap();
        let x = law.sample(1_000_000, 5);
        let lr = r.log_pdf_rows(&x);
        let le = e.log_pdf_rows(&x);
        let d = relative_kl_error(&lr, &le).unwrap();
        assert!((d - 0.125 / 1.418_938_533_204_672_7).abs() < 2e-3, "{d}");
        assert!(relative_kl_error(&lr, &lr).unwrap().abs() < 1e-15);
    }
}
