//! One-dimensional Gaussian kernel density estimation.

use rayon::prelude::*;

use super::StatsError;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Debug, PartialEq)]
pub struct Kde {
    pub points: Vec<f64>,
    /// Normalized to sum to one.
    pub weights: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    /// Rule-of-thumb bandwidth `1.06 σ n^{-1/5}`, using the weighted standard
    /// deviation and the effective sample size when weights are given.
    pub fn new(points: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self, StatsError> {
        if points.len() < 2 {
            return Err(StatsError::Degenerate("at least two points are needed".into()));
        }
        let w = weights.unwrap_or_else(|| vec![1.0; points.len()]);
        if w.len() != points.len() {
            return Err(StatsError::Shape(format!("{} weights for {} points", w.len(), points.len())));
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || w.iter().any(|w| !(*w >= 0.0)) {
            return Err(StatsError::Degenerate("weights must be nonnegative with a positive sum".into()));
        }
        let weights: Vec<f64> = w.iter().map(|w| w / s).collect();
        let mean: f64 = points.iter().zip(&weights).map(|(x, w)| w * x).sum();
        let var: f64 = points.iter().zip(&weights).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let n_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let bandwidth = 1.06 * var.sqrt() * n_eff.powf(-0.2);
        Self::with_bandwidth(points, weights, bandwidth)
    }

    pub fn with_bandwidth(points: Vec<f64>, weights: Vec<f64>, bandwidth: f64) -> Result<Self, StatsError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(StatsError::Degenerate(format!("bandwidth {bandwidth} (are all points identical?)")));
        }
        Ok(Self { points, weights, bandwidth })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        self.points.iter().zip(&self.weights).map(|(p, w)| w * (-0.5 * ((x - p) / h).powi(2)).exp()).sum::<f64>()
            * INV_SQRT_2PI
            / h
    }

    pub fn pdf_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.pdf(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_effective_point_is_a_normal_density() {
        let k = Kde::new(vec![0.0, 1.0, -1.0], Some(vec![1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(k, StatsError::Degenerate(_)));
        let k = Kde::with_bandwidth(vec![0.0, 1.0], vec![1.0, 0.0], 0.3).unwrap();
        let x = 0.4;
        let expect = (-0.5 * (x / 0.3f64).powi(2)).exp() * INV_SQRT_2PI / 0.3;
        assert!((k.pdf(x) - expect).abs() < 1e-15);
    }

    #[test]
    fn integrates_to_one_and_is_symmetric() {
        let pts: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.61).sin() * 2.0).collect();
        let k = Kde::new(pts.clone(), None).unwrap();
        let h = 1e-3;
        let total: f64 = (0..20_000).map(|i| k.pdf(-10.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 0.01);
        let mut sym = pts.clone();
        sym.extend(pts.iter().map(|p| -p));
        let k = Kde::new(sym, None).unwrap();
        for x in [0.1, 0.7, 2.5] {
            assert!((k.pdf(x) - k.pdf(-x)).abs() < 1e-12);
            assert!(k.pdf(x) >= 0.0);
        }
    }

    #[test]
    fn equal_weights_match_unweighted() {
        let pts = vec![0.3, -1.2, 2.2, 0.9];
        let a = Kde::new(pts.clone(), None).unwrap();
        let b = Kde::new(pts, Some(vec![2.5; 4])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_points_are_rejected() {
        assert!(Kde::new(vec![1.0; 5], None).is_err());
    }
}
