//! Self-normalized importance-sampling estimators.

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const WEIGHT_CLAMP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

fn total(w: &[f64]) -> Result<f64, PipelineError> {
    let s: f64 = w.iter().sum();
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(PipelineError::Weights(format!("weights sum to {s}")))
    }
}

/// `E = Σwy/Σw`, `V = Σw(y−E)²/Σw`.
pub fn weighted_moments(y: &[f64], w: &[f64]) -> Result<Moments, PipelineError> {
    if y.len() != w.len() {
        return Err(PipelineError::Shape(format!("{} outputs and {} weights", y.len(), w.len())));
    }
    let s = total(w)?;
    let mean = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / s;
    let variance = y.iter().zip(w).map(|(y, w)| w * (y - mean) * (y - mean)).sum::<f64>() / s;
    Ok(Moments { mean, variance })
}

/// Plain sample moments in population form.
pub fn moments(y: &[f64]) -> Result<Moments, PipelineError> {
    weighted_moments(y, &vec![1.0; y.len()])
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Weighted probability that the output does not exceed `a`.
pub fn exceedance_probability(y: &[f64], w: &[f64], a: f64) -> Result<f64, PipelineError> {
    let s = total(w)?;
    Ok(y.iter().zip(w).filter(|(y, _)| **y <= a).map(|(_, w)| w).sum::<f64>() / s)
}

/// Delta-method standard error of the self-normalized mean of `g(y)`.
pub fn standard_error(g: &[f64], w: &[f64]) -> Result<f64, PipelineError> {
    let s = total(w)?;
    let m = g.iter().zip(w).map(|(g, w)| w * g).sum::<f64>() / s;
    Ok(g.iter().zip(w).map(|(g, w)| (w * (g - m)).powi(2)).sum::<f64>().sqrt() / s)
}

/// `w = exp(log π̂ − log p)` clamped to `[0, WEIGHT_CLAMP]`; returns the
/// weights and the number of clamped entries.
pub fn importance_weights(log_target: &[f64], log_proposal: &[f64]) -> Result<(Vec<f64>, usize), PipelineError> {
    if log_target.len() != log_proposal.len() {
        return Err(PipelineError::Shape("log-density columns differ in length".into()));
    }
    let mut clamped = 0;
    let w = log_target
        .iter()
        .zip(log_proposal)
        .enumerate()
        .map(|(s, (&t, &p))| {
            if t.is_nan() || p.is_nan() || t == f64::INFINITY || !p.is_finite() {
                return Err(PipelineError::Weights(format!("sample {s}: log target {t}, log proposal {p}")));
            }
            let w = (t - p).exp();
            if w > WEIGHT_CLAMP {
                clamped += 1;
                Ok(WEIGHT_CLAMP)
            } else {
                Ok(w)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((w, clamped))
}

/// Relative errors `(|E − E_ref|/|E_ref|, |V − V_ref|/|V_ref|)`.
pub fn error_metrics(est: &Moments, reference: &Moments) -> Result<(f64, f64), PipelineError> {
    if reference.mean == 0.0 || reference.variance == 0.0 {
        return Err(PipelineError::Weights("reference mean or variance is zero".into()));
    }
    Ok((
        ((est.mean - reference.mean) / reference.mean).abs(),
        ((est.variance - reference.variance) / reference.variance).abs(),
    ))
}
