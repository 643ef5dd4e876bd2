//! Reduced coordinates for interface data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DdError;

/// Affine coordinates `d = mean + Σ_m τ_m v_m` with orthonormal `v_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBasis {
    pub mean: Vec<f64>,
    /// Mode vectors, each of length `dofs`.
    pub modes: Vec<Vec<f64>>,
    /// All singular values of the centered snapshot matrix, descending.
    pub singular_values: Vec<f64>,
}

impl EdgeBasis {
    /// Nodal coordinates themselves.
    pub fn identity(dofs: usize) -> Self {
        let modes = (0..dofs).map(|m| (0..dofs).map(|i| if i == m { 1.0 } else { 0.0 }).collect()).collect();
        Self { mean: vec![0.0; dofs], modes, singular_values: vec![] }
    }

    pub fn dofs(&self) -> usize {
        self.mean.len()
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn project(&self, nodal: &[f64]) -> Vec<f64> {
        self.modes.iter().map(|v| v.iter().zip(nodal).zip(&self.mean).map(|((v, d), m)| v * (d - m)).sum()).collect()
    }

    pub fn lift(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (v, &c) in self.modes.iter().zip(coeffs) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        out
    }
}

/// Mean-centered POD of `snapshots` (one nodal vector each), keeping `retained` modes.
pub fn build_pod(snapshots: &[Vec<f64>], retained: usize) -> Result<EdgeBasis, DdError> {
    let n = snapshots.len();
    let dofs = snapshots.first().map_or(0, Vec::len);
    if n == 0 || dofs == 0 {
        return Err(DdError::Pod("no snapshots".into()));
    }
    if snapshots.iter().any(|s| s.len() != dofs) {
        return Err(DdError::Pod("snapshots differ in length".into()));
    }
    let mean: Vec<f64> = (0..dofs).map(|i| snapshots.iter().map(|s| s[i]).sum::<f64>() / n as f64).collect();
    let a = DMatrix::from_fn(dofs, n, |i, k| snapshots[k][i] - mean[i]);
    let svd = a.svd(true, false);
    let u = svd.u.ok_or_else(|| DdError::Pod("SVD did not return left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let top = singular_values.first().copied().unwrap_or(0.0);
    let rank = singular_values.iter().filter(|&&s| s > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
    if retained > rank {
        return Err(DdError::Pod(format!(
            "{retained} modes requested but the snapshots have rank {rank}; singular values {singular_values:?}"
        )));
    }
    let modes = order
        .iter()
        .take(retained)
        .map(|&k| {
            let col: Vec<f64> = u.column(k).iter().copied().collect();
            let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            col.into_iter().map(|v| sign * v).collect()
        })
        .collect();
    Ok(EdgeBasis { mean, modes, singular_values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshots() -> Vec<Vec<f64>> {
        (0..12)
            .map(|k| {
                let t = k as f64 * 0.37;
                (0..5)
                    .map(|i| {
                        1.0 + t.sin() * (i as f64 + 1.0)
                            + (2.0 * t).cos() * (i as f64 * 0.7).cos()
                            + 0.01 * (t * i as f64).sin()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn modes_are_orthonormal() {
        let b = build_pod(&snapshots(), 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = b.modes[i].iter().zip(&b.modes[j]).map(|(a, b)| a * b).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_one_family_gives_its_direction() {
        let v = [1.0, 2.0, -2.0];
        let snaps: Vec<Vec<f64>> = (0..5).map(|k| v.iter().map(|x| 3.0 + k as f64 * x).collect()).collect();
        let b = build_pod(&snaps, 1).unwrap();
        for (m, x) in b.modes[0].iter().zip(v) {
            assert!((m.abs() - x.abs() / 3.0).abs() < 1e-12);
        }
        assert!(b.singular_values[1..].iter().all(|&s| s < 1e-10));
        assert!(build_pod(&snaps, 2).is_err());
    }

    #[test]
    fn projection_round_trip_and_optimality() {
        let s = snapshots();
        let b = build_pod(&s, 2).unwrap();
        let lifted = b.lift(&[0.7, -0.2]);
        let back = b.project(&lifted);
        assert!((back[0] - 0.7).abs() < 1e-10 && (back[1] + 0.2).abs() < 1e-10);
        // Projection residual never exceeds the residual of any other coefficient choice.
        let x = &s[3];
        let best = b.lift(&b.project(x));
        let r_best: f64 = best.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        for trial in [[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0]] {
            let alt = b.lift(&trial);
            let r: f64 = alt.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(r_best <= r + 1e-12);
        }
    }
}
