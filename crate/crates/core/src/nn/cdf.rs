//! Scalar kernels for the element-wise monotone map `z = logit(F(σ(x)))`.
//!
//! `F` is a piecewise-linear CDF on `[0, 1]` with `K` equal-width bins whose
//! masses are `softmax(θ)`. Both tails are evaluated in log space so the map
//! and its derivatives stay finite for |x| in the hundreds.

/// Bin masses, prefix sums and suffix sums for one coordinate.
#[derive(Clone, Debug)]
pub(crate) struct Bins {
    pub p: Vec<f64>,
    /// `cum[k] = Σ_{j<k} p_j`
    pub cum: Vec<f64>,
    /// `tail[k] = Σ_{j≥k} p_j`, with `tail[K] = 0`.
    pub tail: Vec<f64>,
}

impl Bins {
    pub fn from_logits(theta: &[f64]) -> Self {
        let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        let k = p.len();
        let mut cum = vec![0.0; k + 1];
        let mut tail = vec![0.0; k + 1];
        for i in 0..k {
            cum[i + 1] = cum[i] + p[i];
        }
        for i in (0..k).rev() {
            tail[i] = tail[i + 1] + p[i];
        }
        Self { p, cum, tail }
    }

    #[inline]
    fn k(&self) -> usize {
        self.p.len()
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Everything the forward and backward passes need at one point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Point {
    pub z: f64,
    pub log_deriv: f64,
    pub dz_dx: f64,
    pub bin: usize,
    pub r: f64,
    pub u: f64,
    pub v: f64,
    pub f: f64,
    pub omf: f64,
}

pub(crate) fn eval(x: f64, b: &Bins) -> Point {
    let k = b.k();
    let kf = k as f64;
    let u = sigmoid(x);
    let v = sigmoid(-x);
    let log_u = -softplus(-x);
    let log_v = -softplus(x);
    let bin = ((u * kf).floor() as usize).min(k - 1);
    let r = u * kf - bin as f64;
    let omr = if bin == k - 1 { kf * v } else { (bin + 1) as f64 - u * kf };
    let pk = b.p[bin];
    let f = b.cum[bin] + pk * r;
    let omf = b.tail[bin + 1] + pk * omr;
    let log_f = if bin == 0 { (kf * pk).ln() + log_u } else { f.ln() };
    let log_omf = if bin == k - 1 { (kf * pk).ln() + log_v } else { omf.ln() };
    let z = log_f - log_omf;
    let log_deriv = log_u + log_v + (kf * pk).ln() - log_f - log_omf;
    Point { z, log_deriv, dz_dx: log_deriv.exp(), bin, r, u, v, f, omf }
}

/// Writes `∂z/∂θ_l` for every bin logit into `out`.
pub(crate) fn dz_dtheta(pt: &Point, b: &Bins, out: &mut [f64]) {
    let k = b.k();
    for (l, o) in out.iter_mut().enumerate().take(k) {
        let pl = b.p[l];
        *o = if l < pt.bin {
            pl / pt.f
        } else if l > pt.bin {
            -pl / pt.omf
        } else if pt.bin == 0 {
            (1.0 - pl) / pt.omf
        } else if pt.bin == k - 1 {
            -(1.0 - pl) / pt.f
        } else {
            pl * (pt.r - pt.f) / (pt.f * pt.omf)
        };
    }
}

/// Inverse map `z ↦ x`.
pub(crate) fn invert(z: f64, b: &Bins) -> f64 {
    let k = b.k();
    let kf = k as f64;
    let f = sigmoid(z);
    let omf = sigmoid(-z);
    if omf <= b.tail[k - 1] {
        // Last bin: 1 - u = (1 - F) / (K p_last).
        let log_v = -softplus(z) - (kf * b.p[k - 1]).ln();
        let v = log_v.exp();
        return (-v).ln_1p() - log_v;
    }
    if f < b.cum[1] {
        let log_u = -softplus(-z) - (kf * b.p[0]).ln();
        let u = log_u.exp();
        return log_u - (-u).ln_1p();
    }
    // Largest bin index with cum[bin] <= F.
    let bin = b.cum[..k].partition_point(|&c| c <= f).saturating_sub(1).clamp(1, k - 2);
    let pk = b.p[bin];
    let r = (f - b.cum[bin]) / pk;
    let omr = (omf - b.tail[bin + 1]) / pk;
    let u = (bin as f64 + r) / kf;
    let v = ((k - bin - 1) as f64 + omr) / kf;
    u.ln() - v.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bins() -> Bins {
        let theta: Vec<f64> = (0..8).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.6).collect();
        Bins::from_logits(&theta)
    }

    #[test]
    fn uniform_bins_give_identity() {
        let b = Bins::from_logits(&[0.0; 32]);
        for &x in &[-40.0, -3.0, -0.1, 0.0, 0.7, 5.0, 40.0] {
            let p = eval(x, &b);
            assert!((p.z - x).abs() < 1e-9, "x={x} z={}", p.z);
            assert!(p.log_deriv.abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip_including_tails() {
        let b = bins();
        for i in -600..=600 {
            let x = i as f64 * 0.5;
            let z = eval(x, &b).z;
            let back = invert(z, &b);
            assert!((back - x).abs() < 1e-9 * (1.0 + x.abs()), "x={x} back={back}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = bins();
        let eps = 1e-6;
        for &x in &[-20.0, -2.3, -0.4, 0.05, 0.9, 3.1, 25.0] {
            let p = eval(x, &b);
            let fd = (eval(x + eps, &b).z - eval(x - eps, &b).z) / (2.0 * eps);
            assert!((p.dz_dx - fd).abs() < 1e-6 * (1.0 + fd.abs()), "x={x}");

            let theta: Vec<f64> = (0..8).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.6).collect();
            let mut g = vec![0.0; 8];
            dz_dtheta(&p, &b, &mut g);
            for l in 0..8 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[l] += eps;
                tm[l] -= eps;
                let fd = (eval(x, &Bins::from_logits(&tp)).z - eval(x, &Bins::from_logits(&tm)).z) / (2.0 * eps);
                assert!((g[l] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "x={x} l={l} {} vs {fd}", g[l]);
            }
        }
    }
}
