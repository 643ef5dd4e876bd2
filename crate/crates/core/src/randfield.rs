//! Karhunen–Loève expansions of Gaussian-correlated diffusion fields and the
//! truncated-normal law of their coefficients.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::pde::Mesh;

/// Nodal fields must exceed this value everywhere.
pub const ELLIPTICITY_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("invalid field configuration: {0}")]
    Config(String),
    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),
    #[error("diffusion {value} at node {node} violates the ellipticity floor")]
    Ellipticity { node: usize, value: f64 },
    #[error("expected {expected} coefficients, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("KL basis file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `a(x) = a0 + Σ_m √λ_m φ_m(x) ξ_m` with covariance
/// `σ² exp(−|Δx|/L − |Δy|/L)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub mean: f64,
    pub sigma: f64,
    pub corr_len: f64,
    pub modes: usize,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.sigma >= 0.0) {
            return Err(FieldError::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(self.corr_len > 0.0) {
            return Err(FieldError::Config(format!("correlation length must be positive, got {}", self.corr_len)));
        }
        if self.modes == 0 {
            return Err(FieldError::Config("at least one KL mode is required".into()));
        }
        Ok(())
    }

    pub fn covariance(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        self.sigma * self.sigma * (-((p[0] - q[0]).abs() + (p[1] - q[1]).abs()) / self.corr_len).exp()
    }
}

/// Leading eigenpairs on mesh nodes, orthonormal in the trapezoidal inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct KlBasis {
    pub eigenvalues: Vec<f64>,
    /// `nodes × modes`, row-major.
    pub eigenfunctions: Vec<f64>,
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl KlBasis {
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn phi(&self, node: usize, mode: usize) -> f64 {
        self.eigenfunctions[node * self.modes() + mode]
    }

    /// `⟨φ_m, φ_k⟩_w`.
    pub fn inner(&self, m: usize, k: usize) -> f64 {
        (0..self.num_nodes()).map(|n| self.weights[n] * self.phi(n, m) * self.phi(n, k)).sum()
    }
}

/// Nyström discretization on the nodes of `mesh`; returns the top `cfg.modes`
/// eigenpairs and, separately, the sum of all eigenvalues.
pub fn kl_expand(cfg: &FieldConfig, mesh: &Mesh) -> Result<(KlBasis, f64), FieldError> {
    cfg.validate()?;
    let nodes: Vec<[f64; 2]> = mesh.nodes().collect();
    let weights = mesh.trapezoid_weights();
    let n = nodes.len();
    if cfg.modes > n {
        return Err(FieldError::Config(format!("{} modes requested from {n} nodes", cfg.modes)));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| sw[i] * cfg.covariance(nodes[i], nodes[j]) * sw[j]);
    let eig = SymmetricEigen::try_new(b, 1e-14, 10_000)
        .ok_or_else(|| FieldError::Eigen(format!("symmetric eigen-solver did not converge for {n} nodes")))?;
    let total: f64 = eig.eigenvalues.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let m = cfg.modes;
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = vec![0.0; n * m];
    for (k, &idx) in order.iter().take(m).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let col = eig.eigenvectors.column(idx);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for node in 0..n {
            eigenfunctions[node * m + k] = sign * col[node] / sw[node];
        }
    }
    Ok((KlBasis { eigenvalues, eigenfunctions, nodes, weights }, total))
}

/// Nodal values of the field for coefficients `xi`.
pub fn evaluate_field(basis: &KlBasis, cfg: &FieldConfig, xi: &[f64]) -> Result<Vec<f64>, FieldError> {
    let m = basis.modes();
    if xi.len() != m {
        return Err(FieldError::Shape { expected: m, got: xi.len() });
    }
    let amp: Vec<f64> = basis.eigenvalues.iter().zip(xi).map(|(l, x)| l.sqrt() * x).collect();
    let field: Vec<f64> = (0..basis.num_nodes())
        .map(|n| cfg.mean + basis.eigenfunctions[n * m..(n + 1) * m].iter().zip(&amp).map(|(p, a)| p * a).sum::<f64>())
        .collect();
    if let Some(node) = field.iter().position(|&v| !(v > ELLIPTICITY_FLOOR)) {
        return Err(FieldError::Ellipticity { node, value: field[node] });
    }
    Ok(field)
}

/// Independent `N(0, std²)` coordinates conditioned on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for TruncatedNormal {
    fn default() -> Self {
        Self { std: 0.5, lo: -1.0, hi: 1.0 }
    }
}

impl TruncatedNormal {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = Normal::new(0.0, self.std).expect("positive std");
        loop {
            let v: f64 = rng.sample(d);
            if (self.lo..=self.hi).contains(&v) {
                return v;
            }
        }
    }

    pub fn sample_vec<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.sample(rng)).collect()
    }

    /// `n` vectors of length `dim`, reproducible from `seed`.
    pub fn sample_inputs(&self, dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_vec(&mut rng, dim)).collect()
    }

    /// Log-density of one vector (−∞ outside the box).
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let z = normal_cdf(self.hi / self.std) - normal_cdf(self.lo / self.std);
        let per = -0.5 * (2.0 * std::f64::consts::PI).ln() - self.std.ln() - z.ln();
        x.iter()
            .map(
                |&v| {
                    if (self.lo..=self.hi).contains(&v) {
                        per - 0.5 * (v / self.std).powi(2)
                    } else {
                        f64::NEG_INFINITY
                    }
                },
            )
            .sum()
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function, relative accuracy about 1e-7 (Numerical Recipes `erfcc`).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Writes the basis as text: an `eigenvalues` row, then `x y φ_1 … φ_M` per node.
pub fn write_basis<W: Write>(mut w: W, subdomain: usize, basis: &KlBasis) -> Result<(), FieldError> {
    writeln!(w, "# kl subdomain={subdomain} modes={} nodes={}", basis.modes(), basis.num_nodes())?;
    let ev: Vec<String> = basis.eigenvalues.iter().map(|v| format!("{v:.17e}")).collect();
    writeln!(w, "eigenvalues {}", ev.join(" "))?;
    for n in 0..basis.num_nodes() {
        let [x, y] = basis.nodes[n];
        let row: Vec<String> = (0..basis.modes()).map(|m| format!("{:.17e}", basis.phi(n, m))).collect();
        writeln!(w, "{x:.17e} {y:.17e} {:.17e} {}", basis.weights[n], row.join(" "))?;
    }
    Ok(())
}

/// Reads a basis written by [`write_basis`], returning the subdomain id.
pub fn read_basis<R: BufRead>(r: R) -> Result<(usize, KlBasis), FieldError> {
    let bad = |m: &str| FieldError::Format(m.to_string());
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))??;
    let sub = header
        .split_whitespace()
        .find_map(|t| t.strip_prefix("subdomain="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing subdomain id in header"))?;
    let evline = lines.next().ok_or_else(|| bad("missing eigenvalue row"))??;
    let mut it = evline.split_whitespace();
    if it.next() != Some("eigenvalues") {
        return Err(bad("second line must start with 'eigenvalues'"));
    }
    let eigenvalues: Vec<f64> = it.map(|t| t.parse().map_err(|_| bad("bad eigenvalue"))).collect::<Result<_, _>>()?;
    let m = eigenvalues.len();
    let (mut nodes, mut weights, mut eigenfunctions) = (Vec::new(), Vec::new(), Vec::new());
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> =
            line.split_whitespace().map(|t| t.parse().map_err(|_| bad("bad number"))).collect::<Result<_, _>>()?;
        if vals.len() != m + 3 {
            return Err(bad("row width does not match the mode count"));
        }
        nodes.push([vals[0], vals[1]]);
        weights.push(vals[2]);
        eigenfunctions.extend_from_slice(&vals[3..]);
    }
    Ok((sub, KlBasis { eigenvalues, eigenfunctions, nodes, weights }))
}

pub fn save_basis(path: &Path, subdomain: usize, basis: &KlBasis) -> Result<(), FieldError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_basis(&mut w, subdomain, basis)?;
    w.flush()?;
    Ok(())
}

pub fn load_basis(path: &Path) -> Result<(usize, KlBasis), FieldError> {
    read_basis(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Rect;

    fn unit_mesh(h: f64) -> Mesh {
        Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), h).unwrap()
    }

    #[test]
    fn eigenpairs_are_sorted_orthonormal_and_trace_exact() {
        let cfg = FieldConfig { mean: 2.0, sigma: 0.5, corr_len: 1.0, modes: 14 };
        let mesh = unit_mesh(0.125);
        let (b, total) = kl_expand(&cfg, &mesh).unwrap();
        assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for m in 0..14 {
            for k in 0..14 {
                let want = if m == k { 1.0 } else { 0.0 };
                assert!((b.inner(m, k) - want).abs() < 1e-8);
            }
        }
        assert!((total - 0.25 * mesh.rect.area()).abs() < 1e-10);
    }

    #[test]
    fn zero_sigma_gives_the_mean() {
        let cfg = FieldConfig { mean: 2.0, sigma: 0.0, corr_len: 1.0, modes: 3 };
        let (b, _) = kl_expand(&cfg, &unit_mesh(0.25)).unwrap();
        assert!(b.eigenvalues.iter().all(|&l| l == 0.0));
        let f = evaluate_field(&b, &cfg, &[0.3, -0.2, 1.0]).unwrap();
        assert!(f.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn field_is_affine_in_the_coefficients() {
        let cfg = FieldConfig { mean: 2.0, sigma: 0.5, corr_len: 1.0, modes: 4 };
        let (b, _) = kl_expand(&cfg, &unit_mesh(0.25)).unwrap();
        let x1 = [0.1, -0.3, 0.2, 0.05];
        let x2 = [-0.2, 0.1, 0.4, -0.5];
        let s: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let f0 = evaluate_field(&b, &cfg, &[0.0; 4]).unwrap();
        let (f1, f2, fs) = (
            evaluate_field(&b, &cfg, &x1).unwrap(),
            evaluate_field(&b, &cfg, &x2).unwrap(),
            evaluate_field(&b, &cfg, &s).unwrap(),
        );
        for n in 0..f0.len() {
            assert!(((fs[n] - f0[n]) - ((f1[n] - f0[n]) + (f2[n] - f0[n]))).abs() < 1e-14);
        }
    }

    #[test]
    fn non_positive_field_is_rejected() {
        let cfg = FieldConfig { mean: 0.1, sigma: 0.5, corr_len: 1.0, modes: 1 };
        let (b, _) = kl_expand(&cfg, &unit_mesh(0.25)).unwrap();
        assert!(matches!(evaluate_field(&b, &cfg, &[-5.0]), Err(FieldError::Ellipticity { .. })));
    }

    #[test]
    fn truncated_normal_moments() {
        let law = TruncatedNormal::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = law.sample(&mut rng);
            assert!((-1.0..=1.0).contains(&v));
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((std - 0.439_812_8).abs() < 0.01 * 0.439_812_8);
        assert!(mean.abs() < 3.0 * std / (n as f64).sqrt());
    }

    #[test]
    fn basis_file_round_trip() {
        let cfg = FieldConfig { mean: 2.0, sigma: 0.5, corr_len: 1.0, modes: 3 };
        let (b, _) = kl_expand(&cfg, &unit_mesh(0.25)).unwrap();
        let mut buf = Vec::new();
        write_basis(&mut buf, 2, &b).unwrap();
        let (id, back) = read_basis(buf.as_slice()).unwrap();
        assert_eq!(id, 2);
        assert_eq!(back, b);
    }
}
