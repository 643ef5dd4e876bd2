//! Deterministic local solvers on rectangles.

mod banded;
mod fem;
mod mesh;

pub use banded::{BandMatrix, Cholesky};
pub use fem::{
    BoundarySpec, Diffusion, FluxRecovery, InterfaceKind, LocalOperator, ScalarField, SideCondition, SideData,
};
pub use mesh::{BoundaryTag, Mesh, Rect, Side};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PdeError {
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("diffusion coefficient {value} at node {node} is not positive")]
    NonPositiveDiffusion { node: usize, value: f64 },
    #[error("stiffness matrix is singular at row {row}")]
    Singular { row: usize },
    #[error("no data supplied for the {0:?} interface")]
    MissingInterfaceData(Side),
    #[error("non-finite solution value at node {node}")]
    NonFinite { node: usize },
    #[error("segment {0:?} does not lie on mesh lines")]
    OffGrid(Segment),
}

/// A straight segment along a mesh line, used for output functionals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    /// `x = at`, `from ≤ y ≤ to`.
    Vertical { at: f64, from: f64, to: f64 },
    /// `y = at`, `from ≤ x ≤ to`.
    Horizontal { at: f64, from: f64, to: f64 },
}

/// Trapezoidal line integral of the nodal function `u` along `seg`.
pub fn line_integral(mesh: &Mesh, u: &[f64], seg: &Segment) -> Result<f64, PdeError> {
    let r = &mesh.rect;
    let off = || PdeError::OffGrid(*seg);
    let nodes: Vec<usize> = match *seg {
        Segment::Vertical { at, from, to } => {
            let i = mesh.grid_index(at, r.x0, mesh.nx).ok_or_else(off)?;
            let j0 = mesh.grid_index(from, r.y0, mesh.ny).ok_or_else(off)?;
            let j1 = mesh.grid_index(to, r.y0, mesh.ny).ok_or_else(off)?;
            (j0.min(j1)..=j0.max(j1)).map(|j| mesh.node(i, j)).collect()
        }
        Segment::Horizontal { at, from, to } => {
            let j = mesh.grid_index(at, r.y0, mesh.ny).ok_or_else(off)?;
            let i0 = mesh.grid_index(from, r.x0, mesh.nx).ok_or_else(off)?;
            let i1 = mesh.grid_index(to, r.x0, mesh.nx).ok_or_else(off)?;
            (i0.min(i1)..=i0.max(i1)).map(|i| mesh.node(i, j)).collect()
        }
    };
    Ok(nodes.windows(2).map(|w| 0.5 * mesh.h * (u[w[0]] + u[w[1]])).sum())
}

/// L2 norm of `u_h − exact` with 3×3 Gauss quadrature per cell.
pub fn l2_error(mesh: &Mesh, u: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    const P: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
    const W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    let mut acc = 0.0;
    for i in 0..mesh.nx {
        for j in 0..mesh.ny {
            let nodes = mesh.element_nodes(i, j);
            let [x0, y0] = mesh.coords(nodes[0]);
            for (a, &xi) in P.iter().enumerate() {
                for (b, &eta) in P.iter().enumerate() {
                    let phi = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
                    let uh: f64 = phi.iter().zip(&nodes).map(|(p, &k)| p * u[k]).sum();
                    let e = uh - exact(x0 + xi * mesh.h, y0 + eta * mesh.h);
                    acc += W[a] * W[b] * mesh.h * mesh.h * e * e;
                }
            }
        }
    }
    acc.sqrt()
}

/// Relative discrete L2 difference `‖a − b‖ / ‖b‖` with trapezoidal weights.
pub fn relative_l2(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let w = mesh.trapezoid_weights();
    let num: f64 = w.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y) * (x - y)).sum();
    let den: f64 = w.iter().zip(b).map(|(w, y)| w * y * y).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_line_integrals() {
        let mesh = Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), 0.125).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        let y: Vec<f64> = mesh.nodes().map(|p| p[1]).collect();
        let seg = Segment::Vertical { at: 0.5, from: 0.0, to: 1.0 };
        assert!((line_integral(&mesh, &ones, &seg).unwrap() - 1.0).abs() < 1e-14);
        assert!((line_integral(&mesh, &y, &seg).unwrap() - 0.5).abs() < 1e-14);
        let off = Segment::Vertical { at: 0.3, from: 0.0, to: 1.0 };
        assert!(matches!(line_integral(&mesh, &ones, &off), Err(PdeError::OffGrid(_))));
    }
}
