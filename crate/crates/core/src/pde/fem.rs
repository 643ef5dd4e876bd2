//! Bilinear finite elements for `-∇·(a∇u) = f` on a rectangle.

use serde::{Deserialize, Serialize};

use super::banded::{BandMatrix, Cholesky};
use super::mesh::{Mesh, Side};
use super::PdeError;

/// A scalar function of position.
#[derive(Clone, Copy, Debug)]
pub enum ScalarField {
    Constant(f64),
    Function(fn(f64, f64) -> f64),
}

impl ScalarField {
    #[inline]
    pub fn at(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Function(f) => f(x, y),
        }
    }
}

/// Diffusion coefficient, bilinear within each cell.
#[derive(Clone, Copy, Debug)]
pub enum Diffusion<'a> {
    /// One value per mesh node.
    Nodal(&'a [f64]),
    /// Four corner values per cell (counter-clockwise from the lower left),
    /// for coefficients that jump across cell edges. Cell `(i, j)` is at
    /// index `i * ny + j`.
    PerElement(&'a [[f64; 4]]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterfaceKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideCondition {
    /// Part of the physical boundary, with Dirichlet data from [`BoundarySpec::exterior`].
    Exterior,
    Interface(InterfaceKind),
}

#[derive(Clone, Copy, Debug)]
pub struct BoundarySpec {
    /// Indexed by [`Side::index`].
    pub sides: [SideCondition; 4],
    pub exterior: ScalarField,
}

impl BoundarySpec {
    /// Homogeneous Dirichlet data on the whole boundary.
    pub fn all_exterior() -> Self {
        Self { sides: [SideCondition::Exterior; 4], exterior: ScalarField::Constant(0.0) }
    }

    pub fn with_interface(mut self, side: Side, kind: InterfaceKind) -> Self {
        self.sides[side.index()] = SideCondition::Interface(kind);
        self
    }

    pub fn condition(&self, side: Side) -> SideCondition {
        self.sides[side.index()]
    }
}

/// How normal fluxes are recovered from a discrete solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxRecovery {
    /// Nodal residual of the unconstrained Galerkin system divided by `h`.
    /// Consistent with the Neumann load, so a Dirichlet–Neumann fixed point
    /// reproduces the monolithic discrete solution exactly.
    #[default]
    Residual,
    /// `a · (u_boundary − u_inner) / h` across the first interior cell layer.
    OneSided,
}

/// Data attached to one interface side of a [`LocalOperator`].
#[derive(Clone, Copy, Debug)]
pub struct SideData<'a> {
    pub side: Side,
    pub values: &'a [f64],
}

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

#[inline]
fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

#[inline]
fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [[-(1.0 - eta), -(1.0 - xi)], [1.0 - eta, -xi], [eta, xi], [-eta, 1.0 - xi]]
}

/// Per Gauss point: shape values and the `∇φ_a·∇φ_b` matrix weighted by 1/4.
fn reference_tables() -> Vec<([f64; 4], [[f64; 4]; 4])> {
    let mut out = Vec::with_capacity(4);
    for &xi in &GAUSS {
        for &eta in &GAUSS {
            let g = shape_grad(xi, eta);
            let mut k = [[0.0; 4]; 4];
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] = 0.25 * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
            out.push((shape(xi, eta), k));
        }
    }
    out
}

/// Assembled and factorized local problem with fixed coefficient and
/// boundary-condition types; boundary data vary per [`LocalOperator::solve`].
#[derive(Clone, Debug)]
pub struct LocalOperator {
    mesh: Mesh,
    bc: BoundarySpec,
    stiffness: BandMatrix,
    load: Vec<f64>,
    factor: Cholesky,
    constrained: Vec<bool>,
    /// `(free row, constrained column, K[row][col])` for Dirichlet lifting.
    lifting: Vec<(usize, usize, f64)>,
    /// Diffusion value seen at each node (from an adjacent cell for jumps).
    nodal_a: Vec<f64>,
}

impl LocalOperator {
    pub fn assemble(
        mesh: &Mesh,
        diffusion: Diffusion<'_>,
        source: ScalarField,
        bc: BoundarySpec,
    ) -> Result<Self, PdeError> {
        let n = mesh.num_nodes();
        match diffusion {
            Diffusion::Nodal(a) if a.len() != n => {
                return Err(PdeError::Shape(format!("{} nodal diffusion values for {n} nodes", a.len())));
            }
            Diffusion::PerElement(a) if a.len() != mesh.num_elements() => {
                return Err(PdeError::Shape(format!(
                    "{} cell diffusion values for {} cells",
                    a.len(),
                    mesh.num_elements()
                )));
            }
            _ => {}
        }
        let mut nodal_a = vec![0.0; n];
        match diffusion {
            Diffusion::Nodal(a) => nodal_a.copy_from_slice(a),
            Diffusion::PerElement(a) => {
                for i in 0..mesh.nx {
                    for j in 0..mesh.ny {
                        for (c, &node) in mesh.element_nodes(i, j).iter().enumerate() {
                            nodal_a[node] = a[i * mesh.ny + j][c];
                        }
                    }
                }
            }
        }
        if let Some(k) = nodal_a.iter().position(|&v| !(v > 0.0)) {
            return Err(PdeError::NonPositiveDiffusion { node: k, value: nodal_a[k] });
        }

        let tables = reference_tables();
        let h = mesh.h;
        let mut stiffness = BandMatrix::zeros(n, mesh.ny + 2);
        let mut load = vec![0.0; n];
        for i in 0..mesh.nx {
            for j in 0..mesh.ny {
                let nodes = mesh.element_nodes(i, j);
                let corner_a: [f64; 4] = match diffusion {
                    Diffusion::Nodal(a) => nodes.map(|k| a[k]),
                    Diffusion::PerElement(a) => a[i * mesh.ny + j],
                };
                let [x0, y0] = mesh.coords(nodes[0]);
                let mut ke = [[0.0; 4]; 4];
                let mut fe = [0.0; 4];
                for (q, (phi, kq)) in tables.iter().enumerate() {
                    let aq: f64 = phi.iter().zip(&corner_a).map(|(p, a)| p * a).sum();
                    let (xq, yq) = (x0 + GAUSS[q / 2] * h, y0 + GAUSS[q % 2] * h);
                    let fq = source.at(xq, yq);
                    for a in 0..4 {
                        for b in 0..4 {
                            ke[a][b] += aq * kq[a][b];
                        }
                        fe[a] += 0.25 * h * h * fq * phi[a];
                    }
                }
                for a in 0..4 {
                    load[nodes[a]] += fe[a];
                    // Storage is symmetric, so each unordered pair is added once.
                    for b in 0..=a {
                        stiffness.add(nodes[a], nodes[b], ke[a][b]);
                    }
                }
            }
        }

        let mut constrained = vec![false; n];
        for c in mesh.corners() {
            constrained[c] = true;
        }
        for side in Side::ALL {
            if matches!(
                bc.condition(side),
                SideCondition::Exterior | SideCondition::Interface(InterfaceKind::Dirichlet)
            ) {
                for k in mesh.side_nodes(side) {
                    constrained[k] = true;
                }
            }
        }
        let mut system = stiffness.clone();
        let mut lifting = Vec::new();
        for c in (0..n).filter(|&c| constrained[c]) {
            for r in system.band_range(c) {
                if r != c {
                    let v = system.get(r, c);
                    if v != 0.0 && !constrained[r] {
                        lifting.push((r, c, v));
                    }
                    system.set(r, c, 0.0);
                }
            }
            system.set(c, c, 1.0);
        }
        let factor = system.cholesky()?;
        Ok(Self { mesh: mesh.clone(), bc, stiffness, load, factor, constrained, lifting, nodal_a })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.bc
    }

    /// Solves with the given data on every interface side.
    ///
    /// Dirichlet data are nodal traces; Neumann data are the neighbour's
    /// outward normal flux, i.e. the flux entering this subdomain.
    pub fn solve(&self, data: &[SideData<'_>]) -> Result<Vec<f64>, PdeError> {
        let mesh = &self.mesh;
        let n = mesh.num_nodes();
        let mut g = vec![0.0; n];
        for c in (0..n).filter(|&c| self.constrained[c]) {
            let [x, y] = mesh.coords(c);
            g[c] = self.bc.exterior.at(x, y);
        }
        let mut rhs = self.load.clone();
        for side in Side::ALL {
            let SideCondition::Interface(kind) = self.bc.condition(side) else { continue };
            let d = data.iter().find(|d| d.side == side).ok_or(PdeError::MissingInterfaceData(side))?;
            let nodes = mesh.side_nodes(side);
            if d.values.len() != nodes.len() {
                return Err(PdeError::Shape(format!("{side:?} needs {} values, got {}", nodes.len(), d.values.len())));
            }
            for (&k, &v) in nodes.iter().zip(d.values) {
                match kind {
                    InterfaceKind::Dirichlet => g[k] = v,
                    InterfaceKind::Neumann => rhs[k] -= mesh.h * v,
                }
            }
        }
        for &(r, c, v) in &self.lifting {
            rhs[r] -= v * g[c];
        }
        for c in (0..n).filter(|&c| self.constrained[c]) {
            rhs[c] = g[c];
        }
        let u = self.factor.solve(&rhs);
        if let Some(k) = u.iter().position(|v| !v.is_finite()) {
            return Err(PdeError::NonFinite { node: k });
        }
        Ok(u)
    }

    /// Nodal values on the interior of `side`.
    pub fn trace(&self, u: &[f64], side: Side) -> Vec<f64> {
        self.mesh.side_nodes(side).into_iter().map(|k| u[k]).collect()
    }

    /// Outward normal flux `a ∂u/∂n` at the interior nodes of `side`.
    pub fn flux(&self, u: &[f64], side: Side, method: FluxRecovery) -> Vec<f64> {
        let nodes = self.mesh.side_nodes(side);
        match method {
            FluxRecovery::Residual => nodes
                .into_iter()
                .map(|k| {
                    let ku: f64 = self.stiffness.band_range(k).map(|j| self.stiffness.get(k, j) * u[j]).sum();
                    (ku - self.load[k]) / self.mesh.h
                })
                .collect(),
            FluxRecovery::OneSided => nodes
                .into_iter()
                .map(|k| self.nodal_a[k] * (u[k] - u[self.mesh.inward_neighbor(k, side)]) / self.mesh.h)
                .collect(),
        }
    }

    /// `uᵀ K u` with the unconstrained stiffness matrix.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.stiffness.mul_vec(u).iter().zip(u).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Rect;

    #[test]
    fn linear_solution_is_reproduced_with_exact_flux() {
        // u = x solves -∇·(2∇u) = 0 with Dirichlet data u = x on the outside.
        let mesh = Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), 0.125).unwrap();
        let a = vec![2.0; mesh.num_nodes()];
        let bc = BoundarySpec { sides: [SideCondition::Exterior; 4], exterior: ScalarField::Function(|x, _| x) }
            .with_interface(Side::Right, InterfaceKind::Dirichlet);
        let op = LocalOperator::assemble(&mesh, Diffusion::Nodal(&a), ScalarField::Constant(0.0), bc).unwrap();
        let trace = vec![1.0; 7];
        let u = op.solve(&[SideData { side: Side::Right, values: &trace }]).unwrap();
        for (n, x) in mesh.nodes().enumerate() {
            assert!((u[n] - x[0]).abs() < 1e-12);
        }
        for method in [FluxRecovery::Residual, FluxRecovery::OneSided] {
            for q in op.flux(&u, Side::Right, method) {
                assert!((q - 2.0).abs() < 1e-10, "{method:?}: {q}");
            }
        }
    }

    #[test]
    fn neumann_data_round_trips_through_the_residual_flux() {
        let mesh = Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), 0.25).unwrap();
        let a: Vec<f64> = mesh.nodes().map(|[x, y]| 1.0 + x + 0.5 * y).collect();
        let bc = BoundarySpec::all_exterior().with_interface(Side::Left, InterfaceKind::Neumann);
        let op = LocalOperator::assemble(&mesh, Diffusion::Nodal(&a), ScalarField::Constant(3.0), bc).unwrap();
        let q = [0.3, -1.0, 2.0];
        let u = op.solve(&[SideData { side: Side::Left, values: &q }]).unwrap();
        // The outward flux equals minus the incoming flux that was imposed.
        for (got, want) in op.flux(&u, Side::Left, FluxRecovery::Residual).iter().zip(q) {
            assert!((got + want).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_interface_data_is_reported() {
        let mesh = Mesh::new(Rect::new(0.0, 1.0, 0.0, 1.0), 0.25).unwrap();
        let a = vec![1.0; mesh.num_nodes()];
        let bc = BoundarySpec::all_exterior().with_interface(Side::Top, InterfaceKind::Dirichlet);
        let op = LocalOperator::assemble(&mesh, Diffusion::Nodal(&a), ScalarField::Constant(1.0), bc).unwrap();
        assert!(matches!(op.solve(&[]), Err(PdeError::MissingInterfaceData(Side::Top))));
    }
}
