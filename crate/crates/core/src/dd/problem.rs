//! A decomposition together with its meshes and random-field bases.

use super::decomposition::{restrict, Decomposition};
use super::DdError;
use crate::pde::{line_integral, Diffusion, LocalOperator, Mesh};
use crate::randfield::{evaluate_field, kl_expand, KlBasis};

#[derive(Clone, Debug)]
pub struct Discretization {
    pub dec: Decomposition,
    pub meshes: Vec<Mesh>,
    pub kl: Vec<KlBasis>,
    /// Captured variance fraction of each truncated expansion.
    pub captured: Vec<f64>,
}

impl Discretization {
    pub fn new(dec: Decomposition) -> Result<Self, DdError> {
        dec.validate()?;
        let meshes: Vec<Mesh> = (0..dec.len()).map(|i| dec.mesh(i)).collect::<Result<_, _>>()?;
        let mut kl = Vec::with_capacity(dec.len());
        let mut captured = Vec::with_capacity(dec.len());
        for (s, m) in dec.subdomains.iter().zip(&meshes) {
            let (basis, total) = kl_expand(&s.field, m)?;
            captured.push(basis.eigenvalues.iter().sum::<f64>() / total);
            kl.push(basis);
        }
        Ok(Self { dec, meshes, kl, captured })
    }

    /// Reuses precomputed expansions, e.g. loaded from disk.
    pub fn with_bases(dec: Decomposition, kl: Vec<KlBasis>) -> Result<Self, DdError> {
        dec.validate()?;
        let meshes: Vec<Mesh> = (0..dec.len()).map(|i| dec.mesh(i)).collect::<Result<_, _>>()?;
        if kl.len() != dec.len() {
            return Err(DdError::Config(format!("{} field bases for {} subdomains", kl.len(), dec.len())));
        }
        for (i, (b, m)) in kl.iter().zip(&meshes).enumerate() {
            if b.num_nodes() != m.num_nodes() || b.modes() != dec.subdomains[i].field.modes {
                return Err(DdError::Config(format!("field basis of subdomain {i} does not match its mesh")));
            }
        }
        let captured = vec![f64::NAN; dec.len()];
        Ok(Self { dec, meshes, kl, captured })
    }

    pub fn len(&self) -> usize {
        self.dec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec.is_empty()
    }

    /// Number of random coefficients of subdomain `sub`.
    pub fn xi_dim(&self, sub: usize) -> usize {
        self.kl[sub].modes()
    }

    pub fn field(&self, sub: usize, xi: &[f64]) -> Result<Vec<f64>, DdError> {
        Ok(evaluate_field(&self.kl[sub], &self.dec.subdomains[sub].field, xi)?)
    }

    pub fn local_operator(&self, sub: usize, xi: &[f64]) -> Result<LocalOperator, DdError> {
        let a = self.field(sub, xi)?;
        Ok(LocalOperator::assemble(&self.meshes[sub], Diffusion::Nodal(&a), self.dec.source(), self.dec.boundary(sub))?)
    }

    /// The output functional of `sub` applied to a local solution.
    pub fn output(&self, sub: usize, u: &[f64]) -> Result<f64, DdError> {
        Ok(line_integral(&self.meshes[sub], u, &self.dec.subdomains[sub].output)?)
    }

    /// Monolithic solution for per-subdomain coefficients `xi[sub]`.
    pub fn monolithic(&self, xi: &[Vec<f64>]) -> Result<(Mesh, Vec<f64>), DdError> {
        if xi.len() != self.len() {
            return Err(DdError::Shape(format!("{} coefficient vectors for {} subdomains", xi.len(), self.len())));
        }
        let fields: Vec<Vec<f64>> = xi.iter().enumerate().map(|(i, x)| self.field(i, x)).collect::<Result<_, _>>()?;
        let (gmesh, op) = self.dec.global_operator(&fields)?;
        let u = op.solve(&[])?;
        Ok((gmesh, u))
    }

    /// Monolithic solution restricted to every subdomain.
    pub fn monolithic_local(&self, xi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DdError> {
        let (gmesh, u) = self.monolithic(xi)?;
        Ok(self.meshes.iter().map(|m| restrict(&gmesh, &u, m)).collect())
    }

    /// Outputs of every subdomain for the monolithic solution.
    pub fn monolithic_outputs(&self, xi: &[Vec<f64>]) -> Result<Vec<f64>, DdError> {
        let local = self.monolithic_local(xi)?;
        local.iter().enumerate().map(|(i, u)| self.output(i, u)).collect()
    }
}
