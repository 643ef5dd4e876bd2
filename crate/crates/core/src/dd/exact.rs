//! Coupling through the finite-element solvers themselves.

use rayon::prelude::*;

use super::iterate::{iterate, CouplingOracle, IterationConfig, IterationOutcome};
use super::pod::{build_pod, EdgeBasis};
use super::problem::Discretization;
use super::DdError;
use crate::nn::Mat;
use crate::pde::{FluxRecovery, InterfaceKind, LocalOperator, Side, SideData};

/// Local solution and the data it sends to each neighbour.
#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub u: Vec<f64>,
    /// Per outgoing edge, in the receiver's coordinates.
    pub exports: Vec<Vec<f64>>,
}

/// Nodal data that `sub` sends across edge `e` for the local solution `u`.
pub fn nodal_export(disc: &Discretization, op: &LocalOperator, e: usize, u: &[f64], flux: FluxRecovery) -> Vec<f64> {
    let edge = &disc.dec.edges[e];
    let side: Side = edge.sender_side();
    match edge.kind {
        InterfaceKind::Dirichlet => op.trace(u, side),
        InterfaceKind::Neumann => op.flux(u, side, flux),
    }
}

/// Solves subdomain `sub` with received parameters `tau` (incoming edges
/// concatenated) and projects its exports.
pub fn local_step(
    disc: &Discretization,
    sub: usize,
    op: &LocalOperator,
    bases: &[EdgeBasis],
    tau: &[f64],
    flux: FluxRecovery,
) -> Result<LocalSolution, DdError> {
    let incoming = disc.dec.incoming(sub);
    let expected: usize = incoming.iter().map(|&e| bases[e].dim()).sum();
    if tau.len() != expected {
        return Err(DdError::Shape(format!("subdomain {sub} takes {expected} parameters, got {}", tau.len())));
    }
    let mut lifted = Vec::with_capacity(incoming.len());
    let mut at = 0;
    for &e in &incoming {
        let d = bases[e].dim();
        lifted.push((disc.dec.edges[e].side, bases[e].lift(&tau[at..at + d])));
        at += d;
    }
    let data: Vec<SideData<'_>> = lifted.iter().map(|(side, v)| SideData { side: *side, values: v }).collect();
    let u = op.solve(&data)?;
    let exports =
        disc.dec.outgoing(sub).into_iter().map(|e| bases[e].project(&nodal_export(disc, op, e, &u, flux))).collect();
    Ok(LocalSolution { u, exports })
}

/// Nodal interface data of the monolithic solution, `[edge][sample]`.
pub fn interface_snapshots(
    disc: &Discretization,
    xi: &[Vec<Vec<f64>>],
    flux: FluxRecovery,
) -> Result<Vec<Vec<Vec<f64>>>, DdError> {
    let per_sample: Vec<Vec<Vec<f64>>> = xi
        .par_iter()
        .map(|x| {
            let local = disc.monolithic_local(x)?;
            let ops: Vec<LocalOperator> =
                (0..disc.len()).map(|i| disc.local_operator(i, &x[i])).collect::<Result<_, _>>()?;
            Ok((0..disc.dec.edges.len())
                .map(|e| {
                    let s = disc.dec.edges[e].sender;
                    nodal_export(disc, &ops[s], e, &local[s], flux)
                })
                .collect())
        })
        .collect::<Result<_, DdError>>()?;
    Ok((0..disc.dec.edges.len()).map(|e| per_sample.iter().map(|s| s[e].clone()).collect()).collect())
}

/// POD basis for every edge with its configured number of modes.
pub fn edge_bases(disc: &Discretization, snapshots: &[Vec<Vec<f64>>]) -> Result<Vec<EdgeBasis>, DdError> {
    disc.dec.edges.iter().zip(snapshots).map(|(e, s)| build_pod(s, e.modes)).collect()
}

/// Nodal coordinates on every edge.
pub fn identity_bases(disc: &Discretization) -> Result<Vec<EdgeBasis>, DdError> {
    (0..disc.dec.edges.len()).map(|e| Ok(EdgeBasis::identity(disc.dec.edge_dofs(e)?))).collect()
}

/// Exact coupling for a fixed batch of coefficient samples.
pub struct ExactOracle<'a> {
    disc: &'a Discretization,
    bases: &'a [EdgeBasis],
    /// `[sample][subdomain]`.
    ops: Vec<Vec<LocalOperator>>,
    flux: FluxRecovery,
}

impl<'a> ExactOracle<'a> {
    /// `xi[sample][subdomain]` are the field coefficients.
    pub fn new(
        disc: &'a Discretization,
        bases: &'a [EdgeBasis],
        xi: &[Vec<Vec<f64>>],
        flux: FluxRecovery,
    ) -> Result<Self, DdError> {
        if bases.len() != disc.dec.edges.len() {
            return Err(DdError::Shape(format!("{} bases for {} edges", bases.len(), disc.dec.edges.len())));
        }
        let ops = xi
            .par_iter()
            .map(|x| (0..disc.len()).map(|i| disc.local_operator(i, &x[i])).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()?;
        Ok(Self { disc, bases, ops, flux })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(EdgeBasis::dim).collect()
    }

    pub fn local(&self, sample: usize, sub: usize, tau: &[f64]) -> Result<LocalSolution, DdError> {
        local_step(self.disc, sub, &self.ops[sample][sub], self.bases, tau, self.flux)
    }

    /// Runs the relaxation to convergence from zero parameters.
    pub fn run(&self, cfg: &IterationConfig) -> Result<IterationOutcome, DdError> {
        iterate(&self.disc.dec, &self.dims(), self, self.ops.len(), None, cfg)
    }

    /// Local solutions `[sample][subdomain]` for converged parameters.
    pub fn solutions(&self, out: &IterationOutcome) -> Result<Vec<Vec<Vec<f64>>>, DdError> {
        let taus: Vec<Mat> = (0..self.disc.len()).map(|i| out.tau_of(&self.disc.dec, i)).collect();
        (0..self.ops.len())
            .into_par_iter()
            .map(|s| (0..self.disc.len()).map(|i| Ok(self.local(s, i, taus[i].row(s))?.u)).collect())
            .collect()
    }
}

impl CouplingOracle for ExactOracle<'_> {
    fn couple(&self, sub: usize, rows: &[usize], tau: &Mat) -> Result<Vec<Mat>, DdError> {
        let sols: Vec<LocalSolution> =
            rows.par_iter().enumerate().map(|(r, &s)| self.local(s, sub, tau.row(r))).collect::<Result<_, _>>()?;
        let outgoing = self.disc.dec.outgoing(sub);
        Ok((0..outgoing.len())
            .map(|k| {
                let d = self.bases[outgoing[k]].dim();
                let mut m = Mat::zeros(rows.len(), d);
                for (r, sol) in sols.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(&sol.exports[k]);
                }
                m
            })
            .collect())
    }
}
