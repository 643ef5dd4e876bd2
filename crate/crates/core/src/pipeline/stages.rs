//! Preparation, offline sampling, surrogate training, the online stage and
//! the monolithic reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::Path;

use super::estimators::{importance_weights, WEIGHT_CLAMP};
use super::table::SampleTable;
use super::{sample_rng, stream_seed, PipelineError};
use crate::dd::{
    edge_bases, interface_snapshots, iterate, local_step, CouplingOracle, DdError, Decomposition, Discretization,
    EdgeBasis, IterationConfig,
};
use crate::flows::{train_flow, FlowConfig, FlowModel, TrainConfig, TrainReport};
use crate::nn::Mat;
use crate::pde::FluxRecovery;
use crate::randfield::{load_basis, save_basis, TruncatedNormal};
use crate::stats::GaussianLaw;
use crate::surrogate::{train_surrogate, CouplingSurrogate, SurrogateConfig, SurrogateReport};

/// Largest tolerated fraction of failed or non-converged samples.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub snapshots: usize,
    pub seed: u64,
    pub flux: FluxRecovery,
    pub jitter: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { snapshots: 100, seed: 0, flux: FluxRecovery::Residual, jitter: 1e-10 }
    }
}

/// Random-field and interface bases plus the offline proposals.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub disc: Discretization,
    pub bases: Vec<EdgeBasis>,
    /// One joint law per subdomain over its concatenated incoming parameters.
    pub proposals: Vec<GaussianLaw>,
    pub law: TruncatedNormal,
    pub flux: FluxRecovery,
}

impl Prepared {
    pub fn dec(&self) -> &Decomposition {
        &self.disc.dec
    }

    pub fn tau_dim(&self, sub: usize) -> usize {
        self.dec().incoming(sub).iter().map(|&e| self.bases[e].dim()).sum()
    }

    /// Coefficients of nodal interface data, incoming edges concatenated per subdomain.
    pub fn coefficients(&self, nodal: &[Vec<Vec<f64>>], sub: usize) -> Mat {
        let incoming = self.dec().incoming(sub);
        let n = nodal.first().map_or(0, Vec::len);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|s| incoming.iter().flat_map(|&e| self.bases[e].project(&nodal[e][s])).collect()).collect();
        Mat::from_rows(&rows)
    }
}

#[derive(Serialize, Deserialize)]
struct PreparedFile {
    bases: Vec<EdgeBasis>,
    proposals: Vec<GaussianLaw>,
    law: TruncatedNormal,
    flux: FluxRecovery,
    captured: Vec<f64>,
}

impl Prepared {
    /// Writes `kl_<i>.txt` per subdomain and `prep.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        for (i, b) in self.disc.kl.iter().enumerate() {
            save_basis(&dir.join(format!("kl_{i}.txt")), i, b).map_err(DdError::from)?;
        }
        let file = PreparedFile {
            bases: self.bases.clone(),
            proposals: self.proposals.clone(),
            law: self.law,
            flux: self.flux,
            captured: self.disc.captured.clone(),
        };
        std::fs::write(dir.join("prep.json"), serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Inverse of [`Prepared::save`] for the same decomposition.
    pub fn load(dir: &Path, dec: Decomposition) -> Result<Self, PipelineError> {
        let kl = (0..dec.len())
            .map(|i| {
                let (sub, b) = load_basis(&dir.join(format!("kl_{i}.txt"))).map_err(DdError::from)?;
                if sub != i {
                    return Err(PipelineError::Config(format!("kl_{i}.txt holds the basis of subdomain {sub}")));
                }
                Ok(b)
            })
            .collect::<Result<_, PipelineError>>()?;
        let file: PreparedFile = serde_json::from_str(&std::fs::read_to_string(dir.join("prep.json"))?)?;
        let mut disc = Discretization::with_bases(dec, kl)?;
        if file.bases.len() != disc.dec.edges.len() || file.proposals.len() != disc.len() {
            return Err(PipelineError::Config("prep.json does not match the decomposition".into()));
        }
        disc.captured = file.captured;
        Ok(Self { disc, bases: file.bases, proposals: file.proposals, law: file.law, flux: file.flux })
    }
}

/// Draws `n` full coefficient vectors, `[sample][subdomain]`.
pub fn sample_system(disc: &Discretization, law: &TruncatedNormal, n: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            (0..disc.len()).map(|i| law.sample_vec(&mut rng, disc.xi_dim(i))).collect()
        })
        .collect()
}

/// Field expansions, POD bases from monolithic snapshots, and Gaussian proposals.
pub fn prepare(dec: Decomposition, cfg: &PrepConfig) -> Result<Prepared, PipelineError> {
    let disc = Discretization::new(dec)?;
    let law = TruncatedNormal::default();
    let xi = sample_system(&disc, &law, cfg.snapshots, stream_seed(cfg.seed, "snapshots"));
    let snaps = interface_snapshots(&disc, &xi, cfg.flux)?;
    let bases = edge_bases(&disc, &snaps)?;
    let mut prep = Prepared { disc, bases, proposals: Vec::new(), law, flux: cfg.flux };
    for i in 0..prep.disc.len() {
        let coeffs = prep.coefficients(&snaps, i);
        let g = GaussianLaw::fit(&coeffs, cfg.jitter)?;
        let z = g.max_standard_score(&coeffs);
        if z > 6.0 {
            return Err(PipelineError::Proposal(format!(
                "subdomain {i}: a snapshot lies {z:.1} standard deviations out"
            )));
        }
        prep.proposals.push(g);
    }
    Ok(prep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct OfflineResult {
    pub tables: Vec<SampleTable>,
    /// Rows dropped per subdomain because the local solve failed.
    pub dropped: Vec<usize>,
}

/// `ξ`, `τ`, output and exported coupling values of one offline sample.
type OfflineRow = (Vec<f64>, Vec<f64>, f64, Vec<Vec<f64>>);

/// Local Monte Carlo with `(ξ_i, τ_i) ~ π_ξ · p_τ` in every subdomain.
pub fn run_offline(prep: &Prepared, cfg: &OfflineConfig) -> Result<OfflineResult, PipelineError> {
    let disc = &prep.disc;
    let mut tables = Vec::with_capacity(disc.len());
    let mut dropped = Vec::with_capacity(disc.len());
    for i in 0..disc.len() {
        let seed = stream_seed(cfg.seed, &format!("offline-{i}"));
        let outgoing = prep.dec().outgoing(i);
        let rows: Vec<Option<OfflineRow>> = (0..cfg.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = sample_rng(seed, s);
                let xi = prep.law.sample_vec(&mut rng, disc.xi_dim(i));
                let tau = prep.proposals[i].sample(&mut rng);
                let solved = disc.local_operator(i, &xi).and_then(|op| {
                    let sol = local_step(disc, i, &op, &prep.bases, &tau, prep.flux)?;
                    Ok((disc.output(i, &sol.u)?, sol.exports))
                });
                solved.ok().map(|(y, h)| (xi, tau, y, h))
            })
            .collect();
        let ok: Vec<_> = rows.into_iter().flatten().collect();
        let lost = cfg.samples - ok.len();
        if lost as f64 > MAX_FAILURE_RATE * cfg.samples as f64 {
            return Err(PipelineError::Failures { stage: "offline", failed: lost, total: cfg.samples });
        }
        let xi = Mat::from_rows(&ok.iter().map(|r| r.0.clone()).collect::<Vec<_>>());
        let tau = Mat::from_rows(&ok.iter().map(|r| r.1.clone()).collect::<Vec<_>>());
        let y = ok.iter().map(|r| r.2).collect();
        let exports = outgoing
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                (prep.dec().edges[e].receiver, Mat::from_rows(&ok.iter().map(|r| r.3[k].clone()).collect::<Vec<_>>()))
            })
            .collect();
        tables.push(SampleTable { sub: i, xi, tau, y, exports, weights: None });
        dropped.push(lost);
    }
    Ok(OfflineResult { tables, dropped })
}

/// One surrogate per edge, trained on the sender's offline table.
pub fn train_surrogates(
    prep: &Prepared,
    tables: &[SampleTable],
    cfg: &SurrogateConfig,
) -> Result<Vec<(CouplingSurrogate, SurrogateReport)>, PipelineError> {
    (0..prep.dec().edges.len())
        .into_par_iter()
        .map(|e| {
            let edge = &prep.dec().edges[e];
            let t = &tables[edge.sender];
            let k = prep
                .dec()
                .outgoing(edge.sender)
                .iter()
                .position(|&o| o == e)
                .expect("edge is outgoing from its sender");
            let cfg = SurrogateConfig { seed: stream_seed(cfg.seed, &format!("surrogate-{e}")), ..cfg.clone() };
            Ok(train_surrogate(&t.inputs(), &t.exports[k].1, &cfg)?)
        })
        .collect()
}

/// Coupling through trained surrogates for a fixed batch of system inputs.
pub struct SurrogateOracle<'a> {
    dec: &'a Decomposition,
    surrogates: &'a [CouplingSurrogate],
    /// Per subdomain, `samples × dim ξ_i`.
    xi: &'a [Mat],
}

impl<'a> SurrogateOracle<'a> {
    pub fn new(dec: &'a Decomposition, surrogates: &'a [CouplingSurrogate], xi: &'a [Mat]) -> Self {
        Self { dec, surrogates, xi }
    }
}

impl CouplingOracle for SurrogateOracle<'_> {
    fn couple(&self, sub: usize, rows: &[usize], tau: &Mat) -> Result<Vec<Mat>, DdError> {
        let x = Mat::hcat(&[&self.xi[sub].select_rows(rows), tau]);
        self.dec
            .outgoing(sub)
            .into_iter()
            .map(|e| self.surrogates[e].eval(&x).map_err(|err| DdError::Oracle(err.to_string())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub samples: usize,
    pub seed: u64,
    pub iteration: IterationConfig,
    /// Flow architecture per subdomain.
    pub flows: Vec<FlowConfig>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct OnlineResult {
    /// Per subdomain, `samples × dim ξ_i` and the converged parameters.
    pub xi: Vec<Mat>,
    pub tau: Vec<Mat>,
    pub history: Vec<f64>,
    pub steps: Vec<usize>,
    pub non_converged: usize,
    pub flows: Vec<FlowModel>,
    pub flow_reports: Vec<TrainReport>,
}

/// Surrogate-coupled relaxation for fresh system samples, then one
/// conditional flow per subdomain fitted to `(τ_i^∞, ξ_i)`.
pub fn run_online(
    prep: &Prepared,
    surrogates: &[CouplingSurrogate],
    cfg: &OnlineConfig,
) -> Result<OnlineResult, PipelineError> {
    let disc = &prep.disc;
    if cfg.flows.len() != disc.len() {
        return Err(PipelineError::Config(format!(
            "{} flow configurations for {} subdomains",
            cfg.flows.len(),
            disc.len()
        )));
    }
    let samples = sample_system(disc, &prep.law, cfg.samples, stream_seed(cfg.seed, "online"));
    let xi: Vec<Mat> =
        (0..disc.len()).map(|i| Mat::from_rows(&samples.iter().map(|s| s[i].clone()).collect::<Vec<_>>())).collect();
    let oracle = SurrogateOracle::new(prep.dec(), surrogates, &xi);
    let dims: Vec<usize> = prep.bases.iter().map(EdgeBasis::dim).collect();
    let out = iterate(prep.dec(), &dims, &oracle, cfg.samples, None, &cfg.iteration)?;
    let non_converged = cfg.samples - out.num_converged();
    if non_converged as f64 > MAX_FAILURE_RATE * cfg.samples as f64 {
        return Err(PipelineError::NonConverged {
            failed: non_converged,
            total: cfg.samples,
            histogram: indicator_histogram(&out.final_indicator),
        });
    }
    let keep: Vec<usize> = (0..cfg.samples).filter(|&s| out.converged[s]).collect();
    let tau: Vec<Mat> = (0..disc.len()).map(|i| out.tau_of(prep.dec(), i).select_rows(&keep)).collect();
    let xi: Vec<Mat> = xi.iter().map(|m| m.select_rows(&keep)).collect();
    let fitted: Vec<(FlowModel, TrainReport)> = (0..disc.len())
        .into_par_iter()
        .map(|i| {
            let seed = stream_seed(cfg.seed, &format!("flow-{i}"));
            let mut model = FlowModel::conditional(tau[i].cols(), xi[i].cols(), cfg.flows[i].clone(), seed)?;
            let report = train_flow(&mut model, &tau[i], &xi[i], &TrainConfig { seed, ..cfg.train.clone() })?;
            Ok((model, report))
        })
        .collect::<Result<_, PipelineError>>()?;
    let (flows, flow_reports) = fitted.into_iter().unzip();
    Ok(OnlineResult { xi, tau, history: out.history, steps: out.steps, non_converged, flows, flow_reports })
}

/// Counts of `log10 ε` in unit bins, as `(bin floor, count)`.
pub fn indicator_histogram(eps: &[f64]) -> Vec<(i32, usize)> {
    let mut bins: Vec<(i32, usize)> = Vec::new();
    for &e in eps {
        let b = if e > 0.0 && e.is_finite() { e.log10().floor() as i32 } else { i32::MIN };
        match bins.iter_mut().find(|(k, _)| *k == b) {
            Some((_, c)) => *c += 1,
            None => bins.push((b, 1)),
        }
    }
    bins.sort();
    bins
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub clamped: usize,
    pub ess: f64,
}

/// Fills the weight column of `table` with `π̂(τ|ξ) / p(τ)`.
pub fn assign_weights(
    flow: &FlowModel,
    proposal: &GaussianLaw,
    table: &mut SampleTable,
) -> Result<WeightSummary, PipelineError> {
    let log_target = flow.log_density(&table.tau, &table.xi)?;
    let log_prop = proposal.log_pdf_rows(&table.tau);
    let (w, clamped) = importance_weights(&log_target, &log_prop)?;
    debug_assert!(w.iter().all(|&v| (0.0..=WEIGHT_CLAMP).contains(&v)));
    let ess = super::estimators::effective_sample_size(&w);
    table.weights = Some(w);
    Ok(WeightSummary { clamped, ess })
}

#[derive(Clone, Debug)]
pub struct ReferenceResult {
    /// Per subdomain output samples.
    pub outputs: Vec<Vec<f64>>,
    pub dropped: usize,
}

/// Plain Monte Carlo over monolithic solves.
pub fn reference_monte_carlo(
    disc: &Discretization,
    law: &TruncatedNormal,
    n: usize,
    seed: u64,
) -> Result<ReferenceResult, PipelineError> {
    let seed = stream_seed(seed, "reference");
    let rows: Vec<Option<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let xi: Vec<Vec<f64>> = (0..disc.len()).map(|i| law.sample_vec(&mut rng, disc.xi_dim(i))).collect();
            disc.monolithic_outputs(&xi).ok()
        })
        .collect();
    let ok: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let dropped = n - ok.len();
    if dropped as f64 > MAX_FAILURE_RATE * n as f64 {
        return Err(PipelineError::Failures { stage: "reference", failed: dropped, total: n });
    }
    let outputs = (0..disc.len()).map(|i| ok.iter().map(|r| r[i]).collect()).collect();
    Ok(ReferenceResult { outputs, dropped })
}
