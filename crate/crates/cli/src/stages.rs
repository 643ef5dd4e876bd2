//! One function per pipeline stage; each reads prior artifacts and writes its own.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use dduq_core::dd::log_linear_fit;
use dduq_core::flows::FlowModel;
use dduq_core::pipeline::{
    assign_weights, error_metrics, exceedance_probability, moments, prepare, reference_monte_carlo, run_offline,
    run_online, train_surrogates, weighted_moments, Moments, OfflineConfig, OnlineConfig, PrepConfig, Prepared,
    SampleTable, WeightSummary,
};
use dduq_core::stats::{mixture_benchmark, Kde, MixtureBenchConfig, MixtureBenchReport};
use dduq_core::surrogate::{CouplingSurrogate, SurrogateConfig, SurrogateReport};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, write_json, OutDir, Stage};
use crate::config::Config;

pub struct Run<'a> {
    pub cfg: &'a Config,
    pub out: &'a OutDir,
}

#[derive(Serialize, Deserialize)]
struct PrepSummary {
    kl_modes: Vec<usize>,
    captured_variance: Vec<f64>,
    pod_modes: Vec<usize>,
    /// Leading singular values of each interface's centered snapshots.
    singular_values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct OfflineSummary {
    samples: usize,
    dropped: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct FlowSummary {
    best_epoch: usize,
    initial_holdout_nll: f64,
    holdout_nll: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OnlineSummary {
    samples: usize,
    non_converged: usize,
    max_steps: usize,
    mean_steps: f64,
    /// Largest indicator over still-active samples at each step.
    history: Vec<f64>,
    flows: Vec<FlowSummary>,
    weights: Vec<WeightSummary>,
}

#[derive(Serialize, Deserialize)]
pub struct Exceedance {
    pub threshold: f64,
    pub estimate: f64,
    pub reference: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SubdomainReport {
    pub subdomain: usize,
    pub samples: usize,
    pub ess: f64,
    pub clamped: usize,
    pub estimate: Moments,
    pub reference: Moments,
    pub mean_error: f64,
    pub variance_error: f64,
    pub exceedance: Vec<Exceedance>,
}

#[derive(Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub reference_samples: usize,
    pub reference_dropped: usize,
    pub iteration_steps: usize,
    /// Least-squares slope and R² of log ε against the step index.
    pub indicator_fit: Option<(f64, f64)>,
    pub subdomains: Vec<SubdomainReport>,
}

fn table_name(i: usize) -> String {
    format!("table_{i}.txt")
}

impl Run<'_> {
    fn seed(&self) -> u64 {
        self.cfg.sampling.seed
    }

    fn load_prep(&self) -> Result<Prepared> {
        self.out.input(Stage::Prep, "prep.json")?;
        Prepared::load(&self.out.stage_dir(Stage::Prep), self.cfg.decomposition()).context("loading prep artifacts")
    }

    fn load_tables(&self, stage: Stage, n: usize) -> Result<Vec<SampleTable>> {
        (0..n)
            .map(|i| {
                let p = self.out.input(stage, &table_name(i))?;
                SampleTable::load(&p).with_context(|| format!("reading {}", p.display()))
            })
            .collect()
    }

    pub fn prep(&self) -> Result<()> {
        let dir = self.out.fresh(Stage::Prep)?;
        let pc = PrepConfig {
            snapshots: self.cfg.dd.snapshots,
            seed: self.seed(),
            jitter: self.cfg.dd.jitter,
            ..Default::default()
        };
        let prep = prepare(self.cfg.decomposition(), &pc)?;
        prep.save(&dir)?;
        let summary = PrepSummary {
            kl_modes: prep.disc.kl.iter().map(|b| b.modes()).collect(),
            captured_variance: prep.disc.captured.clone(),
            pod_modes: prep.bases.iter().map(|b| b.dim()).collect(),
            singular_values: prep.bases.iter().map(|b| b.singular_values.iter().take(10).copied().collect()).collect(),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        eprintln!("prep: KL modes {:?}, POD modes {:?}", summary.kl_modes, summary.pod_modes);
        Ok(())
    }

    pub fn offline(&self) -> Result<()> {
        let prep = self.load_prep()?;
        let dir = self.out.fresh(Stage::Offline)?;
        let off = run_offline(&prep, &OfflineConfig { samples: self.cfg.sampling.n_off, seed: self.seed() })?;
        for (i, t) in off.tables.iter().enumerate() {
            t.save(&dir.join(table_name(i)))?;
        }
        write_json(
            &dir.join("offline.json"),
            &OfflineSummary { samples: self.cfg.sampling.n_off, dropped: off.dropped.clone() },
        )?;
        eprintln!("offline: {} samples per subdomain, dropped {:?}", self.cfg.sampling.n_off, off.dropped);
        Ok(())
    }

    pub fn surrogate(&self) -> Result<()> {
        let prep = self.load_prep()?;
        let tables = self.load_tables(Stage::Offline, prep.disc.len())?;
        let dir = self.out.fresh(Stage::Surrogate)?;
        let sc = SurrogateConfig { seed: self.seed(), ..self.cfg.surrogate.clone() };
        let trained = train_surrogates(&prep, &tables, &sc)?;
        let mut reports: Vec<SurrogateReport> = Vec::new();
        for (e, (model, report)) in trained.into_iter().enumerate() {
            model.save(&dir.join(format!("edge_{e}.ckpt")))?;
            if report.above_ceiling {
                eprintln!(
                    "warning: surrogate for interface {e} has validation MSE {:.3e} above the ceiling",
                    report.best_val_mse
                );
            }
            reports.push(report);
        }
        write_json(&dir.join("surrogates.json"), &reports)?;
        let mse: Vec<String> = reports.iter().map(|r| format!("{:.2e}", r.best_val_mse)).collect();
        eprintln!("surrogate: standardized validation MSE {}", mse.join(", "));
        Ok(())
    }

    pub fn online(&self) -> Result<()> {
        let prep = self.load_prep()?;
        let n = prep.disc.len();
        let mut tables = self.load_tables(Stage::Offline, n)?;
        let surrogates: Vec<CouplingSurrogate> = (0..prep.dec().edges.len())
            .map(|e| {
                let p = self.out.input(Stage::Surrogate, &format!("edge_{e}.ckpt"))?;
                CouplingSurrogate::load(&p).with_context(|| format!("reading {}", p.display()))
            })
            .collect::<Result<_>>()?;
        let dir = self.out.fresh(Stage::Online)?;
        let oc = OnlineConfig {
            samples: self.cfg.n_on(),
            seed: self.seed(),
            iteration: self.cfg.iteration(),
            flows: self.cfg.flows(),
            train: self.cfg.train(),
        };
        let on = run_online(&prep, &surrogates, &oc)?;
        let mut weights = Vec::with_capacity(n);
        for (i, table) in tables.iter_mut().enumerate() {
            on.flows[i].save(&dir.join(format!("flow_{i}.ckpt")))?;
            weights.push(assign_weights(&on.flows[i], &prep.proposals[i], table)?);
            table.save(&dir.join(table_name(i)))?;
        }
        let summary = OnlineSummary {
            samples: oc.samples,
            non_converged: on.non_converged,
            max_steps: on.steps.iter().copied().max().unwrap_or(0),
            mean_steps: on.steps.iter().sum::<usize>() as f64 / on.steps.len().max(1) as f64,
            history: on.history.clone(),
            flows: on
                .flow_reports
                .iter()
                .map(|r| FlowSummary {
                    best_epoch: r.best_epoch,
                    initial_holdout_nll: r.initial_holdout_nll,
                    holdout_nll: r.holdout_nll.clone(),
                })
                .collect(),
            weights,
        };
        write_json(&dir.join("online.json"), &summary)?;
        let ess: Vec<String> = summary.weights.iter().map(|w| format!("{:.1}", w.ess)).collect();
        eprintln!(
            "online: {} steps at most, {} non-converged, ESS {}",
            summary.max_steps,
            summary.non_converged,
            ess.join(", ")
        );
        Ok(())
    }

    pub fn report(&self) -> Result<()> {
        let prep = self.load_prep()?;
        let n = prep.disc.len();
        let tables = self.load_tables(Stage::Online, n)?;
        let online: OnlineSummary = read_json(&self.out.input(Stage::Online, "online.json")?)?;
        for i in 0..n {
            self.out.input(Stage::Online, &format!("flow_{i}.ckpt")).map(|p| FlowModel::load(&p).map(|_| ()))??;
        }
        let dir = self.out.fresh(Stage::Report)?;
        let reference = reference_monte_carlo(&prep.disc, &prep.law, self.cfg.sampling.n_ref, self.seed())?;

        let mut subdomains = Vec::with_capacity(n);
        let mut summary_csv =
            String::from("subdomain,ess,mean,variance,reference_mean,reference_variance,mean_error,variance_error\n");
        for (i, t) in tables.iter().enumerate() {
            let w = t.weights.as_ref().with_context(|| format!("online table {i} has no weight column"))?;
            let est = weighted_moments(&t.y, w)?;
            let refm = moments(&reference.outputs[i])?;
            let (mean_error, variance_error) = error_metrics(&est, &refm)?;
            let thresholds = if self.cfg.output.thresholds.is_empty() {
                let sd = refm.variance.sqrt();
                vec![refm.mean - sd, refm.mean, refm.mean + sd]
            } else {
                self.cfg.output.thresholds.clone()
            };
            let uniform = vec![1.0; reference.outputs[i].len()];
            let exceedance = thresholds
                .iter()
                .map(|&a| {
                    Ok(Exceedance {
                        threshold: a,
                        estimate: exceedance_probability(&t.y, w, a)?,
                        reference: exceedance_probability(&reference.outputs[i], &uniform, a)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ws = &online.weights[i];
            writeln!(
                summary_csv,
                "{i},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                ws.ess, est.mean, est.variance, refm.mean, refm.variance, mean_error, variance_error
            )?;
            write_pdf_csv(
                &dir.join(format!("pdf_{i}.csv")),
                &t.y,
                w,
                &reference.outputs[i],
                self.cfg.output.pdf_points,
            )?;
            subdomains.push(SubdomainReport {
                subdomain: i,
                samples: t.len(),
                ess: ws.ess,
                clamped: ws.clamped,
                estimate: est,
                reference: refm,
                mean_error,
                variance_error,
                exceedance,
            });
        }
        let mut indicator = String::from("step,indicator\n");
        for (k, e) in online.history.iter().enumerate() {
            writeln!(indicator, "{},{e:?}", k + 1)?;
        }
        std::fs::write(dir.join("indicator.csv"), indicator)?;
        std::fs::write(dir.join("summary.csv"), summary_csv)?;
        let report = Report {
            config_hash: self.cfg.hash(),
            seed: self.seed(),
            reference_samples: self.cfg.sampling.n_ref,
            reference_dropped: reference.dropped,
            iteration_steps: online.max_steps,
            indicator_fit: log_linear_fit(&online.history),
            subdomains,
        };
        write_json(&dir.join("report.json"), &report)?;
        for s in &report.subdomains {
            eprintln!(
                "report: subdomain {} ESS {:.1} mean {:.5} (reference {:.5}) errors {:.4} / {:.4}",
                s.subdomain, s.ess, s.estimate.mean, s.reference.mean, s.mean_error, s.variance_error
            );
        }
        Ok(())
    }

    pub fn flow_bench(&self) -> Result<()> {
        let dir = self.out.fresh(Stage::FlowBench)?;
        let b = &self.cfg.bench;
        let defaults = MixtureBenchConfig::default();
        let mut reports: Vec<MixtureBenchReport> = Vec::new();
        for &k in &b.context_dims {
            let cfg = MixtureBenchConfig {
                context_dim: k,
                n_train: b.n_train,
                n_validation: b.n_validation,
                law_seed: b.law_seed,
                seed: self.seed(),
                flow: dduq_core::flows::FlowConfig {
                    layers: self.cfg.flow.layers,
                    gamma: self.cfg.flow.gamma,
                    hidden: self.cfg.flow.hidden.clone(),
                    bins: self.cfg.flow.bins,
                    ..defaults.flow.clone()
                },
                train: dduq_core::flows::TrainConfig { epochs: b.epochs, seed: self.seed(), ..self.cfg.train() },
                track_epochs: b.track_epochs,
            };
            let r = mixture_benchmark(&cfg)?;
            std::fs::write(dir.join(format!("delta_c{k}.csv")), r.to_csv())?;
            eprintln!("flow-bench: |c| = {k}: conditional {:.5}, joint {:.5}", r.conditional, r.joint);
            reports.push(r);
        }
        write_json(&dir.join("bench.json"), &reports)?;
        Ok(())
    }
}

/// Weighted and reference KDE on a shared, increasing grid.
fn write_pdf_csv(path: &Path, y: &[f64], w: &[f64], reference: &[f64], points: usize) -> Result<()> {
    ensure!(points >= 2, "at least two PDF grid points are needed");
    let est = Kde::new(y.to_vec(), Some(w.to_vec()))?;
    let refk = Kde::new(reference.to_vec(), None)?;
    let lo = y.iter().chain(reference).copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().chain(reference).copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 3.0 * est.bandwidth.max(refk.bandwidth);
    let (lo, hi) = (lo - pad, hi + pad);
    let xs: Vec<f64> = (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect();
    let (pe, pr) = (est.pdf_many(&xs), refk.pdf_many(&xs));
    let mut s = String::from("x,pdf,reference_pdf\n");
    for k in 0..points {
        writeln!(s, "{:?},{:?},{:?}", xs[k], pe[k], pr[k])?;
    }
    std::fs::write(path, s)?;
    Ok(())
}
