//! Run configuration: a sectioned TOML file validated against the problem.

use std::fmt;

use dduq_core::dd::{Decomposition, IterationConfig};
use dduq_core::flows::{FlowConfig, TrainConfig};
use dduq_core::stats::MixtureBenchConfig;
use dduq_core::surrogate::SurrogateConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoComponent,
    ThreeComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub preset: Preset,
    pub h: Option<f64>,
    pub source: Option<f64>,
}

/// Overrides of the preset's random-field parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// One mean per subdomain.
    pub mean: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub corr_len: Option<f64>,
    pub modes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdSection {
    pub tol: f64,
    pub max_steps: usize,
    pub snapshots: usize,
    pub jitter: f64,
    /// One relaxation factor per directed interface.
    pub theta: Option<Vec<f64>>,
    /// Retained POD modes per directed interface.
    pub modes: Option<Vec<usize>>,
}

impl Default for DdSection {
    fn default() -> Self {
        let it = IterationConfig::default();
        Self { tol: it.tol, max_steps: it.max_steps, snapshots: 100, jitter: 1e-10, theta: None, modes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_off: usize,
    /// Defaults to `n_off`.
    pub n_on: Option<usize>,
    pub n_ref: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// Stage count per subdomain.
    pub stages: Option<Vec<usize>>,
    pub layers: usize,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub bins: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout: f64,
    pub restore_best: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowConfig::default();
        let t = TrainConfig::default();
        Self {
            stages: None,
            layers: f.layers,
            gamma: f.gamma,
            hidden: f.hidden,
            bins: f.bins,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            holdout: t.holdout,
            restore_best: t.restore_best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Exceedance thresholds; empty means mean and mean ± one standard deviation.
    pub thresholds: Vec<f64>,
    pub pdf_points: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { thresholds: Vec::new(), pdf_points: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub context_dims: Vec<usize>,
    pub n_train: usize,
    pub n_validation: usize,
    pub epochs: usize,
    pub law_seed: u64,
    pub track_epochs: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = MixtureBenchConfig::default();
        Self {
            context_dims: vec![8, 12, 14],
            n_train: b.n_train,
            n_validation: b.n_validation,
            epochs: b.train.epochs,
            law_seed: b.law_seed,
            track_epochs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub dd: DdSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bench: BenchSection,
}

/// One violated rule, with the 1-based line it was found on when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug)]
pub struct ConfigError(pub Vec<Violation>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for v in &self.0 {
            match v.line {
                Some(l) => writeln!(f, "  line {l}: {}", v.message)?,
                None => writeln!(f, "  {}", v.message)?,
            }
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Line of `key = …` inside `[section]`, or of the section header itself.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(n + 1);
            }
            continue;
        }
        if current == section && line.split('=').next().map(str::trim) == Some(key) {
            return Some(n + 1);
        }
    }
    header
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Config {
    /// Parses and validates, reporting every violation with its line.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigError(vec![Violation { line, message: e.message().to_string() }])
        })?;
        let found = cfg.violations();
        if found.is_empty() {
            Ok(cfg)
        } else {
            let located = found
                .into_iter()
                .map(|(section, key, message)| Violation { line: locate(text, section, key), message })
                .collect();
            Err(ConfigError(located))
        }
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<(Self, String)> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg = Self::parse(&text).map_err(|e| anyhow::anyhow!("{}{e}", path.display()))?;
        Ok((cfg, text))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn preset(&self) -> Decomposition {
        match self.problem.preset {
            Preset::TwoComponent => Decomposition::two_component(),
            Preset::ThreeComponent => Decomposition::three_component(),
        }
    }

    /// The decomposition with every override applied. Assumes a validated config.
    pub fn decomposition(&self) -> Decomposition {
        let mut dec = self.preset();
        if let Some(h) = self.problem.h {
            dec.h = h;
        }
        if let Some(s) = self.problem.source {
            dec.source = s;
        }
        for (i, sub) in dec.subdomains.iter_mut().enumerate() {
            let f = &mut sub.field;
            if let Some(m) = &self.field.mean {
                f.mean = m[i];
            }
            f.sigma = self.field.sigma.unwrap_or(f.sigma);
            f.corr_len = self.field.corr_len.unwrap_or(f.corr_len);
            f.modes = self.field.modes.unwrap_or(f.modes);
        }
        for (k, e) in dec.edges.iter_mut().enumerate() {
            if let Some(t) = &self.dd.theta {
                e.theta = t[k];
            }
            if let Some(m) = &self.dd.modes {
                e.modes = m[k];
            }
        }
        dec
    }

    pub fn n_on(&self) -> usize {
        self.sampling.n_on.unwrap_or(self.sampling.n_off)
    }

    pub fn iteration(&self) -> IterationConfig {
        IterationConfig { tol: self.dd.tol, max_steps: self.dd.max_steps }
    }

    pub fn flows(&self) -> Vec<FlowConfig> {
        let stages = self.flow.stages.clone().unwrap_or_else(|| match self.problem.preset {
            Preset::TwoComponent => vec![2, 3],
            Preset::ThreeComponent => vec![3, 4, 3],
        });
        stages
            .into_iter()
            .map(|s| FlowConfig {
                stages: s,
                layers: self.flow.layers,
                gamma: self.flow.gamma,
                hidden: self.flow.hidden.clone(),
                bins: self.flow.bins,
            })
            .collect()
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.flow.batch_size,
            epochs: self.flow.epochs,
            lr: self.flow.lr,
            seed: self.sampling.seed,
            holdout: self.flow.holdout,
            restore_best: self.flow.restore_best,
        }
    }

    fn violations(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut v = Vec::new();
        let preset = self.preset();
        let (subs, edges) = (preset.len(), preset.edges.len());
        let mut positive = |section, key, value: usize| {
            if value == 0 {
                v.push((section, key, format!("{section}.{key} must be positive")));
            }
        };
        positive("sampling", "n_off", self.sampling.n_off);
        positive("sampling", "n_on", self.n_on());
        positive("sampling", "n_ref", self.sampling.n_ref);
        positive("dd", "max_steps", self.dd.max_steps);
        positive("dd", "snapshots", self.dd.snapshots);
        positive("flow", "layers", self.flow.layers);
        positive("flow", "epochs", self.flow.epochs);
        positive("flow", "batch_size", self.flow.batch_size);
        positive("output", "pdf_points", self.output.pdf_points);
        positive("bench", "n_train", self.bench.n_train);
        positive("bench", "n_validation", self.bench.n_validation);
        positive("surrogate", "max_epochs", self.surrogate.max_epochs);
        positive("surrogate", "width", self.surrogate.width);

        if !(self.dd.tol > 0.0) {
            v.push(("dd", "tol", format!("dd.tol must be positive, got {}", self.dd.tol)));
        }
        if let Some(t) = &self.dd.theta {
            if t.len() != edges {
                v.push(("dd", "theta", format!("dd.theta needs {edges} entries (one per interface), got {}", t.len())));
            }
            if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                v.push(("dd", "theta", format!("relaxation factor {bad} lies outside [0, 1]")));
            }
        }
        if let Some(m) = &self.dd.modes {
            if m.len() != edges {
                v.push(("dd", "modes", format!("dd.modes needs {edges} entries (one per interface), got {}", m.len())));
            }
            if m.contains(&0) {
                v.push(("dd", "modes", "every interface needs at least one mode".into()));
            }
            if let Some(&big) = m.iter().find(|&&k| k > self.dd.snapshots) {
                v.push(("dd", "modes", format!("{big} modes exceed the {} snapshots", self.dd.snapshots)));
            }
        }
        if let Some(m) = &self.field.mean {
            if m.len() != subs {
                v.push((
                    "field",
                    "mean",
                    format!("field.mean needs {subs} entries (one per subdomain), got {}", m.len()),
                ));
            }
        }
        if let Some(s) = &self.flow.stages {
            if s.len() != subs {
                v.push((
                    "flow",
                    "stages",
                    format!("flow.stages needs {subs} entries (one per subdomain), got {}", s.len()),
                ));
            }
        }
        if !(self.flow.gamma > 0.0 && self.flow.gamma < 1.0) {
            v.push(("flow", "gamma", format!("flow.gamma must lie in (0, 1), got {}", self.flow.gamma)));
        }
        if self.flow.batch_size > self.n_on() {
            v.push((
                "flow",
                "batch_size",
                format!("flow.batch_size {} exceeds n_on = {}", self.flow.batch_size, self.n_on()),
            ));
        }
        if self.bench.context_dims.iter().any(|&k| k == 0 || k >= 16) {
            v.push(("bench", "context_dims", "context dimensions must lie in 1..16".into()));
        }
        if !(self.surrogate.validation > 0.0 && self.surrogate.validation < 1.0) {
            v.push(("surrogate", "validation", "surrogate.validation must lie in (0, 1)".into()));
        }

        // Remaining structural checks need a consistent decomposition.
        let shapes_ok = self.dd.theta.as_ref().is_none_or(|t| t.len() == edges)
            && self.dd.modes.as_ref().is_none_or(|m| m.len() == edges)
            && self.field.mean.as_ref().is_none_or(|m| m.len() == subs);
        if shapes_ok {
            let dec = self.decomposition();
            if let Err(e) = dec.validate() {
                let key = if e.to_string().contains("multiple") { "h" } else { "preset" };
                v.push(("problem", key, e.to_string()));
            } else if let Some(s) = &self.flow.stages {
                for (i, &r) in s.iter().enumerate().take(subs) {
                    let dim: usize = dec.incoming(i).iter().map(|&e| dec.edges[e].modes).sum();
                    if r == 0 || r > dim {
                        v.push((
                            "flow",
                            "stages",
                            format!("subdomain {i} has {dim} interface parameters; {r} stages is invalid"),
                        ));
                    }
                }
            }
        }
        v
    }
}
