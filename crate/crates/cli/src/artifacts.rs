//! Output-directory layout, prerequisite checks and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Prep,
    Offline,
    Surrogate,
    Online,
    Report,
    FlowBench,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::Offline => "offline",
            Stage::Surrogate => "surrogate",
            Stage::Online => "online",
            Stage::Report => "report",
            Stage::FlowBench => "flow-bench",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Prep | Stage::FlowBench => &[],
            Stage::Offline => &[Stage::Prep],
            Stage::Surrogate => &[Stage::Prep, Stage::Offline],
            Stage::Online => &[Stage::Prep, Stage::Offline, Stage::Surrogate],
            Stage::Report => &[Stage::Prep, Stage::Online],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    /// Creates the stage directory, emptying any previous contents.
    pub fn fresh(&self, stage: Stage) -> Result<PathBuf> {
        let d = self.stage_dir(stage);
        if d.exists() {
            std::fs::remove_dir_all(&d).with_context(|| format!("cannot clear {}", d.display()))?;
        }
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    /// Path of an artifact produced by `producer`, which must already exist.
    pub fn input(&self, producer: Stage, file: &str) -> Result<PathBuf> {
        let p = self.stage_dir(producer).join(file);
        if !p.exists() {
            bail!("missing artifact {}; run the `{}` stage first", p.display(), producer.name());
        }
        Ok(p)
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("corrupt manifest {}", p.display()))
    }

    /// Fails unless every prerequisite stage ran with the same configuration.
    pub fn check_prerequisites(&self, stage: Stage, config_hash: &str) -> Result<()> {
        let m = self.manifest()?;
        for req in stage.requires() {
            match m.stages.get(req.name()) {
                None => bail!(
                    "missing artifacts {}; stage `{}` needs them, run the `{}` stage first",
                    self.stage_dir(*req).display(),
                    stage.name(),
                    req.name()
                ),
                Some(r) if r.config_hash != config_hash => bail!(
                    "artifacts of `{}` were produced with a different configuration; rerun `{}`",
                    req.name(),
                    req.name()
                ),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn record(&self, stage: Stage, config_hash: &str, seed: u64) -> Result<()> {
        let mut m = self.manifest()?;
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        m.stages.insert(stage.name().into(), StageRecord { config_hash: config_hash.into(), seed, timestamp });
        std::fs::write(self.manifest_path(), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}
