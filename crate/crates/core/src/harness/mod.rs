//! File-based pipeline: every stage reads its inputs from the run directory
//! and writes its outputs there.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{
    scale_scenario, sub_seed, AgentConfig, AttackConfig, AttackMethod, DefenseSection,
    IndexConfig, MarketConfig, ScaleMeta, ScenarioConfig, StockConfig, SuccessConfig,
    SurrogateConfig, VictimGrid, SCHEMA_VERSION,
};
pub use stages::{attack_window, evaluate_success, RunReport, SuccessFlags};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Train,
    Attack,
    Realize,
    Feedback,
    Transfer,
    Defend,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Generate,
        Stage::Train,
        Stage::Attack,
        Stage::Realize,
        Stage::Feedback,
        Stage::Transfer,
        Stage::Defend,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Realize => "realize",
            Stage::Feedback => "feedback",
            Stage::Transfer => "transfer",
            Stage::Defend => "defend",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::validation("stage", format!("unknown stage `{s}`")))
    }
}

/// Timings live beside the artifacts but are not part of the deterministic set.
pub const TIMINGS_FILE: &str = "timings.json";

/// A run directory plus the config that drives it.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: ScenarioConfig,
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: ScenarioConfig) -> Self {
        Self {
            dir: dir.into(),
            config,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an artifact produced by `stage`; a dependency error if absent.
    pub fn require(&self, stage: Stage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Dependency {
                stage: stage.name().into(),
                path: p,
            })
        }
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn read(&self, stage: Stage, name: &str) -> Result<String> {
        let p = self.require(stage, name)?;
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    /// Runs one stage and records its wall-clock time.
    pub fn run_stage(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let start = Instant::now();
        let outputs = stages::run(self, stage)?;
        self.record_timing(stage, start.elapsed().as_secs_f64())?;
        Ok(outputs)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<RunReport> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        RunReport::load(&self.dir)
    }

    pub fn timings(&self) -> Result<BTreeMap<String, f64>> {
        read_timings(&self.dir)
    }

    fn record_timing(&self, stage: Stage, secs: f64) -> Result<()> {
        let mut t = self.timings()?;
        t.insert(stage.name().into(), secs);
        let json = serde_json::to_string_pretty(&t)?;
        self.write(TIMINGS_FILE, json)?;
        Ok(())
    }
}

pub fn read_timings(dir: &Path) -> Result<BTreeMap<String, f64>> {
    let p = dir.join(TIMINGS_FILE);
    if !p.exists() {
        return Ok(BTreeMap::new());
    }
    let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// `runs/<hash12>-<unix seconds>` under `root`.
pub fn new_run_dir(root: &Path, config: &ScenarioConfig) -> Result<PathBuf> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(root.join(format!("{}-{secs:012}", config.hash12()?)))
}

/// Most recent run directory for this config under `root`, if any.
pub fn latest_run_dir(root: &Path, config: &ScenarioConfig) -> Result<Option<PathBuf>> {
    let prefix = format!("{}-", config.hash12()?);
    let Ok(entries) = std::fs::read_dir(root) else {
        return Ok(None);
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(&prefix))
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs.pop())
}
