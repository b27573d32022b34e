use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage::DimensionWeights;
use crate::executor::LibFuzzerConfig;
use crate::metainfo::ScanConfig;
use crate::oracle::{OracleBackend, OracleConfig};
use crate::scheduler::SchedulerConfig;
use crate::sequence::MinerConfig;
use crate::synth::CompilerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    pub root: PathBuf,
    #[serde(flatten)]
    pub scan: ScanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub library: LibraryConfig,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    /// Generation rounds; each round targets every public API once.
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default)]
    pub miner: MinerConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub weights: DimensionWeights,
    #[serde(default)]
    pub oracles: OracleConfig,
    #[serde(default)]
    pub compiler: CompilerConfig,
    #[serde(default)]
    pub executor: LibFuzzerConfig,
    /// Simulation spec; when set, drivers are checked instead of compiled
    /// and runs are simulated.
    #[serde(default)]
    pub simulate: Option<PathBuf>,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("masfuzz-work")
}

fn one() -> usize {
    1
}

impl CampaignConfig {
    pub fn for_library(root: &Path, workdir: &Path) -> Self {
        Self {
            library: LibraryConfig { root: root.into(), scan: ScanConfig::default() },
            workdir: workdir.into(),
            rng_seed: 0,
            rounds: 1,
            miner: MinerConfig::default(),
            scheduler: SchedulerConfig::default(),
            weights: DimensionWeights::default(),
            oracles: OracleConfig::default(),
            compiler: CompilerConfig::default(),
            executor: LibFuzzerConfig::default(),
            simulate: None,
        }
    }

    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.library.root);
        fix(&mut cfg.workdir);
        if let Some(s) = cfg.simulate.as_mut() {
            fix(s);
        }
        Ok(cfg)
    }

    /// The campaign seed drives mining samples too.
    pub fn set_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.miner.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !self.library.root.is_dir() {
            return bad(format!("library root {} does not exist or is not a directory", self.library.root.display()));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if let Some(s) = &self.simulate {
            if !s.is_file() {
                return bad(format!("simulation spec {} does not exist", s.display()));
            }
        }
        self.miner.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scheduler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.weights.validate().map_err(ConfigError::Invalid)?;
        for (role, b) in [
            ("semantic", &self.oracles.semantic),
            ("generation", &self.oracles.generation),
            ("analysis", &self.oracles.analysis),
        ] {
            if let OracleBackend::Http(h) = b {
                if h.endpoint.is_empty() || h.model.is_empty() {
                    return bad(format!("{role} oracle needs an endpoint and a model"));
                }
            }
        }
        for d in &self.compiler.include_dirs {
            if !d.is_dir() {
                return bad(format!("include dir {} does not exist", d.display()));
            }
        }
        Ok(())
    }
}
