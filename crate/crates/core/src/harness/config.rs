use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::ScenarioConfig;
use crate::error::{Error, Result};
use crate::nn::ArchDescriptor;
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
/// Overrides `output_dir`.
pub const ENV_OUTPUT_DIR: &str = "DIFFBEAM_OUTPUT_DIR";
/// Overrides `threads`.
pub const ENV_THREADS: &str = "DIFFBEAM_THREADS";

/// Compared policy architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Architecture {
    DmFnn,
    DmGnn,
    Fnn,
    Gnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::DmGnn, Self::DmFnn, Self::Gnn, Self::Fnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::DmFnn => "DM-FNN",
            Self::DmGnn => "DM-GNN",
            Self::Fnn => "FNN",
            Self::Gnn => "GNN",
        }
    }

    pub fn is_diffusion(self) -> bool {
        matches!(self, Self::DmFnn | Self::DmGnn)
    }

    pub fn descriptor(self, scenario: &ScenarioSection, model: &ModelConfig) -> ArchDescriptor {
        let (n, k) = (scenario.n_antennas, scenario.n_users);
        match self {
            Self::DmFnn => ArchDescriptor::fnn_noise_predictor(n, k, &model.fnn_hidden),
            Self::DmGnn => ArchDescriptor::gnn_noise_predictor(model.gnn_hidden, model.gnn_rounds),
            Self::Fnn => ArchDescriptor::fnn_policy(n, k, &model.fnn_hidden),
            Self::Gnn => ArchDescriptor::gnn_policy(model.gnn_hidden, model.gnn_rounds),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "dmfnn" => Ok(Self::DmFnn),
            "dmgnn" => Ok(Self::DmGnn),
            "fnn" => Ok(Self::Fnn),
            "gnn" => Ok(Self::Gnn),
            _ => Err(Error::UnknownArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_antennas: usize,
    pub n_users: usize,
    pub snr_db: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { n_antennas: 8, n_users: 4, snr_db: 10.0 }
    }
}

impl ScenarioSection {
    pub fn at(&self, rho: f64, seed: u64) -> Result<ScenarioConfig> {
        ScenarioConfig::from_snr_db(self.n_antennas, self.n_users, self.snr_db, rho, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fnn_hidden: Vec<usize>,
    pub gnn_hidden: usize,
    pub gnn_rounds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { fnn_hidden: vec![256, 256], gnn_hidden: 32, gnn_rounds: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WmmseConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8 }
    }
}

/// A full correlation sweep. Serialized as TOML; see `configs/` for the
/// documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    /// Worker threads for independent cells; 0 uses all cores.
    pub threads: usize,
    pub architectures: Vec<String>,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Candidate counts evaluated for diffusion policies; one record each.
    pub n_candidates: Vec<usize>,
    pub save_checkpoints: bool,
    pub plot: bool,
    pub scenario: ScenarioSection,
    pub model: ModelConfig,
    pub wmmse: WmmseConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output_dir: PathBuf::from("results"),
            threads: 0,
            architectures: Architecture::ALL.iter().map(|a| a.name().to_string()).collect(),
            rhos: vec![0.0, 0.2, 0.4, 0.6, 0.8, 0.95],
            seeds: (0..5).collect(),
            n_train: 2048,
            n_test: 512,
            n_candidates: vec![8],
            save_checkpoints: false,
            plot: true,
            scenario: ScenarioSection::default(),
            model: ModelConfig::default(),
            wmmse: WmmseConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies the output-directory and thread-count environment overrides.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(t) = std::env::var(ENV_THREADS) {
            self.threads =
                t.parse().map_err(|_| Error::InvalidConfig(format!("{ENV_THREADS}={t} is not a thread count")))?;
        }
        Ok(self)
    }

    pub fn parsed_architectures(&self) -> Result<Vec<Architecture>> {
        self.architectures.iter().map(|a| a.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidConfig(what));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        let archs = self.parsed_architectures()?;
        if archs.is_empty() || self.rhos.is_empty() || self.seeds.is_empty() || self.n_candidates.is_empty() {
            return bad("architectures, rhos, seeds and n_candidates must be nonempty".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.n_candidates.contains(&0) {
            return bad("n_candidates entries must be positive".into());
        }
        if self.model.fnn_hidden.is_empty() || self.model.fnn_hidden.contains(&0) || self.model.gnn_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        if self.wmmse.max_iter == 0 || !(self.wmmse.tol > 0.0) {
            return bad("wmmse needs max_iter >= 1 and tol > 0".into());
        }
        for &rho in &self.rhos {
            self.scenario.at(rho, 0)?;
        }
        self.train.validate()
    }
}
