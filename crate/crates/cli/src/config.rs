//! Pipeline configuration file (TOML). Every section is optional; missing
//! keys take their defaults and unknown keys are reported and ignored.

use std::path::{Path, PathBuf};

use anyhow::Context;
use emoe_core::planner::NetConfig;
use emoe_core::sim::SimConfig;
use emoe_core::train::TrainConfig;
use emoe_core::Error;
use serde::{Deserialize, Serialize};

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "EMOE_CONFIG";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Master seed for generation, anchors and network initialization.
    pub seed: u64,
    pub paths: Paths,
    pub generate: GenerateConfig,
    pub network: NetConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: Paths::default(),
            generate: GenerateConfig::default(),
            network: NetConfig::default(),
            train: TrainConfig::default(),
            sim: SimConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Artifact locations, relative to the working directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub labeled: PathBuf,
    pub eval: PathBuf,
    pub bank: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/scenes.jsonl".into(),
            labeled: "data/labeled.jsonl".into(),
            eval: "data/eval.jsonl".into(),
            bank: "artifacts/anchors.json".into(),
            checkpoints: "artifacts/model".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    pub fn model(&self) -> PathBuf {
        self.checkpoints.join("model.json")
    }

    pub fn runs(&self) -> PathBuf {
        self.reports.join("runs.json")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Training scenes per scenario type.
    pub per_type: usize,
    /// Held-out scenes per scenario type for closed-loop evaluation.
    pub eval_per_type: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            per_type: 200,
            eval_per_type: 20,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub tol: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            step: 1e-4,
            seed: 0,
        }
    }
}

impl Config {
    /// Parses TOML text. Returns the config and the dotted paths of any
    /// keys that were not recognized.
    pub fn parse(text: &str) -> anyhow::Result<(Self, Vec<String>)> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok((cfg, unknown))
    }

    pub fn load(path: &Path) -> anyhow::Result<(Self, Vec<String>)> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                what: "config file".into(),
                path: path.to_path_buf(),
            }
            .into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> emoe_core::Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.sim.validate()?;
        if self.generate.per_type == 0 || self.generate.eval_per_type == 0 {
            return Err(Error::Config("generate counts must be positive".into()));
        }
        if !(self.gradcheck.tol > 0.0 && self.gradcheck.step > 0.0) {
            return Err(Error::Config("gradcheck tol and step must be positive".into()));
        }
        Ok(())
    }
}
