use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;

/// Environment variable that replaces `output_dir` from the config file.
pub const OUT_DIR_ENV: &str = "MTLDS_OUT_DIR";

/// One experiment: a model configuration, a data source and the seeds to run.
///
/// ```toml
/// seeds = [1, 2, 3]
/// output_dir = "runs/mtlds"
/// split = [0.8, 0.1, 0.1]
///
/// [model]
/// kind = "mtlds"
/// aggregator = "linear"
///
/// [synth]
/// impressions = 500
///
/// [eval]
/// cutoffs = [2, 6, 12]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    /// Generate the data. Mutually exclusive with `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Dataset file; relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Train, validation and test fractions of the impressions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Train on this ordered subset of the tasks (e.g. drop `cart` from a three-task file).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_tasks: Option<Vec<String>>,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            synth: Some(SynthConfig::default()),
            dataset: None,
            split: default_split(),
            eval: EvalConfig::default(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            keep_tasks: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves a relative `dataset` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(ds) = &cfg.dataset {
            if ds.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset = Some(base.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synth, &self.dataset) {
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {}
            _ => return Err(Error::Config("exactly one of `synth` and `dataset` must be given".into())),
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(Error::Config("metric cutoffs must be non-empty and positive".into()));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 || self.split[0] == 0.0 {
            return Err(Error::Config(format!("split fractions {:?} must be non-negative, sum to 1, with a non-empty training part", self.split)));
        }
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    /// SHA-256 of the configuration's canonical JSON encoding. The output directory
    /// is excluded so that moving results does not change their identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        format!("{:x}", Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_model_section() {
        let cfg = ExperimentConfig::from_toml_str("[synth]\nimpressions = 10\n").unwrap();
        assert_eq!(cfg.eval.cutoffs, vec![2, 6, 12]);
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.synth.unwrap().impressions, 10);
    }

    #[test]
    fn exactly_one_data_source() {
        assert!(ExperimentConfig::from_toml_str("seeds = [1]\n").is_err());
        let both = "dataset = \"x.tsv\"\n[synth]\nimpressions = 10\n";
        assert!(matches!(ExperimentConfig::from_toml_str(both), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml_str("dataset = \"x.tsv\"\n").is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[synth]\nimpresions = 10\n").is_err());
        assert!(ExperimentConfig::from_toml_str("seeds = []\n[synth]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("split = [0.5, 0.2, 0.2]\n[synth]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[synth]\n[eval]\ncutoffs = [0]\n").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);

        let mut moved = cfg.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.model.tau = 0.5;
        assert_ne!(other.hash(), cfg.hash());
    }
}
