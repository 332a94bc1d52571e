use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::split::SplitSpec;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::langmodel::VocabPolicy;
use crate::unlearner::{Method, UnlearnConfig};

/// Prefix of environment variables that override config fields. Nested
/// fields are joined with `__`, e.g. `MARI_UNLEARN__LAMBDA=0.9`.
pub const ENV_PREFIX: &str = "MARI_";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub context_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            context_len: 4,
            embed_dim: 16,
            hidden_dim: 64,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub holdout: PathBuf,
    pub output_dir: PathBuf,
    pub vocab: VocabPolicy,
    pub seq_len: usize,
    pub model: ModelConfig,
    pub split: SplitSpec,
    /// Settings for the baseline and gold fine-tuning runs.
    pub finetune: UnlearnConfig,
    pub unlearn: UnlearnConfig,
    /// Extra unlearning methods run from the same baseline for comparison.
    pub compare_methods: Vec<Method>,
    pub detector: DetectorConfig,
    pub bounds_epsilon: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::from("data/train.jsonl"),
            validation: PathBuf::from("data/validation.jsonl"),
            holdout: PathBuf::from("data/holdout.jsonl"),
            output_dir: PathBuf::from("out"),
            vocab: VocabPolicy::Char,
            seq_len: 32,
            model: ModelConfig::default(),
            split: SplitSpec::default(),
            finetune: UnlearnConfig {
                method: Method::None,
                lambda: 0.0,
                ..UnlearnConfig::default()
            },
            unlearn: UnlearnConfig::default(),
            compare_methods: vec![Method::Ga],
            detector: DetectorConfig::default(),
            bounds_epsilon: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        self.split.validate()?;
        self.finetune.validate()?;
        self.unlearn.validate()?;
        if self.finetune.method != Method::None {
            return Err(Error::Config("finetune.method must be none".into()));
        }
        if !(self.bounds_epsilon >= 0.0 && self.bounds_epsilon.is_finite()) {
            return Err(Error::Config(
                "bounds_epsilon must be finite and ≥ 0".into(),
            ));
        }
        for (name, p) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("holdout", &self.holdout),
        ] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "{name} corpus {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Parses JSON text, applies `overrides` and resolves relative paths
    /// against `base_dir`.
    pub fn from_json_with(
        text: &str,
        base_dir: &Path,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        apply_overrides(&mut value, overrides)?;
        let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
        for p in [
            &mut cfg.train,
            &mut cfg.validation,
            &mut cfg.holdout,
            &mut cfg.output_dir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `MARI_*` environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, std::env::vars())
    }

    pub fn load_with(
        path: &Path,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_with(&text, base, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `MARI_A__B=v` at path `a.b`. The value is parsed as JSON when it
/// parses, otherwise taken as a string.
fn apply_overrides(
    root: &mut Value,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override {key}")));
        }
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut node = &mut *root;
        for (i, part) in path.iter().enumerate() {
            let Value::Object(map) = node else {
                return Err(Error::Config(format!(
                    "override {key}: {} is not an object",
                    path[..i].join(".")
                )));
            };
            if i + 1 == path.len() {
                map.insert(part.clone(), parsed.clone());
                break;
            }
            node = map
                .entry(part.clone())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_data() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        for f in ["train", "validation", "holdout"] {
            std::fs::write(
                dir.path().join(format!("data/{f}.jsonl")),
                "{\"text\":\"a b.\"}\n",
            )
            .unwrap();
        }
        dir
    }

    #[test]
    fn defaults_roundtrip_and_resolve() {
        let dir = with_data();
        let cfg = ExperimentConfig::from_json_with("{}", dir.path(), vec![]).unwrap();
        assert_eq!(cfg.train, dir.path().join("data/train.jsonl"));
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn env_overrides() {
        let dir = with_data();
        let vars = vec![
            ("MARI_UNLEARN__LAMBDA".to_string(), "0.9".to_string()),
            ("MARI_UNLEARN__MODE".to_string(), "pooled".to_string()),
            ("MARI_SEQ_LEN".to_string(), "16".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ];
        let cfg = ExperimentConfig::from_json_with("{\"seq_len\": 8}", dir.path(), vars).unwrap();
        assert_eq!(cfg.unlearn.lambda, 0.9);
        assert_eq!(cfg.unlearn.mode, crate::mariloss::MarIMode::Pooled);
        assert_eq!(cfg.seq_len, 16);
        let bad = vec![("MARI_SEQ_LEN__X".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_json_with("{\"seq_len\": 8}", dir.path(), bad).is_err());
    }

    #[test]
    fn missing_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ExperimentConfig::from_json_with("{}", dir.path(), vec![]),
            Err(Error::Config(_))
        ));
    }
}
