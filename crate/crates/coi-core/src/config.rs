//! Experiment configuration: a TOML file describing the corpus, the
//! method/model grid, seeds, split, concurrency and output locations.
//! Relative paths are resolved against the directory containing the file.

use crate::backend::SamplingParams;
use crate::chain::MethodId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How a model's completions are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointConfig {
    Mock {
        #[serde(default)]
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refusal_trigger: Option<String>,
    },
    Http {
        #[serde(default = "default_base_url")]
        base_url: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_backoff_ms")]
        initial_backoff_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requests_per_minute: Option<u32>,
    },
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".to_string()
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint: EndpointConfig,
    #[serde(default = "SamplingParams::greedy")]
    pub sampling: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_window_size")]
    pub window_size: usize,
    pub methods: Vec<MethodId>,
    pub models: Vec<ModelConfig>,
    pub global_seed: u64,
    #[serde(default = "default_fewshot_n")]
    pub fewshot_n: usize,
    /// Fraction of sessions whose windows form the few-shot support set.
    /// Ignored when `support_path` is given.
    #[serde(default)]
    pub support_fraction: f64,
    /// Explicit support set: a text file with one window id per line in
    /// `session_id#window_index` form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_path: Option<PathBuf>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Response cache directory; omit to disable caching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Directory holding definition/template/cue assets; omit for the
    /// built-in set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_dir: Option<PathBuf>,
    /// Extra refusal phrases for HTTP backends, on top of the defaults.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refusal_phrases: Vec<String>,
    /// Whether extraction also accepts patient-code names as answers.
    #[serde(default = "default_true")]
    pub accept_code_names: bool,
}

fn default_window_size() -> usize {
    10
}

fn default_fewshot_n() -> usize {
    1
}

fn default_max_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Resolve every path field relative to `base` (the config file's
    /// directory). Absolute paths are kept as-is.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.output_dir);
        if let Some(p) = self.support_path.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.cache_dir.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.asset_dir.as_mut() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("methods list is empty".to_string()));
        }
        let mut seen_methods = BTreeSet::new();
        for method in &self.methods {
            if !seen_methods.insert(method.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "method {method} listed more than once"
                )));
            }
        }
        if self.models.is_empty() {
            return Err(ConfigError::Invalid("models list is empty".to_string()));
        }
        let mut seen_models = BTreeSet::new();
        for model in &self.models {
            if model.model_id.trim().is_empty() {
                return Err(ConfigError::Invalid("model_id is empty".to_string()));
            }
            if !seen_models.insert(model.model_id.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "model {} listed more than once",
                    model.model_id
                )));
            }
            if let EndpointConfig::Mock { epsilon, .. } = &model.endpoint {
                if !(0.0..=1.0).contains(epsilon) {
                    return Err(ConfigError::Invalid(format!(
                        "model {}: epsilon {epsilon} outside [0, 1]",
                        model.model_id
                    )));
                }
            }
        }
        if self.window_size == 0 {
            return Err(ConfigError::Invalid("window_size must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.support_fraction) {
            return Err(ConfigError::Invalid(format!(
                "support_fraction {} outside [0, 1)",
                self.support_fraction
            )));
        }
        if self.support_path.is_some() && self.support_fraction > 0.0 {
            return Err(ConfigError::Invalid(
                "support_path and a nonzero support_fraction are mutually exclusive".to_string(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".to_string()));
        }
        Ok(())
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

/// Load, path-resolve and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.resolve_paths(base);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SamplingStrategy;
    use std::io::Write;

    const MINIMAL: &str = r#"
corpus = "corpus.jsonl"
methods = ["coi", "zero_shot"]
global_seed = 17
output_dir = "runs/demo"

[[models]]
model_id = "mock-a"
endpoint = { kind = "mock" }
"#;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("experiment.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn minimal_config_gets_defaults_and_resolved_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), MINIMAL);
        let config = load_config(&path).unwrap();
        assert_eq!(config.window_size, 10);
        assert_eq!(config.fewshot_n, 1);
        assert_eq!(config.max_in_flight, 4);
        assert_eq!(config.support_fraction, 0.0);
        assert!(config.accept_code_names);
        assert!(config.cache_dir.is_none());
        assert_eq!(config.corpus, dir.path().join("corpus.jsonl"));
        assert_eq!(config.output_dir, dir.path().join("runs/demo"));
        assert_eq!(config.methods, vec![MethodId::CoI, MethodId::ZeroShot]);
        assert_eq!(config.models[0].sampling.strategy, SamplingStrategy::Greedy);
        assert!(matches!(
            config.models[0].endpoint,
            EndpointConfig::Mock { epsilon, .. } if epsilon == 0.0
        ));
    }

    #[test]
    fn absolute_paths_are_kept() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("\"corpus.jsonl\"", "\"/data/corpus.jsonl\"");
        let path = write_config(dir.path(), &text);
        let config = load_config(&path).unwrap();
        assert_eq!(config.corpus, PathBuf::from("/data/corpus.jsonl"));
    }

    #[test]
    fn http_endpoint_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace(
            "endpoint = { kind = \"mock\" }",
            "endpoint = { kind = \"http\", base_url = \"http://localhost:9/v1\" }",
        );
        let path = write_config(dir.path(), &text);
        let config = load_config(&path).unwrap();
        match &config.models[0].endpoint {
            EndpointConfig::Http {
                base_url,
                api_key_env,
                timeout_secs,
                max_retries,
                initial_backoff_ms,
                requests_per_minute,
            } => {
                assert_eq!(base_url, "http://localhost:9/v1");
                assert_eq!(api_key_env, "OPENAI_API_KEY");
                assert_eq!(*timeout_secs, 60);
                assert_eq!(*max_retries, 3);
                assert_eq!(*initial_backoff_ms, 500);
                assert!(requests_per_minute.is_none());
            }
            other => panic!("expected http endpoint, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_methods_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let empty = MINIMAL.replace("[\"coi\", \"zero_shot\"]", "[]");
        let err = load_config(&write_config(dir.path(), &empty)).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");

        let dup = MINIMAL.replace("[\"coi\", \"zero_shot\"]", "[\"coi\", \"coi\"]");
        let err = load_config(&write_config(dir.path(), &dup)).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn rejects_bad_support_fraction_and_conflicting_support_path() {
        let dir = tempfile::tempdir().unwrap();
        // Insert before the [[models]] table so the keys stay top-level.
        let bad = MINIMAL.replace("global_seed = 17", "global_seed = 17\nsupport_fraction = 1.0");
        let err = load_config(&write_config(dir.path(), &bad)).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");

        let conflict = MINIMAL.replace(
            "global_seed = 17",
            "global_seed = 17\nsupport_fraction = 0.2\nsupport_path = \"support.txt\"",
        );
        let err = load_config(&write_config(dir.path(), &conflict)).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace(
            "endpoint = { kind = \"mock\" }",
            "endpoint = { kind = \"mock\", epsilon = 1.5 }",
        );
        let err = load_config(&write_config(dir.path(), &text)).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn unknown_method_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("\"zero_shot\"", "\"mystery\"");
        let err = load_config(&write_config(dir.path(), &text)).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_config(Path::new("/nonexistent/experiment.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }), "{err}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config(&write_config(dir.path(), MINIMAL)).unwrap();
        let serialized = toml::to_string(&config).unwrap();
        let reparsed: ExperimentConfig = toml::from_str(&serialized).unwrap();
        assert_eq!(reparsed, config);
    }
}
