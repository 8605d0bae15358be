use std::path::Path;

use lmp_llm::BackendConfig;
use lmp_pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
    /// Upper bound on streamed samples per simulated second.
    pub stream_rate_hz: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            backend: BackendConfig::default(),
            stream_rate_hz: 60.0,
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: Config = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        if p.dmp.basis_count < 2 {
            return Err(ConfigError::Invalid("dmp.basis_count must be at least 2".into()));
        }
        if !positive(p.dmp.duration) || !positive(p.release_duration_factor) {
            return Err(ConfigError::Invalid("durations must be positive".into()));
        }
        if !positive(self.stream_rate_hz) {
            return Err(ConfigError::Invalid("stream_rate_hz must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: Config = serde_json::from_str(r#"{"pipeline": {"max_retries": 2}, "backend": {"kind": "http"}}"#).unwrap();
        assert_eq!(c.pipeline.max_retries, 2);
        assert_eq!(c.pipeline.dmp.basis_count, 11);
        assert_eq!(c.backend.kind, lmp_llm::BackendKind::Http);
        assert_eq!(c.stream_rate_hz, 60.0);
    }
}
