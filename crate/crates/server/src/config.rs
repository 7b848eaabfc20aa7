//! Single TOML configuration file shared by every command.
//!
//! Every section is optional and unknown keys are rejected. Command-line
//! flags override the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use patchsearch::dataset::ClassAxis;
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::eval::{LabelAxis, MatchMode};
use patchsearch::index::IndexParams;
use patchsearch::query::{DEFAULT_K, DEFAULT_MIN_SEPARATION_PX, DEFAULT_OVERSAMPLE};
use patchsearch::Magnification;
use serde::{Deserialize, Serialize};

use crate::study::Scale;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub embedder: String,
    pub paths: Paths,
    pub index: IndexParams,
    pub query: QueryDefaults,
    pub build: BuildSection,
    pub eval: EvalSection,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            embedder: ReferenceEmbedder::NAME.to_string(),
            paths: Paths::default(),
            index: IndexParams::default(),
            query: QueryDefaults::default(),
            build: BuildSection::default(),
            eval: EvalSection::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub store: Option<PathBuf>,
    /// Defaults to `annotations.json` inside the store.
    pub annotations: Option<PathBuf>,
    pub db: Option<PathBuf>,
    /// Directory for eval outputs.
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryDefaults {
    pub k: usize,
    pub oversample_factor: usize,
    pub min_separation_px: f64,
}

impl Default for QueryDefaults {
    fn default() -> Self {
        QueryDefaults {
            k: DEFAULT_K,
            oversample_factor: DEFAULT_OVERSAMPLE,
            min_separation_px: DEFAULT_MIN_SEPARATION_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSection {
    pub magnifications: Vec<Magnification>,
    pub side_px: u32,
    pub coverage_threshold: f64,
    pub stride_px: Option<u32>,
    pub axis: ClassAxis,
    /// Both counts set: class-balanced query/database split. Both unset: every patch goes to the database.
    pub queries_per_class: Option<usize>,
    pub db_per_class: Option<usize>,
}

impl Default for BuildSection {
    fn default() -> Self {
        BuildSection {
            magnifications: vec![Magnification::X40],
            side_px: patchsearch::model::DEFAULT_PATCH_SIDE,
            coverage_threshold: 0.75,
            stride_px: None,
            axis: ClassAxis::Feature,
            queries_per_class: None,
            db_per_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    pub axis: LabelAxis,
    pub mode: MatchMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 5,
            axis: LabelAxis::Feature,
            mode: MatchMode::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    /// When set, every endpoint except health requires `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
    pub study_random_fraction: f64,
    pub study_seed: u64,
    pub study_scale: Scale,
    /// Directory of per-session rating journals; sessions are kept in memory only when unset.
    pub journal_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            bearer_token: None,
            study_random_fraction: 0.25,
            study_seed: 0,
            study_scale: Scale::Binary,
            journal_dir: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.index
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.query.k == 0 || self.query.k > 1000 {
            return bad("query.k must be in 1..=1000");
        }
        if self.query.oversample_factor == 0 || self.query.oversample_factor > 100 {
            return bad("query.oversample_factor must be in 1..=100");
        }
        if !(self.query.min_separation_px >= 0.0 && self.query.min_separation_px.is_finite()) {
            return bad("query.min_separation_px must be a non-negative number");
        }
        if self.build.magnifications.is_empty() {
            return bad("build.magnifications must not be empty");
        }
        if !(self.build.coverage_threshold > 0.0 && self.build.coverage_threshold <= 1.0) {
            return bad("build.coverage_threshold must be in (0, 1]");
        }
        if self.build.queries_per_class.is_some() != self.build.db_per_class.is_some() {
            return bad("build.queries_per_class and build.db_per_class must be set together");
        }
        if self.eval.k == 0 {
            return bad("eval.k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.service.study_random_fraction) {
            return bad("service.study_random_fraction must be in [0, 1]");
        }
        if self.service.listen.parse::<SocketAddr>().is_err() {
            return bad("service.listen must be an address such as 127.0.0.1:8080");
        }
        if self.service.bearer_token.as_deref() == Some("") {
            return bad("service.bearer_token must not be empty");
        }
        Ok(())
    }
}
