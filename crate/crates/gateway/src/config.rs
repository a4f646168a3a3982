//! Service configuration: one TOML file plus `MARGIN_*` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use margin_agents::retrieval::RetrievalConfig;
use margin_core::patch::ApplyOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::UserRecord;

pub const DEFAULT_TOKEN_TTL_SECS: i64 = 24 * 3600;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("parsing {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("environment variable {name}: {reason}")]
    Env { name: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Fixture-driven answers; without a script every call gets a synthesized value.
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    /// An OpenAI-compatible endpoint. Needs the `live` feature.
    Live { endpoint: String, model: String, api_key_env: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    /// Holds `journal.jsonl` and `telemetry.jsonl`; state is in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Corpus file for literature search; an empty corpus when unset.
    pub corpus: Option<PathBuf>,
    /// Extra schemas, templates and workflows layered over the built-in catalog.
    pub catalog_dir: Option<PathBuf>,
    pub token_ttl_secs: i64,
    /// Fan-out width; each workflow's own `max_parallel` applies when unset.
    pub pool_width: Option<usize>,
    pub patch: ApplyOptions,
    pub retrieval: RetrievalConfig,
    /// Agent selector to model selector. Agents not listed use `default`.
    pub models: BTreeMap<String, String>,
    /// Model selector to provider.
    pub providers: BTreeMap<String, ProviderConfig>,
    pub users: Vec<UserRecord>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: None,
            corpus: None,
            catalog_dir: None,
            token_ttl_secs: DEFAULT_TOKEN_TTL_SECS,
            pool_width: None,
            patch: ApplyOptions::default(),
            retrieval: RetrievalConfig::default(),
            models: BTreeMap::new(),
            providers: BTreeMap::from([("default".into(), ProviderConfig::Scripted { script: None })]),
            users: Vec::new(),
        }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), reason: e.to_string() })?;
        if let Some(dir) = origin.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.into(), reason: e.to_string() })?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths in the file are taken relative to the file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.corpus);
        fix(&mut self.catalog_dir);
        for p in self.providers.values_mut() {
            if let ProviderConfig::Scripted { script } = p {
                fix(script);
            }
        }
    }

    /// Overrides from `MARGIN_BIND`, `MARGIN_DATA_DIR`, `MARGIN_CORPUS`,
    /// `MARGIN_CATALOG_DIR`, `MARGIN_TOKEN_TTL_SECS`, `MARGIN_POOL_WIDTH` and
    /// `MARGIN_FUZZY_THRESHOLD`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env { name: name.into(), reason: e.to_string() })
        }
        if let Some(v) = get("MARGIN_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("MARGIN_DATA_DIR") {
            self.data_dir = Some(v.into());
        }
        if let Some(v) = get("MARGIN_CORPUS") {
            self.corpus = Some(v.into());
        }
        if let Some(v) = get("MARGIN_CATALOG_DIR") {
            self.catalog_dir = Some(v.into());
        }
        if let Some(v) = get("MARGIN_TOKEN_TTL_SECS") {
            self.token_ttl_secs = num("MARGIN_TOKEN_TTL_SECS", &v)?;
        }
        if let Some(v) = get("MARGIN_POOL_WIDTH") {
            self.pool_width = Some(num("MARGIN_POOL_WIDTH", &v)?);
        }
        if let Some(v) = get("MARGIN_FUZZY_THRESHOLD") {
            self.patch.fuzzy_threshold = num("MARGIN_FUZZY_THRESHOLD", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.token_ttl_secs <= 0 {
            return bad("token_ttl_secs must be positive".into());
        }
        if self.pool_width == Some(0) {
            return bad("pool_width must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.patch.fuzzy_threshold) {
            return bad("patch.fuzzy_threshold must lie in [0, 1]".into());
        }
        for (agent, model) in &self.models {
            if agent.parse::<margin_agents::AgentKind>().is_err() {
                return bad(format!("models: unknown agent `{agent}`"));
            }
            if !self.providers.contains_key(model) {
                return bad(format!("models: agent `{agent}` routes to unknown model `{model}`"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for u in &self.users {
            if !seen.insert(&u.username) {
                return bad(format!("users: duplicate username `{}`", u.username));
            }
        }
        Ok(())
    }

    /// The model selector serving `agent`.
    pub fn model_for(&self, agent: &str) -> &str {
        self.models.get(agent).map_or(margin_agents::builtin::DEFAULT_MODEL, String::as_str)
    }
}
