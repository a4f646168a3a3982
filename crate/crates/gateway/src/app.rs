//! Shared service state and its construction from configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use margin_agents::retrieval::{index_corpus, read_corpus, CorpusIndex};
use margin_agents::{Catalog, Provider, Runtime, ScriptedProvider};
use margin_core::clock::{Clock, SystemClock};
use margin_core::DocumentStore;
use thiserror::Error;

use crate::auth::{Authenticator, LocalUsers, Sessions};
use crate::config::{GatewayConfig, ProviderConfig};
use crate::telemetry::TelemetryLog;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("store: {0}")]
    Store(#[from] margin_core::StoreError),
    #[error("telemetry: {0}")]
    Telemetry(#[from] crate::telemetry::TelemetryError),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("provider `{name}`: {reason}")]
    Provider { name: String, reason: String },
    #[error("runtime: {0}")]
    Runtime(#[from] margin_agents::builtin::InitError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub struct Gateway {
    pub config: GatewayConfig,
    pub store: Arc<DocumentStore>,
    pub runtime: Arc<Runtime>,
    pub sessions: Sessions,
    pub auth: Box<dyn Authenticator>,
    pub telemetry: TelemetryLog,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("bind", &self.config.bind).field("store", &self.store).finish_non_exhaustive()
    }
}

fn build_provider(name: &str, cfg: &ProviderConfig) -> Result<Arc<dyn Provider>, StartupError> {
    let fail = |reason: String| StartupError::Provider { name: name.into(), reason };
    match cfg {
        ProviderConfig::Scripted { script: None } => Ok(Arc::new(ScriptedProvider::new())),
        ProviderConfig::Scripted { script: Some(path) } => {
            let text = std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(ScriptedProvider::from_json(&text).map_err(|e| fail(e.to_string()))?))
        }
        #[cfg(feature = "live")]
        ProviderConfig::Live { endpoint, model, api_key_env } => {
            let key = std::env::var(api_key_env).map_err(|_| fail(format!("{api_key_env} is not set")))?;
            Ok(Arc::new(margin_agents::live::LiveProvider::new(endpoint, &key, model).map_err(|e| fail(e.to_string()))?))
        }
        #[cfg(not(feature = "live"))]
        ProviderConfig::Live { .. } => Err(fail("this build has no live provider support (enable the `live` feature)".into())),
    }
}

fn load_corpus(cfg: &GatewayConfig) -> Result<CorpusIndex, StartupError> {
    let Some(path) = &cfg.corpus else {
        return Ok(CorpusIndex::default());
    };
    let file = File::open(path).map_err(|e| StartupError::Corpus(format!("{}: {e}", path.display())))?;
    let entries = read_corpus(BufReader::new(file)).map_err(|e| StartupError::Corpus(e.to_string()))?;
    index_corpus(entries).map_err(|e| StartupError::Corpus(e.to_string()))
}

impl Gateway {
    /// Opens durable state under `data_dir` (or keeps it in memory) and builds
    /// the runtime from the catalog, corpus and providers in `config`.
    pub fn from_config(config: GatewayConfig) -> Result<Self, StartupError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let (store, telemetry) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (
                    DocumentStore::open_with_clock(dir.join(JOURNAL_FILE), clock.clone())?,
                    TelemetryLog::open(&dir.join(TELEMETRY_FILE))?,
                )
            }
            None => (DocumentStore::in_memory(), TelemetryLog::in_memory()),
        };
        let mut catalog = Catalog::builtin().map_err(|e| StartupError::Catalog(e.to_string()))?;
        if let Some(dir) = &config.catalog_dir {
            catalog.load_dir(dir).map_err(|e| StartupError::Catalog(e.to_string()))?;
        }
        let providers = config
            .providers
            .iter()
            .map(|(name, p)| Ok((name.clone(), build_provider(name, p)?)))
            .collect::<Result<BTreeMap<_, _>, StartupError>>()?;
        let runtime = Runtime::standard(catalog, Arc::new(load_corpus(&config)?), config.retrieval, providers)?;
        Ok(Self::assemble(config, Arc::new(store), Arc::new(runtime), telemetry, clock))
    }

    /// Wires prebuilt parts together; authentication uses the configured users.
    pub fn assemble(
        config: GatewayConfig,
        store: Arc<DocumentStore>,
        runtime: Arc<Runtime>,
        telemetry: TelemetryLog,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            sessions: Sessions::new(config.token_ttl_secs, clock.clone()),
            auth: Box::new(LocalUsers::new(config.users.clone())),
            config,
            store,
            runtime,
            telemetry,
            clock,
        }
    }

    pub fn with_authenticator(mut self, auth: impl Authenticator + 'static) -> Self {
        self.auth = Box::new(auth);
        self
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }
}
