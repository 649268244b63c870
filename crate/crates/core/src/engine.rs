//! The engine ties a configured store to its backends. The CLI and the
//! HTTP service are thin layers over this type, which is what keeps
//! their outputs identical for identical inputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{resolve, EmbedderConfig, EngineConfig, ProviderConfig};
use crate::embedding::{Embedder, TestEmbedder};
use crate::error::{MemoraError, Result};
use crate::ingest::{ingest, ExtractionBackend, IngestReport};
use crate::provider::{
    ChatProvider, ChatTransport, HttpChatTransport, HttpEmbedder, PromptSet, ProviderBackend,
    RetryingClient,
};
use crate::retrieval::{
    policy_retrieve, semantic_retrieve, HeuristicPolicy, ProviderPolicy, RetrievalConfig,
    RetrievalResult,
};
use crate::store::{EntryId, MemoryStore, SourceKind, SourceUnit, StoreStats};

/// Wire-level ingestion input: a named document plus its ordered units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub kind: SourceKind,
    pub units: Vec<SourceUnit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// One-shot scoring, no traversal.
    Semantic,
    /// The sequential loop under the configured policy: heuristic when
    /// no provider is set, provider-driven otherwise.
    Policy,
}

impl QueryMode {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "semantic" => Some(Self::Semantic),
            "policy" => Some(Self::Policy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeBrief {
    pub id: u64,
    pub text: String,
}

/// Entry view for the detail endpoint: the record plus resolved cue
/// labels and episode texts.
#[derive(Debug, Clone, Serialize)]
pub struct EntryDetail {
    pub id: u64,
    pub abstraction: String,
    pub value: String,
    pub revision: u32,
    pub cues: Vec<String>,
    pub episodes: Vec<EpisodeBrief>,
}

pub struct Engine {
    config: EngineConfig,
    base_dir: PathBuf,
    store: MemoryStore,
    backend: ExtractionBackend,
}

impl Engine {
    /// Build from a validated config, loading the snapshot at
    /// `store_path` when one exists.
    pub fn new(config: EngineConfig) -> Result<Self> {
        Self::build(config, PathBuf::from("."), None)
    }

    /// Like [`Engine::new`] with relative config paths resolved against
    /// `base_dir` (normally the config file's directory).
    pub fn with_base_dir(config: EngineConfig, base_dir: &Path) -> Result<Self> {
        Self::build(config, base_dir.to_path_buf(), None)
    }

    /// Test seam: route any provider traffic through the given
    /// transport instead of HTTP. With provider = none the transport
    /// must never be touched; instrumented transports assert that.
    pub fn with_transport(
        config: EngineConfig,
        base_dir: &Path,
        transport: Arc<dyn ChatTransport>,
    ) -> Result<Self> {
        Self::build(config, base_dir.to_path_buf(), Some(transport))
    }

    fn build(
        config: EngineConfig,
        base_dir: PathBuf,
        transport: Option<Arc<dyn ChatTransport>>,
    ) -> Result<Self> {
        config.validate()?;
        let embedder: Arc<dyn Embedder> = match &config.embedder {
            EmbedderConfig::Test { dims } => Arc::new(TestEmbedder::new(*dims)),
            EmbedderConfig::External { endpoint, model } => {
                Arc::new(HttpEmbedder::new(endpoint, model)?)
            }
        };
        let store = match &config.store_path {
            Some(path) => {
                let resolved = resolve(&base_dir, path);
                if resolved.is_file() {
                    crate::snapshot::load_snapshot(&resolved, embedder.clone())?
                } else {
                    MemoryStore::new(embedder.clone())
                }
            }
            None => MemoryStore::new(embedder.clone()),
        };
        let prompts = match &config.prompt_dir {
            Some(dir) => PromptSet::load_with_overrides(&resolve(&base_dir, dir))?,
            None => PromptSet::default(),
        };
        let backend = match &config.provider {
            ProviderConfig::None => ExtractionBackend::Stub,
            ProviderConfig::External {
                endpoint,
                model,
                seed,
                temperature,
            } => {
                let chat: Arc<dyn ChatProvider> = match transport {
                    Some(t) => Arc::new(RetryingClient::new(t)),
                    None => Arc::new(RetryingClient::new(Arc::new(HttpChatTransport::new(
                        endpoint,
                    )?))),
                };
                ExtractionBackend::Provider(ProviderBackend {
                    chat,
                    prompts,
                    model: model.clone(),
                    seed: *seed,
                    temperature: *temperature,
                })
            }
        };
        Ok(Self {
            config,
            base_dir,
            store,
            backend,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    /// Run the full pipeline on one source.
    pub fn ingest_source(&mut self, spec: SourceSpec) -> Result<IngestReport> {
        ingest(
            &mut self.store,
            &spec.name,
            spec.kind,
            spec.units,
            &self.config.ingest,
            &self.backend,
        )
    }

    pub fn query(&self, text: &str, mode: QueryMode) -> Result<RetrievalResult> {
        self.query_with(text, mode, &self.config.retrieval)
    }

    /// Query under a caller-supplied retrieval config (for per-request
    /// overrides); backend selection still follows the engine config.
    pub fn query_with(
        &self,
        text: &str,
        mode: QueryMode,
        retrieval: &RetrievalConfig,
    ) -> Result<RetrievalResult> {
        match mode {
            QueryMode::Semantic => semantic_retrieve(&self.store, text, retrieval),
            QueryMode::Policy => match &self.backend {
                ExtractionBackend::Stub => {
                    let mut policy = HeuristicPolicy::default();
                    policy_retrieve(&self.store, text, &mut policy, retrieval)
                }
                ExtractionBackend::Provider(backend) => {
                    let mut policy = ProviderPolicy {
                        backend: backend.clone(),
                    };
                    policy_retrieve(&self.store, text, &mut policy, retrieval)
                }
            },
        }
    }

    pub fn entry_detail(&self, id: u64) -> Result<EntryDetail> {
        let entry = self.store.entry(EntryId(id))?;
        let mut cues: Vec<String> = entry
            .cue_ids
            .iter()
            .map(|a| self.store.anchor(*a).map(|anchor| anchor.label.clone()))
            .collect::<Result<_>>()?;
        cues.sort();
        let episodes: Vec<EpisodeBrief> = entry
            .episodic_ids
            .iter()
            .map(|e| {
                self.store.episode(*e).map(|ep| EpisodeBrief {
                    id: e.0,
                    text: ep.value_text.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(EntryDetail {
            id: entry.id.0,
            abstraction: entry.abstraction.clone(),
            value: entry.value.clone(),
            revision: entry.revision,
            cues,
            episodes,
        })
    }

    pub fn stats(&self) -> StoreStats {
        self.store.stats()
    }

    /// Write the snapshot to the configured store_path.
    pub fn save_snapshot(&self) -> Result<PathBuf> {
        let path = self.config.store_path.as_ref().ok_or_else(|| {
            MemoraError::Config("no store_path configured for export".into())
        })?;
        let resolved = resolve(&self.base_dir, path);
        crate::snapshot::save_snapshot(&self.store, &resolved)?;
        Ok(resolved)
    }

    pub fn save_snapshot_to(&self, path: &Path) -> Result<()> {
        crate::snapshot::save_snapshot(&self.store, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ProviderRequest, ProviderResponse};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn unit(ordinal: u32, label: &str, text: &str) -> SourceUnit {
        SourceUnit {
            ordinal,
            label: Some(label.to_string()),
            text: text.to_string(),
            timestamp: None,
        }
    }

    fn conversation_spec() -> SourceSpec {
        SourceSpec {
            name: "chat-1".into(),
            kind: SourceKind::Conversation,
            units: vec![
                unit(1, "Emma", "Emma loves swimming every weekend."),
                unit(2, "Alex", "Noted, sounds refreshing."),
            ],
        }
    }

    struct CountingTransport {
        calls: AtomicUsize,
        reply: String,
    }

    impl CountingTransport {
        fn new(reply: &str) -> Self {
            Self {
                calls: AtomicUsize::new(0),
                reply: reply.to_string(),
            }
        }
    }

    impl ChatTransport for CountingTransport {
        fn send(&self, _request: &ProviderRequest) -> Result<ProviderResponse> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(ProviderResponse {
                text: self.reply.clone(),
                usage_tokens: None,
            })
        }
    }

    #[test]
    fn test_stub_engine_round_trips_a_fact() {
        let mut engine = Engine::new(EngineConfig::default()).unwrap();
        let report = engine.ingest_source(conversation_spec()).unwrap();
        assert!(report.entries_created >= 1);
        let result = engine.query("Emma swimming", QueryMode::Semantic).unwrap();
        assert!(!result.entries.is_empty());
        let top = engine.store().entry(result.entries[0].id).unwrap();
        assert!(top.value.to_lowercase().contains("swimming"));
        let looped = engine.query("Emma swimming", QueryMode::Policy).unwrap();
        assert!(!looped.entries.is_empty());
    }

    #[test]
    fn test_query_mode_parsing() {
        assert_eq!(QueryMode::parse("semantic"), Some(QueryMode::Semantic));
        assert_eq!(QueryMode::parse("policy"), Some(QueryMode::Policy));
        assert_eq!(QueryMode::parse("hybrid"), None);
    }

    #[test]
    fn test_fresh_store_stats_are_zero() {
        let engine = Engine::new(EngineConfig::default()).unwrap();
        let stats = engine.stats();
        assert_eq!(stats.entry_count, 0);
        assert_eq!(stats.anchor_count, 0);
        assert_eq!(stats.episode_count, 0);
    }

    #[test]
    fn test_entry_detail_resolves_cues_and_episodes() {
        let mut engine = Engine::new(EngineConfig::default()).unwrap();
        let report = engine.ingest_source(conversation_spec()).unwrap();
        assert!(report.entries_created >= 1);
        let id = engine.store().entries().next().unwrap().id.0;
        let detail = engine.entry_detail(id).unwrap();
        assert!(!detail.cues.is_empty());
        assert!(!detail.episodes.is_empty());
        assert!(engine.entry_detail(9999).is_err());
    }

    #[test]
    fn test_snapshot_round_trip_through_store_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = EngineConfig::default();
        config.store_path = Some(PathBuf::from("memora.snapshot"));
        let mut engine = Engine::with_base_dir(config.clone(), dir.path()).unwrap();
        engine.ingest_source(conversation_spec()).unwrap();
        let fingerprint = engine.store().memory_fingerprint();
        let written = engine.save_snapshot().unwrap();
        assert!(written.is_file());

        let reloaded = Engine::with_base_dir(config, dir.path()).unwrap();
        assert_eq!(reloaded.store().memory_fingerprint(), fingerprint);
    }

    #[test]
    fn test_missing_snapshot_starts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = EngineConfig::default();
        config.store_path = Some(PathBuf::from("absent.snapshot"));
        let engine = Engine::with_base_dir(config, dir.path()).unwrap();
        assert_eq!(engine.stats().entry_count, 0);
    }

    #[test]
    fn test_stub_mode_never_touches_the_transport() {
        let transport = Arc::new(CountingTransport::new("STOP"));
        let mut engine = Engine::with_transport(
            EngineConfig::default(),
            Path::new("."),
            transport.clone(),
        )
        .unwrap();
        engine.ingest_source(conversation_spec()).unwrap();
        engine.query("Emma swimming", QueryMode::Semantic).unwrap();
        engine.query("Emma swimming", QueryMode::Policy).unwrap();
        engine.stats();
        assert_eq!(transport.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn test_provider_policy_routes_through_injected_transport() {
        let transport = Arc::new(CountingTransport::new("STOP"));
        let mut config = EngineConfig::default();
        config.provider = ProviderConfig::External {
            endpoint: "http://localhost:1".into(),
            model: "test-model".into(),
            seed: 42,
            temperature: 0.0,
        };
        let engine = Engine::with_transport(config, Path::new("."), transport.clone()).unwrap();
        // Even on an empty store the loop asks the policy for one
        // decision, so the canned STOP reply must flow through.
        let result = engine.query("anything", QueryMode::Policy).unwrap();
        assert!(result.entries.is_empty());
        assert!(transport.calls.load(Ordering::SeqCst) >= 1);
    }
}
