//! Memora: an agent memory engine built on harmonic memory entries.
//!
//! Each memory is stored twice over: a single primary abstraction that
//! names what the memory is about, and a set of cue anchors that tie it
//! to the contexts it may be needed in. Ingestion consolidates raw
//! sources into these entries, retrieval runs a budgeted
//! refine/expand/stop loop over the two indexes, and the policy module
//! scores retrieval trajectories for group-relative training.

pub mod config;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod policy;
pub mod provider;
pub mod retrieval;
pub mod snapshot;
pub mod store;
pub mod theory;

pub use config::{load_config, EmbedderConfig, EngineConfig, ProviderConfig, CONFIG_VERSION};
pub use engine::{Engine, EntryDetail, QueryMode, SourceSpec};
pub use error::{MemoraError, Result};
pub use ingest::{ingest, ExtractionBackend, IngestConfig, IngestReport, Segmenter};
pub use retrieval::{
    policy_retrieve, semantic_retrieve, RetrievalConfig, RetrievalResult, SeedMode,
};
pub use store::{MemoryStore, SourceKind, SourceUnit, StoreStats};
