//! Snapshot persistence.
//!
//! File layout (UTF-8, line-oriented):
//!
//! ```text
//! MEMORA-SNAPSHOT v1
//! {"kind":"source", ...}
//! {"kind":"segment", ...}
//! {"kind":"episode", ...}
//! {"kind":"entry", ...}
//! {"kind":"anchor", ...}
//! {"kind":"checksum","algo":"sha256","value":"<hex over all preceding bytes>"}
//! ```
//!
//! Records are written sorted by kind then id, so equal stores produce
//! byte-identical snapshots. Embedding indices are not persisted; they
//! are rebuilt deterministically from the configured embedder on load.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::Embedder;
use crate::error::{MemoraError, Result};
use crate::store::{CueAnchor, DocumentSource, EpisodicMemory, MemoryEntry, MemoryStore, Segment};

pub const SNAPSHOT_HEADER: &str = "MEMORA-SNAPSHOT v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum SnapshotRecord {
    Source(DocumentSource),
    Segment(Segment),
    Episode(EpisodicMemory),
    Entry(MemoryEntry),
    Anchor(CueAnchor),
    Checksum { algo: String, value: String },
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize the full store state to `path`.
pub fn save_snapshot(store: &MemoryStore, path: &Path) -> Result<()> {
    let dump = store.dump();
    let mut body = String::new();
    body.push_str(SNAPSHOT_HEADER);
    body.push('\n');
    let mut write = |record: SnapshotRecord| -> Result<()> {
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
        Ok(())
    };
    for s in dump.sources {
        write(SnapshotRecord::Source(s))?;
    }
    for s in dump.segments {
        write(SnapshotRecord::Segment(s))?;
    }
    for e in dump.episodes {
        write(SnapshotRecord::Episode(e))?;
    }
    for e in dump.entries {
        write(SnapshotRecord::Entry(e))?;
    }
    for a in dump.anchors {
        write(SnapshotRecord::Anchor(a))?;
    }
    let checksum = SnapshotRecord::Checksum {
        algo: "sha256".into(),
        value: hex(&Sha256::digest(body.as_bytes())),
    };
    body.push_str(&serde_json::to_string(&checksum)?);
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

/// Load a snapshot, verify its checksum, and rebuild the indices with
/// `embedder`.
pub fn load_snapshot(path: &Path, embedder: Arc<dyn Embedder>) -> Result<MemoryStore> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MemoraError::SnapshotFormat("empty file".into()))?;
    if header != SNAPSHOT_HEADER {
        return Err(MemoraError::SnapshotFormat(format!(
            "unsupported header {header:?}"
        )));
    }

    let mut sources = Vec::new();
    let mut segments = Vec::new();
    let mut episodes = Vec::new();
    let mut entries = Vec::new();
    let mut anchors = Vec::new();
    let mut checksum: Option<String> = None;
    let mut covered_bytes = SNAPSHOT_HEADER.len() + 1;

    for line in lines {
        if checksum.is_some() {
            return Err(MemoraError::SnapshotFormat(
                "data after checksum record".into(),
            ));
        }
        let record: SnapshotRecord = serde_json::from_str(line)
            .map_err(|e| MemoraError::SnapshotFormat(format!("bad record: {e}")))?;
        match record {
            SnapshotRecord::Source(s) => sources.push(s),
            SnapshotRecord::Segment(s) => segments.push(s),
            SnapshotRecord::Episode(e) => episodes.push(e),
            SnapshotRecord::Entry(e) => entries.push(e),
            SnapshotRecord::Anchor(a) => anchors.push(a),
            SnapshotRecord::Checksum { algo, value } => {
                if algo != "sha256" {
                    return Err(MemoraError::SnapshotFormat(format!(
                        "unknown checksum algorithm {algo:?}"
                    )));
                }
                checksum = Some(value);
                continue;
            }
        }
        covered_bytes += line.len() + 1;
    }

    let expected = checksum
        .ok_or_else(|| MemoraError::SnapshotFormat("missing checksum record".into()))?;
    let actual = hex(&Sha256::digest(&text.as_bytes()[..covered_bytes]));
    if actual != expected {
        return Err(MemoraError::ChecksumMismatch);
    }

    MemoryStore::load_raw(embedder, sources, segments, episodes, entries, anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TestEmbedder;
    use crate::store::{EpisodicMode, SourceKind, SourceUnit};
    use std::fs;

    fn embedder() -> Arc<TestEmbedder> {
        Arc::new(TestEmbedder::default())
    }

    #[test]
    fn test_empty_store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.snap");
        let store = MemoryStore::new(embedder());
        save_snapshot(&store, &path).unwrap();
        let loaded = load_snapshot(&path, embedder()).unwrap();
        assert_eq!(loaded.dump(), store.dump());
        assert_eq!(loaded.entry_count(), 0);
    }

    #[test]
    fn test_populated_store_roundtrip_is_exact() {
        // Oracle: structural comparison of full store dumps.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.snap");
        let mut store = MemoryStore::new(embedder());
        let src = store
            .add_source(
                "conv",
                SourceKind::Conversation,
                vec![SourceUnit {
                    ordinal: 1,
                    label: Some("Jane".into()),
                    text: "Jane: I hiked the ridge".into(),
                    timestamp: None,
                }],
            )
            .unwrap();
        let seg = store
            .add_segment(src, "hiking", vec![1], "Jane: I hiked the ridge", None)
            .unwrap();
        let ep = store
            .add_episode(seg, "hiking", "Jane: I hiked the ridge", EpisodicMode::Raw)
            .unwrap();
        let e1 = store.create_entry("Jane hiking", "hiked the ridge", &[ep]).unwrap();
        let e2 = store.create_entry("Jane gear", "bought new boots", &[ep]).unwrap();
        let e3 = store.create_entry("Emma swimming", "swims on Sundays", &[]).unwrap();
        store.update_entry(e1, "hiked the ridge | plans a second trip", None, None).unwrap();
        store.link_cue(e1, "Jane hiking").unwrap();
        store.link_cue(e1, "ridge trail").unwrap();
        store.link_cue(e2, "Jane gear").unwrap();
        store.link_cue(e3, "Emma swimming").unwrap();
        assert_eq!(store.anchor_count(), 4);

        save_snapshot(&store, &path).unwrap();
        let loaded = load_snapshot(&path, embedder()).unwrap();
        assert_eq!(loaded.dump(), store.dump());
        assert_eq!(loaded.abstraction_index().len(), store.abstraction_index().len());
        assert_eq!(loaded.cue_index().len(), store.cue_index().len());
        loaded.check_invariants().unwrap();

        // New ids must not collide with loaded ones.
        let mut loaded = loaded;
        let fresh = loaded.create_entry("new topic", "new value", &[]).unwrap();
        assert!(fresh.0 > e3.0);
    }

    #[test]
    fn test_wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snap");
        fs::write(&path, "MEMORA-SNAPSHOT v9\n").unwrap();
        assert!(matches!(
            load_snapshot(&path, embedder()),
            Err(MemoraError::SnapshotFormat(_))
        ));
    }

    #[test]
    fn test_tampered_body_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tampered.snap");
        let mut store = MemoryStore::new(embedder());
        store.create_entry("A", "v", &[]).unwrap();
        save_snapshot(&store, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"v\"", "\"w\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_snapshot(&path, embedder()),
            Err(MemoraError::ChecksumMismatch)
        ));
    }

    #[test]
    fn test_snapshot_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.snap");
        let p2 = dir.path().join("b.snap");
        let mut store = MemoryStore::new(embedder());
        let e = store.create_entry("A", "v", &[]).unwrap();
        store.link_cue(e, "some cue").unwrap();
        save_snapshot(&store, &p1).unwrap();
        save_snapshot(&store, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }
}
