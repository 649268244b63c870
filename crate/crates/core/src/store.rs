//! The memory store: sources, segments, episodic records, memory entries,
//! and cue anchors, plus the two embedding indices kept over them.
//!
//! Structure at a glance:
//!
//! ```text
//!   DocumentSource ─┬─> Segment ──> EpisodicMemory (exactly one per segment)
//!                   │                    ▲
//!                   │                    │ grounding links
//!                   └────────────> MemoryEntry <──── many-to-many ────> CueAnchor
//!                                  (one primary abstraction each)
//! ```
//!
//! Entries sharing the same canonical abstraction text form a bucket; the
//! abstraction index is keyed per bucket so retrieval scores each distinct
//! abstraction once. The cue index is keyed per anchor. Anchors with no
//! remaining entries are pruned. All ids are store-assigned and
//! content-independent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, VectorIndex};
use crate::error::{MemoraError, Result};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(SourceId);
id_type!(SegmentId);
id_type!(EpisodeId);
id_type!(EntryId);
id_type!(AnchorId);
id_type!(AbstractionId);

/// What kind of raw material a source is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Conversation,
    FormattedDoc,
    Log,
    Trace,
}

/// One ordered unit of a source: a message, paragraph, or log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub ordinal: u32,
    /// Speaker name for conversations, heading text for formatted docs.
    #[serde(default)]
    pub label: Option<String>,
    pub text: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

/// A raw input document held for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSource {
    pub id: SourceId,
    pub name: String,
    #[serde(rename = "source_kind")]
    pub kind: SourceKind,
    pub units: Vec<SourceUnit>,
}

/// A topically coherent slice of a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub source_id: SourceId,
    pub topic: String,
    pub unit_ordinals: Vec<u32>,
    pub text: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

/// How a segment's episodic record was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodicMode {
    Extracted,
    Raw,
}

/// Per-segment grounding: a short index phrase plus the grounding text
/// (verbatim segment text in raw mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    pub id: EpisodeId,
    pub segment_id: SegmentId,
    pub index_phrase: String,
    pub value_text: String,
    pub mode: EpisodicMode,
}

/// A consolidated memory: exactly one primary abstraction plus the value
/// text it indexes, linked to cue anchors and grounding episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: EntryId,
    pub abstraction: String,
    pub value: String,
    pub cue_ids: BTreeSet<AnchorId>,
    pub episodic_ids: BTreeSet<EpisodeId>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub revision: u32,
}

/// A secondary access path: a short canonical label shared by every entry
/// it is linked to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueAnchor {
    pub id: AnchorId,
    pub label: String,
    pub entry_ids: BTreeSet<EntryId>,
}

/// Whether `link_cue` minted a new anchor or attached to an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    CreatedAnchor,
    ReusedAnchor,
    AlreadyLinked,
}

/// Case-folded, whitespace-collapsed form used for label identity and
/// abstraction bucketing.
pub fn canonical(text: &str) -> String {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Aggregate counters for dashboards and the `stats` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub entry_count: usize,
    pub anchor_count: usize,
    pub episode_count: usize,
    pub mean_cues_per_entry: f64,
    pub approx_token_total: usize,
}

#[derive(Debug)]
struct AbstractionBucket {
    canonical: String,
    entry_ids: BTreeSet<EntryId>,
}

pub struct MemoryStore {
    embedder: Arc<dyn Embedder>,
    sources: BTreeMap<SourceId, DocumentSource>,
    segments: BTreeMap<SegmentId, Segment>,
    episodes: BTreeMap<EpisodeId, EpisodicMemory>,
    episode_by_segment: HashMap<SegmentId, EpisodeId>,
    entries: BTreeMap<EntryId, MemoryEntry>,
    anchors: BTreeMap<AnchorId, CueAnchor>,
    anchor_by_label: HashMap<String, AnchorId>,
    buckets: BTreeMap<AbstractionId, AbstractionBucket>,
    bucket_by_canonical: HashMap<String, AbstractionId>,
    abstraction_index: VectorIndex<AbstractionId>,
    cue_index: VectorIndex<AnchorId>,
    /// Injected directed entry-entry edges. Transient scaffolding for
    /// graph-shaped configurations; not part of snapshots.
    explicit_edges: BTreeMap<EntryId, BTreeSet<EntryId>>,
    next_id: u64,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("sources", &self.sources.len())
            .field("segments", &self.segments.len())
            .field("episodes", &self.episodes.len())
            .field("entries", &self.entries.len())
            .field("anchors", &self.anchors.len())
            .finish()
    }
}

impl MemoryStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            sources: BTreeMap::new(),
            segments: BTreeMap::new(),
            episodes: BTreeMap::new(),
            episode_by_segment: HashMap::new(),
            entries: BTreeMap::new(),
            anchors: BTreeMap::new(),
            anchor_by_label: HashMap::new(),
            buckets: BTreeMap::new(),
            bucket_by_canonical: HashMap::new(),
            abstraction_index: VectorIndex::new(),
            cue_index: VectorIndex::new(),
            explicit_edges: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn mint(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    // ─── sources, segments, episodes ───

    pub fn add_source(
        &mut self,
        name: &str,
        kind: SourceKind,
        units: Vec<SourceUnit>,
    ) -> Result<SourceId> {
        for (i, unit) in units.iter().enumerate() {
            if unit.ordinal as usize != i + 1 {
                return Err(MemoraError::InvalidSource(format!(
                    "ordinals must be contiguous from 1, found {} at position {}",
                    unit.ordinal,
                    i + 1
                )));
            }
            if unit.text.trim().is_empty() {
                return Err(MemoraError::InvalidSource(format!(
                    "unit {} has empty text",
                    unit.ordinal
                )));
            }
        }
        let id = SourceId(self.mint());
        self.sources.insert(
            id,
            DocumentSource {
                id,
                name: name.to_string(),
                kind,
                units,
            },
        );
        Ok(id)
    }

    pub fn add_segment(
        &mut self,
        source_id: SourceId,
        topic: &str,
        unit_ordinals: Vec<u32>,
        text: &str,
        timestamp: Option<DateTime<Utc>>,
    ) -> Result<SegmentId> {
        if !self.sources.contains_key(&source_id) {
            return Err(MemoraError::UnknownSource(source_id.0));
        }
        if unit_ordinals.is_empty() {
            return Err(MemoraError::EmptyField("segment unit_ordinals"));
        }
        if text.is_empty() {
            return Err(MemoraError::EmptyField("segment text"));
        }
        let id = SegmentId(self.mint());
        self.segments.insert(
            id,
            Segment {
                id,
                source_id,
                topic: topic.to_string(),
                unit_ordinals,
                text: text.to_string(),
                timestamp,
            },
        );
        Ok(id)
    }

    /// Record the grounding episode for a segment. Each segment gets
    /// exactly one; a second insert for the same segment is rejected.
    pub fn add_episode(
        &mut self,
        segment_id: SegmentId,
        index_phrase: &str,
        value_text: &str,
        mode: EpisodicMode,
    ) -> Result<EpisodeId> {
        if !self.segments.contains_key(&segment_id) {
            return Err(MemoraError::UnknownSegment(segment_id.0));
        }
        if self.episode_by_segment.contains_key(&segment_id) {
            return Err(MemoraError::DuplicateId(segment_id.0));
        }
        if index_phrase.trim().is_empty() {
            return Err(MemoraError::EmptyField("episode index_phrase"));
        }
        if value_text.is_empty() {
            return Err(MemoraError::EmptyField("episode value_text"));
        }
        let id = EpisodeId(self.mint());
        self.episodes.insert(
            id,
            EpisodicMemory {
                id,
                segment_id,
                index_phrase: index_phrase.to_string(),
                value_text: value_text.to_string(),
                mode,
            },
        );
        self.episode_by_segment.insert(segment_id, id);
        Ok(id)
    }

    // ─── entries ───

    /// Store a fully formed entry under its own id. Fresh entries should
    /// come through [`MemoryStore::create_entry`]; this path exists for
    /// callers that manage ids themselves and rejects duplicates. Cue
    /// links must be made through `link_cue`, so `cue_ids` has to be
    /// empty here.
    pub fn put_entry(&mut self, entry: MemoryEntry) -> Result<EntryId> {
        if entry.abstraction.trim().is_empty() {
            return Err(MemoraError::EmptyField("abstraction"));
        }
        if entry.value.trim().is_empty() {
            return Err(MemoraError::EmptyField("value"));
        }
        if self.entries.contains_key(&entry.id) {
            return Err(MemoraError::DuplicateId(entry.id.0));
        }
        if !entry.cue_ids.is_empty() {
            return Err(MemoraError::InvalidParameter(
                "cue links are created via link_cue, not put_entry".into(),
            ));
        }
        for ep in &entry.episodic_ids {
            if !self.episodes.contains_key(ep) {
                return Err(MemoraError::UnknownEpisode(ep.0));
            }
        }
        self.next_id = self.next_id.max(entry.id.0 + 1);
        self.attach_to_bucket(entry.id, &entry.abstraction)?;
        let id = entry.id;
        self.entries.insert(id, entry);
        Ok(id)
    }

    /// Mint an id and store a new revision-0 entry.
    pub fn create_entry(
        &mut self,
        abstraction: &str,
        value: &str,
        episodes: &[EpisodeId],
    ) -> Result<EntryId> {
        let now = Utc::now();
        let entry = MemoryEntry {
            id: EntryId(self.mint()),
            abstraction: abstraction.to_string(),
            value: value.to_string(),
            cue_ids: BTreeSet::new(),
            episodic_ids: episodes.iter().copied().collect(),
            created_at: now,
            updated_at: now,
            revision: 0,
        };
        self.put_entry(entry)
    }

    /// Apply an update: replace the value, optionally replace the
    /// abstraction, bump the revision, and refresh `updated_at`.
    pub fn update_entry(
        &mut self,
        id: EntryId,
        new_value: &str,
        refined_abstraction: Option<&str>,
        add_episode: Option<EpisodeId>,
    ) -> Result<()> {
        if new_value.trim().is_empty() {
            return Err(MemoraError::EmptyField("value"));
        }
        if let Some(ep) = add_episode {
            if !self.episodes.contains_key(&ep) {
                return Err(MemoraError::UnknownEpisode(ep.0));
            }
        }
        if !self.entries.contains_key(&id) {
            return Err(MemoraError::UnknownEntry(id.0));
        }
        if let Some(refined) = refined_abstraction {
            if refined.trim().is_empty() {
                return Err(MemoraError::EmptyField("abstraction"));
            }
            let old = self.entries.get(&id).expect("checked").abstraction.clone();
            if canonical(refined) != canonical(&old) {
                self.detach_from_bucket(id, &old);
                self.attach_to_bucket(id, refined)?;
            }
            self.entries.get_mut(&id).expect("checked").abstraction = refined.to_string();
        }
        let entry = self.entries.get_mut(&id).expect("checked");
        entry.value = new_value.to_string();
        if let Some(ep) = add_episode {
            entry.episodic_ids.insert(ep);
        }
        entry.revision += 1;
        entry.updated_at = Utc::now();
        Ok(())
    }

    /// Remove an entry, cascade to its cue links, and prune anchors left
    /// with no entries. Episodes are kept. Returns pruned anchor ids.
    pub fn remove_entry(&mut self, id: EntryId) -> Result<Vec<AnchorId>> {
        let entry = self
            .entries
            .remove(&id)
            .ok_or(MemoraError::UnknownEntry(id.0))?;
        self.detach_from_bucket(id, &entry.abstraction);
        let mut pruned = Vec::new();
        for anchor_id in &entry.cue_ids {
            let anchor = self.anchors.get_mut(anchor_id).expect("link table in sync");
            anchor.entry_ids.remove(&id);
            if anchor.entry_ids.is_empty() {
                let anchor = self.anchors.remove(anchor_id).expect("present");
                self.anchor_by_label.remove(&anchor.label);
                self.cue_index.remove(anchor_id);
                pruned.push(*anchor_id);
            }
        }
        self.explicit_edges.remove(&id);
        for targets in self.explicit_edges.values_mut() {
            targets.remove(&id);
        }
        self.explicit_edges.retain(|_, targets| !targets.is_empty());
        pruned.sort_unstable();
        Ok(pruned)
    }

    // ─── explicit edges ───

    /// Inject a directed edge between two existing entries.
    pub fn add_explicit_edge(&mut self, from: EntryId, to: EntryId) -> Result<()> {
        if !self.entries.contains_key(&from) {
            return Err(MemoraError::UnknownEntry(from.0));
        }
        if !self.entries.contains_key(&to) {
            return Err(MemoraError::UnknownEntry(to.0));
        }
        if from == to {
            return Err(MemoraError::InvalidParameter(
                "self edges are not allowed".into(),
            ));
        }
        self.explicit_edges.entry(from).or_default().insert(to);
        Ok(())
    }

    pub fn explicit_edges_from(&self, from: EntryId) -> impl Iterator<Item = EntryId> + '_ {
        self.explicit_edges
            .get(&from)
            .into_iter()
            .flat_map(|targets| targets.iter().copied())
    }

    pub fn explicit_edge_count(&self) -> usize {
        self.explicit_edges.values().map(BTreeSet::len).sum()
    }

    pub fn clear_explicit_edges(&mut self) {
        self.explicit_edges.clear();
    }

    fn attach_to_bucket(&mut self, entry_id: EntryId, abstraction: &str) -> Result<()> {
        let canon = canonical(abstraction);
        if let Some(bid) = self.bucket_by_canonical.get(&canon) {
            self.buckets
                .get_mut(bid)
                .expect("bucket table in sync")
                .entry_ids
                .insert(entry_id);
            return Ok(());
        }
        let vector = self.embedder.embed(&canon)?;
        let bid = AbstractionId(self.mint());
        self.abstraction_index.insert(bid, vector)?;
        self.bucket_by_canonical.insert(canon.clone(), bid);
        self.buckets.insert(
            bid,
            AbstractionBucket {
                canonical: canon,
                entry_ids: BTreeSet::from([entry_id]),
            },
        );
        Ok(())
    }

    fn detach_from_bucket(&mut self, entry_id: EntryId, abstraction: &str) {
        let canon = canonical(abstraction);
        let Some(bid) = self.bucket_by_canonical.get(&canon).copied() else {
            return;
        };
        let bucket = self.buckets.get_mut(&bid).expect("bucket table in sync");
        bucket.entry_ids.remove(&entry_id);
        if bucket.entry_ids.is_empty() {
            self.buckets.remove(&bid);
            self.bucket_by_canonical.remove(&canon);
            self.abstraction_index.remove(&bid);
        }
    }

    // ─── cue anchors ───

    /// Link an entry to the anchor with the given label, creating the
    /// anchor if no entry carries that label yet. Idempotent per
    /// (entry, canonical label) pair.
    pub fn link_cue(&mut self, entry_id: EntryId, label: &str) -> Result<(AnchorId, LinkOutcome)> {
        let canon = canonical(label);
        if canon.is_empty() {
            return Err(MemoraError::EmptyField("cue label"));
        }
        if !self.entries.contains_key(&entry_id) {
            return Err(MemoraError::UnknownEntry(entry_id.0));
        }
        let (anchor_id, outcome) = match self.anchor_by_label.get(&canon) {
            Some(id) => (*id, LinkOutcome::ReusedAnchor),
            None => {
                let vector = self.embedder.embed(&canon)?;
                let id = AnchorId(self.mint());
                self.cue_index.insert(id, vector)?;
                self.anchor_by_label.insert(canon.clone(), id);
                self.anchors.insert(
                    id,
                    CueAnchor {
                        id,
                        label: canon,
                        entry_ids: BTreeSet::new(),
                    },
                );
                (id, LinkOutcome::CreatedAnchor)
            }
        };
        let anchor = self.anchors.get_mut(&anchor_id).expect("just resolved");
        let fresh_link = anchor.entry_ids.insert(entry_id);
        self.entries
            .get_mut(&entry_id)
            .expect("checked")
            .cue_ids
            .insert(anchor_id);
        let outcome = if fresh_link {
            outcome
        } else {
            LinkOutcome::AlreadyLinked
        };
        Ok((anchor_id, outcome))
    }

    // ─── lookups ───

    pub fn entry(&self, id: EntryId) -> Result<&MemoryEntry> {
        self.entries.get(&id).ok_or(MemoraError::UnknownEntry(id.0))
    }

    pub fn anchor(&self, id: AnchorId) -> Result<&CueAnchor> {
        self.anchors
            .get(&id)
            .ok_or(MemoraError::UnknownAnchor(id.0))
    }

    pub fn episode(&self, id: EpisodeId) -> Result<&EpisodicMemory> {
        self.episodes
            .get(&id)
            .ok_or(MemoraError::UnknownEpisode(id.0))
    }

    pub fn segment(&self, id: SegmentId) -> Result<&Segment> {
        self.segments
            .get(&id)
            .ok_or(MemoraError::UnknownSegment(id.0))
    }

    pub fn source(&self, id: SourceId) -> Result<&DocumentSource> {
        self.sources
            .get(&id)
            .ok_or(MemoraError::UnknownSource(id.0))
    }

    pub fn anchor_by_label(&self, label: &str) -> Option<&CueAnchor> {
        self.anchor_by_label
            .get(&canonical(label))
            .and_then(|id| self.anchors.get(id))
    }

    pub fn episode_for_segment(&self, segment_id: SegmentId) -> Option<EpisodeId> {
        self.episode_by_segment.get(&segment_id).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn anchors(&self) -> impl Iterator<Item = &CueAnchor> {
        self.anchors.values()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodicMemory> {
        self.episodes.values()
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values()
    }

    pub fn sources(&self) -> impl Iterator<Item = &DocumentSource> {
        self.sources.values()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    /// Entry ids sharing the given abstraction bucket.
    pub fn bucket_entries(&self, bucket: AbstractionId) -> Option<&BTreeSet<EntryId>> {
        self.buckets.get(&bucket).map(|b| &b.entry_ids)
    }

    pub fn bucket_canonical(&self, bucket: AbstractionId) -> Option<&str> {
        self.buckets.get(&bucket).map(|b| b.canonical.as_str())
    }

    pub fn abstraction_index(&self) -> &VectorIndex<AbstractionId> {
        &self.abstraction_index
    }

    pub fn cue_index(&self) -> &VectorIndex<AnchorId> {
        &self.cue_index
    }

    // ─── aggregates ───

    pub fn stats(&self) -> StoreStats {
        let entry_count = self.entries.len();
        let link_total: usize = self.entries.values().map(|e| e.cue_ids.len()).sum();
        let mean_cues_per_entry = if entry_count == 0 {
            0.0
        } else {
            link_total as f64 / entry_count as f64
        };
        let approx_token_total = self
            .entries
            .values()
            .map(|e| e.value.split_whitespace().count())
            .sum::<usize>()
            + self
                .episodes
                .values()
                .map(|e| e.value_text.split_whitespace().count())
                .sum::<usize>();
        StoreStats {
            entry_count,
            anchor_count: self.anchors.len(),
            episode_count: self.episodes.len(),
            mean_cues_per_entry,
            approx_token_total,
        }
    }

    /// Full structural dump, sorted by id. Two stores with equal dumps
    /// hold the same state; indices are derived and excluded.
    pub fn dump(&self) -> StoreDump {
        StoreDump {
            sources: self.sources.values().cloned().collect(),
            segments: self.segments.values().cloned().collect(),
            episodes: self.episodes.values().cloned().collect(),
            entries: self.entries.values().cloned().collect(),
            anchors: self.anchors.values().cloned().collect(),
        }
    }

    /// The logical memory layer, independent of ids, timestamps, and
    /// revision counters: per entry its canonical abstraction, value,
    /// sorted cue labels, and the distinct episode texts grounding it.
    /// Re-consolidating the same material must leave this unchanged.
    pub fn memory_fingerprint(&self) -> Vec<(String, String, Vec<String>, Vec<String>)> {
        let mut rows: Vec<_> = self
            .entries
            .values()
            .map(|e| {
                let mut labels: Vec<String> = e
                    .cue_ids
                    .iter()
                    .map(|a| self.anchors[a].label.clone())
                    .collect();
                labels.sort();
                let mut texts: BTreeSet<String> = e
                    .episodic_ids
                    .iter()
                    .map(|ep| self.episodes[ep].value_text.clone())
                    .collect();
                let texts: Vec<String> = std::mem::take(&mut texts).into_iter().collect();
                (canonical(&e.abstraction), e.value.clone(), labels, texts)
            })
            .collect();
        rows.sort();
        rows
    }

    /// Verify the bidirectional link tables and bucket maps. Used by
    /// fuzz tests; cheap enough to run after every mutation at test scale.
    pub fn check_invariants(&self) -> Result<()> {
        for entry in self.entries.values() {
            for a in &entry.cue_ids {
                let anchor = self
                    .anchors
                    .get(a)
                    .ok_or(MemoraError::UnknownAnchor(a.0))?;
                if !anchor.entry_ids.contains(&entry.id) {
                    return Err(MemoraError::InvalidParameter(format!(
                        "entry {} links anchor {} without back-link",
                        entry.id, a
                    )));
                }
            }
            for ep in &entry.episodic_ids {
                if !self.episodes.contains_key(ep) {
                    return Err(MemoraError::UnknownEpisode(ep.0));
                }
            }
            let canon = canonical(&entry.abstraction);
            let bid = self
                .bucket_by_canonical
                .get(&canon)
                .ok_or_else(|| MemoraError::InvalidParameter("missing bucket".into()))?;
            if !self.buckets[bid].entry_ids.contains(&entry.id) {
                return Err(MemoraError::InvalidParameter(format!(
                    "entry {} missing from its abstraction bucket",
                    entry.id
                )));
            }
        }
        for anchor in self.anchors.values() {
            if anchor.entry_ids.is_empty() {
                return Err(MemoraError::InvalidParameter(format!(
                    "orphan anchor {}",
                    anchor.id
                )));
            }
            for e in &anchor.entry_ids {
                let entry = self.entries.get(e).ok_or(MemoraError::UnknownEntry(e.0))?;
                if !entry.cue_ids.contains(&anchor.id) {
                    return Err(MemoraError::InvalidParameter(format!(
                        "anchor {} links entry {} without back-link",
                        anchor.id, e
                    )));
                }
            }
            if !self.cue_index.contains(&anchor.id) {
                return Err(MemoraError::InvalidParameter(format!(
                    "anchor {} missing from cue index",
                    anchor.id
                )));
            }
        }
        if self.cue_index.len() != self.anchors.len() {
            return Err(MemoraError::InvalidParameter(
                "cue index size differs from anchor count".into(),
            ));
        }
        if self.abstraction_index.len() != self.buckets.len() {
            return Err(MemoraError::InvalidParameter(
                "abstraction index size differs from bucket count".into(),
            ));
        }
        for (from, targets) in &self.explicit_edges {
            if !self.entries.contains_key(from) {
                return Err(MemoraError::UnknownEntry(from.0));
            }
            for to in targets {
                if !self.entries.contains_key(to) {
                    return Err(MemoraError::UnknownEntry(to.0));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn load_raw(
        embedder: Arc<dyn Embedder>,
        sources: Vec<DocumentSource>,
        segments: Vec<Segment>,
        episodes: Vec<EpisodicMemory>,
        entries: Vec<MemoryEntry>,
        anchors: Vec<CueAnchor>,
    ) -> Result<Self> {
        let mut store = Self::new(embedder);
        let mut max_id = 0u64;
        for s in sources {
            max_id = max_id.max(s.id.0);
            if store.sources.insert(s.id, s).is_some() {
                return Err(MemoraError::SnapshotFormat("duplicate source id".into()));
            }
        }
        for s in segments {
            max_id = max_id.max(s.id.0);
            if !store.sources.contains_key(&s.source_id) {
                return Err(MemoraError::UnknownSource(s.source_id.0));
            }
            if store.segments.insert(s.id, s).is_some() {
                return Err(MemoraError::SnapshotFormat("duplicate segment id".into()));
            }
        }
        for e in episodes {
            max_id = max_id.max(e.id.0);
            if !store.segments.contains_key(&e.segment_id) {
                return Err(MemoraError::UnknownSegment(e.segment_id.0));
            }
            if store.episode_by_segment.insert(e.segment_id, e.id).is_some() {
                return Err(MemoraError::SnapshotFormat(
                    "segment has more than one episode".into(),
                ));
            }
            if store.episodes.insert(e.id, e).is_some() {
                return Err(MemoraError::SnapshotFormat("duplicate episode id".into()));
            }
        }
        for a in &anchors {
            max_id = max_id.max(a.id.0);
            let vector = store.embedder.embed(&a.label)?;
            store.cue_index.insert(a.id, vector)?;
            if store
                .anchor_by_label
                .insert(a.label.clone(), a.id)
                .is_some()
            {
                return Err(MemoraError::SnapshotFormat(format!(
                    "duplicate anchor label {:?}",
                    a.label
                )));
            }
            if store.anchors.insert(a.id, a.clone()).is_some() {
                return Err(MemoraError::SnapshotFormat("duplicate anchor id".into()));
            }
        }
        for e in entries {
            max_id = max_id.max(e.id.0);
            for ep in &e.episodic_ids {
                if !store.episodes.contains_key(ep) {
                    return Err(MemoraError::UnknownEpisode(ep.0));
                }
            }
            store.attach_to_bucket(e.id, &e.abstraction)?;
            if store.entries.insert(e.id, e).is_some() {
                return Err(MemoraError::SnapshotFormat("duplicate entry id".into()));
            }
        }
        // Bucket ids are minted during load and may push past max_id.
        store.next_id = store.next_id.max(max_id + 1);
        // Cross-check both directions of the link table before use.
        for anchor in store.anchors.values() {
            for e in &anchor.entry_ids {
                let entry = store
                    .entries
                    .get(e)
                    .ok_or(MemoraError::UnknownEntry(e.0))?;
                if !entry.cue_ids.contains(&anchor.id) {
                    return Err(MemoraError::SnapshotFormat(format!(
                        "anchor {} and entry {} disagree about their link",
                        anchor.id, e
                    )));
                }
            }
        }
        for entry in store.entries.values() {
            for a in &entry.cue_ids {
                let anchor = store
                    .anchors
                    .get(a)
                    .ok_or(MemoraError::UnknownAnchor(a.0))?;
                if !anchor.entry_ids.contains(&entry.id) {
                    return Err(MemoraError::SnapshotFormat(format!(
                        "entry {} and anchor {} disagree about their link",
                        entry.id, a
                    )));
                }
            }
        }
        Ok(store)
    }
}

/// A plain-data copy of the store, used for structural comparison and by
/// the snapshot writer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDump {
    pub sources: Vec<DocumentSource>,
    pub segments: Vec<Segment>,
    pub episodes: Vec<EpisodicMemory>,
    pub entries: Vec<MemoryEntry>,
    pub anchors: Vec<CueAnchor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TestEmbedder;

    fn store() -> MemoryStore {
        MemoryStore::new(Arc::new(TestEmbedder::default()))
    }

    #[test]
    fn test_put_then_get_roundtrip() {
        let mut s = store();
        let id = s.create_entry("A", "v", &[]).unwrap();
        let e = s.entry(id).unwrap();
        assert_eq!(e.abstraction, "A");
        assert_eq!(e.value, "v");
        assert_eq!(e.revision, 0);
    }

    #[test]
    fn test_two_entries_distinct_abstractions() {
        let mut s = store();
        s.create_entry("A", "v", &[]).unwrap();
        s.create_entry("B", "w", &[]).unwrap();
        assert_eq!(s.entry_count(), 2);
        assert_eq!(s.abstraction_index().len(), 2);
    }

    #[test]
    fn test_empty_abstraction_rejected() {
        let mut s = store();
        assert!(matches!(
            s.create_entry("", "v", &[]),
            Err(MemoraError::EmptyField("abstraction"))
        ));
        assert!(matches!(
            s.create_entry("A", "  ", &[]),
            Err(MemoraError::EmptyField("value"))
        ));
    }

    #[test]
    fn test_duplicate_id_rejected() {
        let mut s = store();
        let id = s.create_entry("A", "v", &[]).unwrap();
        let clash = MemoryEntry {
            id,
            abstraction: "B".into(),
            value: "w".into(),
            cue_ids: BTreeSet::new(),
            episodic_ids: BTreeSet::new(),
            created_at: Utc::now(),
            updated_at: Utc::now(),
            revision: 0,
        };
        assert!(matches!(
            s.put_entry(clash),
            Err(MemoraError::DuplicateId(_))
        ));
    }

    #[test]
    fn test_shared_label_dedupes_to_one_anchor() {
        let mut s = store();
        let e1 = s.create_entry("A", "v", &[]).unwrap();
        let e2 = s.create_entry("B", "w", &[]).unwrap();
        let (a1, o1) = s.link_cue(e1, "Emma swimming").unwrap();
        let (a2, o2) = s.link_cue(e2, "Emma swimming").unwrap();
        assert_eq!(a1, a2);
        assert_eq!(o1, LinkOutcome::CreatedAnchor);
        assert_eq!(o2, LinkOutcome::ReusedAnchor);
        assert_eq!(s.anchor(a1).unwrap().entry_ids.len(), 2);
        assert_eq!(s.anchor_count(), 1);
    }

    #[test]
    fn test_labels_canonicalized_before_matching() {
        let mut s = store();
        let e = s.create_entry("A", "v", &[]).unwrap();
        let (a1, _) = s.link_cue(e, "  EMMA   Swimming ").unwrap();
        assert_eq!(s.anchor(a1).unwrap().label, "emma swimming");
        let found = s.anchor_by_label("emma swimming").unwrap();
        assert_eq!(found.id, a1);
    }

    #[test]
    fn test_relinking_same_pair_changes_nothing() {
        let mut s = store();
        let e = s.create_entry("A", "v", &[]).unwrap();
        let (a1, _) = s.link_cue(e, "emma swimming").unwrap();
        let (a2, outcome) = s.link_cue(e, "Emma Swimming").unwrap();
        assert_eq!(a1, a2);
        assert_eq!(outcome, LinkOutcome::AlreadyLinked);
        assert_eq!(s.anchor(a1).unwrap().entry_ids.len(), 1);
        assert_eq!(s.entry(e).unwrap().cue_ids.len(), 1);
    }

    #[test]
    fn test_removing_last_carrier_prunes_anchor() {
        let mut s = store();
        let e = s.create_entry("A", "v", &[]).unwrap();
        let (a, _) = s.link_cue(e, "emma swimming").unwrap();
        let pruned = s.remove_entry(e).unwrap();
        assert_eq!(pruned, vec![a]);
        assert_eq!(s.anchor_count(), 0);
        assert_eq!(s.cue_index().len(), 0);
    }

    #[test]
    fn test_anchor_survives_while_other_carriers_remain() {
        let mut s = store();
        let e1 = s.create_entry("A", "v", &[]).unwrap();
        let e2 = s.create_entry("B", "w", &[]).unwrap();
        let (a, _) = s.link_cue(e1, "shared label").unwrap();
        s.link_cue(e2, "shared label").unwrap();
        let pruned = s.remove_entry(e1).unwrap();
        assert!(pruned.is_empty());
        let anchor = s.anchor(a).unwrap();
        assert_eq!(anchor.entry_ids.iter().copied().collect::<Vec<_>>(), vec![e2]);
    }

    #[test]
    fn test_remove_unknown_entry_errors() {
        let mut s = store();
        assert!(matches!(
            s.remove_entry(EntryId(99)),
            Err(MemoraError::UnknownEntry(99))
        ));
    }

    #[test]
    fn test_update_moves_entry_between_buckets() {
        let mut s = store();
        let e1 = s.create_entry("alpha topic", "v", &[]).unwrap();
        s.create_entry("alpha topic", "w", &[]).unwrap();
        assert_eq!(s.abstraction_index().len(), 1);
        s.update_entry(e1, "v2", Some("beta topic"), None).unwrap();
        assert_eq!(s.abstraction_index().len(), 2);
        assert_eq!(s.entry(e1).unwrap().revision, 1);
        s.check_invariants().unwrap();
    }

    #[test]
    fn test_stats_on_empty_store_are_zero() {
        let s = store();
        let st = s.stats();
        assert_eq!(st.entry_count, 0);
        assert_eq!(st.anchor_count, 0);
        assert_eq!(st.episode_count, 0);
        assert_eq!(st.mean_cues_per_entry, 0.0);
        assert_eq!(st.approx_token_total, 0);
    }

    #[test]
    fn test_stats_mean_cues_counts_links_per_entry() {
        let mut s = store();
        let e1 = s.create_entry("A", "v", &[]).unwrap();
        let e2 = s.create_entry("B", "w", &[]).unwrap();
        s.link_cue(e1, "cue one").unwrap();
        s.link_cue(e1, "cue two").unwrap();
        s.link_cue(e2, "cue three").unwrap();
        let st = s.stats();
        assert_eq!(st.entry_count, 2);
        assert!((st.mean_cues_per_entry - 1.5).abs() < 1e-12);
    }

    #[test]
    fn test_stats_token_total_counts_value_tokens() {
        // Oracle: independent whitespace tokenizer over the one value.
        let mut s = store();
        s.create_entry("A", "one two three", &[]).unwrap();
        let expected = "one two three".split_whitespace().count();
        assert_eq!(expected, 3);
        assert!(s.stats().approx_token_total >= 3);
        assert_eq!(s.stats().approx_token_total, expected);
    }

    #[test]
    fn test_episode_per_segment_is_unique() {
        let mut s = store();
        let src = s
            .add_source(
                "conv",
                SourceKind::Conversation,
                vec![SourceUnit {
                    ordinal: 1,
                    label: None,
                    text: "hello".into(),
                    timestamp: None,
                }],
            )
            .unwrap();
        let seg = s.add_segment(src, "greeting", vec![1], "hello", None).unwrap();
        s.add_episode(seg, "greeting", "hello", EpisodicMode::Raw).unwrap();
        assert!(s
            .add_episode(seg, "greeting again", "hello", EpisodicMode::Raw)
            .is_err());
    }

    #[test]
    fn test_source_ordinals_must_be_contiguous() {
        let mut s = store();
        let bad = vec![
            SourceUnit { ordinal: 1, label: None, text: "a".into(), timestamp: None },
            SourceUnit { ordinal: 3, label: None, text: "b".into(), timestamp: None },
        ];
        assert!(matches!(
            s.add_source("x", SourceKind::Log, bad),
            Err(MemoraError::InvalidSource(_))
        ));
    }

    #[test]
    fn test_random_operation_sequences_keep_links_bidirectional() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut s = store();
        let mut live: Vec<EntryId> = Vec::new();
        for step in 0..600 {
            match rng.gen_range(0..10) {
                0..=3 => {
                    let id = s
                        .create_entry(
                            &format!("topic {}", rng.gen_range(0..40)),
                            &format!("value {}", step),
                            &[],
                        )
                        .unwrap();
                    live.push(id);
                }
                4..=7 if !live.is_empty() => {
                    let e = live[rng.gen_range(0..live.len())];
                    s.link_cue(e, &format!("cue {}", rng.gen_range(0..25))).unwrap();
                }
                8..=9 if !live.is_empty() => {
                    let e = live.swap_remove(rng.gen_range(0..live.len()));
                    s.remove_entry(e).unwrap();
                }
                _ => {}
            }
            s.check_invariants().unwrap();
        }
    }
}
