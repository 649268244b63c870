//! Ingestion: turn raw sources into consolidated memory.
//!
//! Pipeline per source:
//!
//! 1. segment the units into topical episodes,
//! 2. record one grounding episodic memory per segment,
//! 3. extract candidate (abstraction, value) memories,
//! 4. for each candidate, retrieve similar existing entries, filter by
//!    similarity threshold, and let the judge pick an update target,
//! 5. create a new entry or merge into the target, then regenerate and
//!    link cue anchors for the touched entry (old links are kept).
//!
//! Every step has a hermetic stub; configuring an external provider
//! swaps in prompt-driven behavior with the same contracts. A candidate
//! either fully lands (create or update) or is skipped with a flag.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{MemoraError, Result};
use crate::provider::ProviderBackend;
use crate::store::{
    canonical, EntryId, EpisodeId, EpisodicMode, MemoryStore, SegmentId, SourceId, SourceKind,
    SourceUnit,
};

/// How sources are cut into segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segmenter {
    /// Split formatted docs at heading units; other kinds fall back to
    /// fixed windows of [`STRUCTURAL_FALLBACK_WINDOW`] units.
    Structural,
    /// Ask the configured chat provider for a topical partition.
    Provider,
    /// Consecutive windows of the given width.
    FixedWindow(usize),
}

/// Window width used when structural segmentation has no headings to
/// split at; matches the "typically 2-8 messages" episode guidance.
pub const STRUCTURAL_FALLBACK_WINDOW: usize = 6;

/// Most cue anchors linked per entry per consolidation round.
pub const MAX_CUES_PER_ENTRY: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Consolidation candidate-set width (top-k over abstractions).
    pub top_k: usize,
    /// Similarity floor for update candidates.
    pub gamma: f64,
    pub episodic_mode: EpisodicMode,
    pub segmenter: Segmenter,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            gamma: 0.7,
            episodic_mode: EpisodicMode::Raw,
            segmenter: Segmenter::Structural,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(MemoraError::Config("ingest top_k must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MemoraError::Config(
                "ingest gamma must be in (0, 1]".into(),
            ));
        }
        if let Segmenter::FixedWindow(w) = self.segmenter {
            if w == 0 {
                return Err(MemoraError::Config("window width must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Where curation decisions come from: deterministic stubs or an
/// external chat provider.
pub enum ExtractionBackend {
    Stub,
    Provider(ProviderBackend),
}

/// An extracted memory candidate waiting for consolidation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMemory {
    pub abstraction: String,
    pub value: String,
}

/// Outcome of the judge step for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum ConsolidationDecision {
    Create,
    Update {
        target: EntryId,
        merged_value: String,
        refined_abstraction: Option<String>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source_id: Option<SourceId>,
    pub segments_made: usize,
    pub episodes_made: usize,
    pub candidates_extracted: usize,
    pub entries_created: usize,
    pub entries_updated: usize,
    pub anchors_created: usize,
    pub anchors_reused: usize,
    pub flags: Vec<String>,
}

// ─── segmentation ───

#[derive(Debug, Clone, PartialEq)]
struct SegmentDraft {
    topic: String,
    ordinals: Vec<u32>,
}

fn format_unit(unit: &SourceUnit) -> String {
    match &unit.label {
        Some(label) => format!("{}: {}", label, unit.text),
        None => unit.text.clone(),
    }
}

fn windows(units: &[SourceUnit], width: usize) -> Vec<SegmentDraft> {
    units
        .chunks(width)
        .map(|chunk| {
            let first = chunk.first().expect("non-empty chunk").ordinal;
            let last = chunk.last().expect("non-empty chunk").ordinal;
            SegmentDraft {
                topic: if first == last {
                    format!("units {first}")
                } else {
                    format!("units {first}-{last}")
                },
                ordinals: chunk.iter().map(|u| u.ordinal).collect(),
            }
        })
        .collect()
}

fn structural_drafts(kind: SourceKind, units: &[SourceUnit]) -> Vec<SegmentDraft> {
    let has_headings = kind == SourceKind::FormattedDoc && units.iter().any(|u| u.label.is_some());
    if !has_headings {
        return windows(units, STRUCTURAL_FALLBACK_WINDOW);
    }
    let mut drafts: Vec<SegmentDraft> = Vec::new();
    for unit in units {
        let starts_new = unit.label.is_some() || drafts.is_empty();
        if starts_new {
            drafts.push(SegmentDraft {
                topic: unit
                    .label
                    .clone()
                    .unwrap_or_else(|| "preamble".to_string()),
                ordinals: Vec::new(),
            });
        }
        drafts.last_mut().expect("pushed above").ordinals.push(unit.ordinal);
    }
    drafts
}

#[derive(Debug, Deserialize)]
struct SegmentationPlan {
    episodes: Vec<PlannedEpisode>,
}

#[derive(Debug, Deserialize)]
struct PlannedEpisode {
    topic: String,
    indices: Vec<i64>,
}

fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Turn a provider plan into a valid partition. Every ordinal must land
/// in exactly one segment with consecutive indices; violations are
/// repaired greedily (first claim wins, gaps inherit the nearest claimed
/// neighbor) and flagged.
fn repair_plan(plan: SegmentationPlan, n: usize, flags: &mut Vec<String>) -> Vec<SegmentDraft> {
    let mut claim: Vec<Option<usize>> = vec![None; n];
    let mut repaired = false;
    for (idx, episode) in plan.episodes.iter().enumerate() {
        for &i in &episode.indices {
            if i < 1 || i as usize > n {
                repaired = true;
                continue;
            }
            let slot = &mut claim[i as usize - 1];
            if slot.is_some() {
                repaired = true;
            } else {
                *slot = Some(idx);
            }
        }
    }
    if claim.iter().all(|c| c.is_none()) {
        flags.push("segmentation plan unusable; kept source as one segment".into());
        return vec![SegmentDraft {
            topic: "episode".into(),
            ordinals: (1..=n as u32).collect(),
        }];
    }
    // Fill gaps from the left, then leading gaps from the right.
    let mut last = None;
    for slot in claim.iter_mut() {
        match slot {
            Some(idx) => last = Some(*idx),
            None => {
                repaired = true;
                *slot = last;
            }
        }
    }
    let mut next = None;
    for slot in claim.iter_mut().rev() {
        match slot {
            Some(idx) => next = Some(*idx),
            None => *slot = next,
        }
    }
    let mut drafts: Vec<SegmentDraft> = Vec::new();
    let mut seen_runs: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, slot) in claim.iter().enumerate() {
        let idx = slot.expect("filled above");
        let start_new = drafts.is_empty()
            || claim[pos - 1].expect("filled above") != idx;
        if start_new {
            *seen_runs.entry(idx).or_insert(0) += 1;
            if seen_runs[&idx] > 1 {
                repaired = true;
            }
            drafts.push(SegmentDraft {
                topic: plan.episodes[idx].topic.clone(),
                ordinals: Vec::new(),
            });
        }
        drafts.last_mut().expect("pushed above").ordinals.push(pos as u32 + 1);
    }
    if repaired {
        flags.push("segmentation plan violated the partition rule; repaired".into());
    }
    drafts
}

fn provider_drafts(
    backend: &ProviderBackend,
    units: &[SourceUnit],
    flags: &mut Vec<String>,
) -> Result<Vec<SegmentDraft>> {
    let rendered: Vec<String> = units
        .iter()
        .map(|u| format!("{}. {}", u.ordinal, format_unit(u)))
        .collect();
    let reply = backend.complete(
        &backend.prompts.segmentation,
        &BTreeMap::from([("messages", rendered.join("\n"))]),
    )?;
    let plan = extract_json_object(&reply)
        .and_then(|json| serde_json::from_str::<SegmentationPlan>(json).ok());
    Ok(match plan {
        Some(plan) => repair_plan(plan, units.len(), flags),
        None => {
            flags.push("segmentation reply was not parseable JSON; kept source as one segment".into());
            vec![SegmentDraft {
                topic: "episode".into(),
                ordinals: (1..=units.len() as u32).collect(),
            }]
        }
    })
}

/// Segment a stored source and persist the segments.
pub fn segment_source(
    store: &mut MemoryStore,
    source_id: SourceId,
    cfg: &IngestConfig,
    backend: &ExtractionBackend,
    flags: &mut Vec<String>,
) -> Result<Vec<SegmentId>> {
    let source = store.source(source_id)?.clone();
    if source.units.is_empty() {
        return Err(MemoraError::InvalidSource("source has no units".into()));
    }
    let drafts = match (&cfg.segmenter, backend) {
        (Segmenter::Structural, _) => structural_drafts(source.kind, &source.units),
        (Segmenter::FixedWindow(w), _) => windows(&source.units, *w),
        (Segmenter::Provider, ExtractionBackend::Provider(p)) => {
            provider_drafts(p, &source.units, flags)?
        }
        (Segmenter::Provider, ExtractionBackend::Stub) => {
            return Err(MemoraError::Config(
                "provider segmentation requires a configured provider".into(),
            ))
        }
    };
    let mut ids = Vec::new();
    for draft in drafts {
        let units: Vec<&SourceUnit> = draft
            .ordinals
            .iter()
            .map(|o| &source.units[*o as usize - 1])
            .collect();
        let text = units
            .iter()
            .map(|u| format_unit(u))
            .collect::<Vec<_>>()
            .join("\n");
        let timestamp = units.iter().filter_map(|u| u.timestamp).min();
        ids.push(store.add_segment(source_id, &draft.topic, draft.ordinals, &text, timestamp)?);
    }
    Ok(ids)
}

// ─── episodic grounding ───

/// Record the grounding episode for one segment. Raw mode stores the
/// segment text verbatim; extracted mode asks the provider and falls
/// back to raw (with a flag) when no provider is available or the reply
/// cannot be parsed.
pub fn build_episodic(
    store: &mut MemoryStore,
    segment_id: SegmentId,
    mode: EpisodicMode,
    backend: &ExtractionBackend,
    flags: &mut Vec<String>,
) -> Result<EpisodeId> {
    let segment = store.segment(segment_id)?.clone();
    if mode == EpisodicMode::Extracted {
        if let ExtractionBackend::Provider(p) = backend {
            let reply = p.complete(
                &p.prompts.episodic,
                &BTreeMap::from([("content", segment.text.clone())]),
            )?;
            let index = tagged_line(&reply, "EpisodicIndex:");
            let value = tagged_line(&reply, "EpisodicValue:");
            if let (Some(index), Some(value)) = (index, value) {
                return store.add_episode(segment_id, &index, &value, EpisodicMode::Extracted);
            }
            flags.push(format!(
                "episodic reply for segment {segment_id} was unparseable; stored raw"
            ));
        } else {
            flags.push(format!(
                "episodic extraction for segment {segment_id} needs a provider; stored raw"
            ));
        }
    }
    store.add_episode(segment_id, &segment.topic, &segment.text, EpisodicMode::Raw)
}

fn tagged_line(text: &str, tag: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let line = line.trim();
        let rest = line.strip_prefix(tag)?.trim();
        (!rest.is_empty()).then(|| rest.to_string())
    })
}

// ─── candidate extraction ───

/// Extract candidate memories from a segment. The stub reads one
/// candidate per `index: value` line; the provider parses repeated
/// MemIndex/MemValue pairs in order.
pub fn extract_candidates(
    store: &MemoryStore,
    segment_id: SegmentId,
    backend: &ExtractionBackend,
) -> Result<Vec<CandidateMemory>> {
    let segment = store.segment(segment_id)?;
    match backend {
        ExtractionBackend::Stub => Ok(segment
            .text
            .lines()
            .filter_map(|line| {
                let (index, value) = line.split_once(':')?;
                let (index, value) = (index.trim(), value.trim());
                (!index.is_empty() && !value.is_empty()).then(|| CandidateMemory {
                    abstraction: index.to_string(),
                    value: value.to_string(),
                })
            })
            .collect()),
        ExtractionBackend::Provider(p) => {
            let timestamp = segment
                .timestamp
                .map(|t: DateTime<Utc>| t.to_rfc3339())
                .unwrap_or_else(|| "unknown".to_string());
            let reply = p.complete(
                &p.prompts.factual,
                &BTreeMap::from([("content", segment.text.clone()), ("timestamp", timestamp)]),
            )?;
            let mut candidates = Vec::new();
            let mut pending: Option<String> = None;
            for line in reply.lines() {
                let line = line.trim();
                if let Some(rest) = line.strip_prefix("MemIndex:") {
                    pending = Some(rest.trim().to_string());
                } else if let Some(rest) = line.strip_prefix("MemValue:") {
                    if let Some(index) = pending.take() {
                        let value = rest.trim();
                        if !index.is_empty() && !value.is_empty() {
                            candidates.push(CandidateMemory {
                                abstraction: index,
                                value: value.to_string(),
                            });
                        }
                    }
                }
            }
            Ok(candidates)
        }
    }
}

// ─── consolidation ───

/// Rank existing entries by abstraction similarity to the candidate and
/// keep those at or above `gamma`, best first. Entries sharing one
/// abstraction share its score; ties resolve by ascending entry id.
pub fn find_consolidation_targets(
    abstraction: &str,
    store: &MemoryStore,
    top_k: usize,
    gamma: f64,
) -> Result<Vec<(EntryId, f64)>> {
    if store.entry_count() == 0 || top_k == 0 {
        return Ok(Vec::new());
    }
    let query = store.embedder().embed(&canonical(abstraction))?;
    let buckets = store
        .abstraction_index()
        .top_k(&query, store.abstraction_index().len())?;
    let mut out = Vec::new();
    'outer: for (bucket, score) in buckets {
        for entry in store.bucket_entries(bucket).into_iter().flatten() {
            if out.len() == top_k {
                break 'outer;
            }
            out.push((*entry, score));
        }
    }
    out.retain(|(_, score)| *score >= gamma);
    Ok(out)
}

/// Merge a new value into an existing one, appending with " | " unless
/// the value is already present as one of the parts (so re-playing the
/// same material does not grow entries).
pub fn merge_values(existing: &str, incoming: &str) -> String {
    if existing.split(" | ").any(|part| part == incoming) {
        existing.to_string()
    } else {
        format!("{existing} | {incoming}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeOutcome {
    pub target: Option<EntryId>,
    pub refined_abstraction: Option<String>,
}

/// Pick the entry the candidate should merge into, if any. The stub
/// accepts the best-ranked target whose canonical abstraction equals the
/// candidate's; the provider is asked to choose a candidate number or
/// answer "new".
pub fn judge_match(
    candidate: &CandidateMemory,
    targets: &[(EntryId, f64)],
    store: &MemoryStore,
    backend: &ExtractionBackend,
    flags: &mut Vec<String>,
) -> Result<JudgeOutcome> {
    if targets.is_empty() {
        return Ok(JudgeOutcome {
            target: None,
            refined_abstraction: None,
        });
    }
    match backend {
        ExtractionBackend::Stub => {
            let wanted = canonical(&candidate.abstraction);
            let target = targets
                .iter()
                .find(|(id, _)| canonical(&store.entry(*id).expect("target exists").abstraction) == wanted)
                .map(|(id, _)| *id);
            Ok(JudgeOutcome {
                target,
                refined_abstraction: None,
            })
        }
        ExtractionBackend::Provider(p) => {
            let info = targets
                .iter()
                .enumerate()
                .map(|(i, (id, _))| {
                    let entry = store.entry(*id).expect("target exists");
                    format!("{}. Index: {}\n   Value: {}", i + 1, entry.abstraction, entry.value)
                })
                .collect::<Vec<_>>()
                .join("\n");
            let reply = p.complete(
                &p.prompts.update,
                &BTreeMap::from([
                    ("new_index", candidate.abstraction.clone()),
                    ("new_value", candidate.value.clone()),
                    ("candidates_info", info),
                ]),
            )?;
            let decision = tagged_line_ci(&reply, "decision:");
            let refined = tagged_line_ci(&reply, "updatedindex:");
            let target = match decision.as_deref() {
                Some(token) if token.eq_ignore_ascii_case("new") => None,
                Some(token) => match token.trim_matches(|c: char| !c.is_ascii_digit()).parse::<usize>() {
                    Ok(i) if i >= 1 && i <= targets.len() => Some(targets[i - 1].0),
                    _ => {
                        flags.push(format!("judge reply named no valid candidate: {token:?}"));
                        None
                    }
                },
                None => {
                    flags.push("judge reply had no decision line; creating new entry".into());
                    None
                }
            };
            Ok(JudgeOutcome {
                target,
                refined_abstraction: refined.filter(|_| target.is_some()),
            })
        }
    }
}

fn tagged_line_ci(text: &str, tag: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['#', '*', '-', ' ']);
        if line.len() < tag.len() || !line[..tag.len()].eq_ignore_ascii_case(tag) {
            return None;
        }
        let rest = line[tag.len()..].trim();
        (!rest.is_empty()).then(|| rest.to_string())
    })
}

/// Apply a consolidation decision, grounding the touched entry in the
/// segment's episode. Returns the entry id and whether it was created.
pub fn apply_consolidation(
    store: &mut MemoryStore,
    candidate: &CandidateMemory,
    decision: &ConsolidationDecision,
    episode: EpisodeId,
) -> Result<(EntryId, bool)> {
    match decision {
        ConsolidationDecision::Create => {
            let id = store.create_entry(&candidate.abstraction, &candidate.value, &[episode])?;
            Ok((id, true))
        }
        ConsolidationDecision::Update {
            target,
            merged_value,
            refined_abstraction,
        } => {
            store.update_entry(
                *target,
                merged_value,
                refined_abstraction.as_deref(),
                Some(episode),
            )?;
            Ok((*target, false))
        }
    }
}

// ─── cue anchors ───

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "from",
    "by", "is", "are", "was", "were", "be", "been", "has", "have", "had", "does", "did", "do",
    "went", "goes", "going", "will", "would", "his", "her", "their", "its", "my", "your", "our",
    "this", "that", "these", "those", "it", "he", "she", "they", "we", "i", "you", "as", "so",
    "about", "during", "after", "before",
];

pub(crate) fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token.to_lowercase().as_str())
}

fn clean_token(token: &str) -> String {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    for suffix in ["'s", "\u{2019}s"] {
        if let Some(stripped) = trimmed.strip_suffix(suffix) {
            return stripped.to_string();
        }
    }
    trimmed.to_string()
}

fn is_capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Deterministic [Main Entity] + [Key Aspect] labels for an entry:
/// the abstraction's leading entity paired with its first content token,
/// plus optionally the first capitalized non-sentence-initial token of
/// the value. Labels matching the abstraction itself are dropped.
fn stub_cue_labels(abstraction: &str, value: &str) -> Vec<String> {
    let tokens: Vec<String> = abstraction.split_whitespace().map(clean_token).collect();
    let Some(entity) = tokens.iter().find(|t| !t.is_empty()).cloned() else {
        return Vec::new();
    };
    let mut labels = Vec::new();
    let aspect = tokens
        .iter()
        .skip(1)
        .find(|t| !t.is_empty() && !is_stopword(t) && t.to_lowercase() != entity.to_lowercase());
    let aspect = match aspect {
        Some(a) => Some(a.clone()),
        None => value
            .split_whitespace()
            .map(clean_token)
            .find(|t| !t.is_empty() && !is_stopword(t) && t.to_lowercase() != entity.to_lowercase()),
    };
    if let Some(aspect) = aspect {
        labels.push(format!("{entity} {aspect}"));
    }
    // Second facet: a capitalized value token that is not sentence-initial.
    let value_tokens: Vec<&str> = value.split_whitespace().collect();
    let mut sentence_start = true;
    for raw in &value_tokens {
        let cleaned = clean_token(raw);
        let candidate_ok = !sentence_start
            && !cleaned.is_empty()
            && is_capitalized(&cleaned)
            && cleaned.to_lowercase() != entity.to_lowercase()
            && !labels
                .iter()
                .any(|l| l.to_lowercase().contains(&cleaned.to_lowercase()));
        if candidate_ok {
            labels.push(format!("{entity} {cleaned}"));
            break;
        }
        sentence_start = raw.ends_with(['.', '!', '?']);
    }
    let canon_abstraction = canonical(abstraction);
    labels.retain(|l| canonical(l) != canon_abstraction);
    labels.dedup_by_key(|l| canonical(l));
    labels.truncate(MAX_CUES_PER_ENTRY);
    labels
}

fn parse_cue_reply(reply: &str) -> Vec<String> {
    if let (Some(start), Some(end)) = (reply.find('['), reply.rfind(']')) {
        if end > start {
            if let Ok(list) = serde_json::from_str::<Vec<String>>(&reply[start..=end]) {
                return list;
            }
        }
    }
    reply
        .lines()
        .map(|line| {
            line.trim()
                .trim_start_matches(['-', '*', '\u{2022}'])
                .trim()
                .trim_matches('"')
                .trim()
        })
        .filter(|line| {
            !line.is_empty()
                && !line.to_lowercase().starts_with("cue anchors")
                && line.split_whitespace().count() <= 6
        })
        .map(str::to_string)
        .collect()
}

/// Produce 1-3 cue labels for an entry. Labels equal to the entry's
/// canonical abstraction are dropped; provider lists are truncated to
/// three with a flag, and labels outside 2-4 words are rejected.
pub fn generate_cue_anchors(
    store: &MemoryStore,
    entry_id: EntryId,
    backend: &ExtractionBackend,
    flags: &mut Vec<String>,
) -> Result<Vec<String>> {
    let entry = store.entry(entry_id)?;
    match backend {
        ExtractionBackend::Stub => Ok(stub_cue_labels(&entry.abstraction, &entry.value)),
        ExtractionBackend::Provider(p) => {
            let memories = format!(
                "Primary Abstraction: \"{}\"\nMemory Value: \"{}\"",
                entry.abstraction, entry.value
            );
            let reply = p.complete(&p.prompts.cue, &BTreeMap::from([("memories", memories)]))?;
            let mut labels = parse_cue_reply(&reply);
            let before = labels.len();
            let canon_abstraction = canonical(&entry.abstraction);
            labels.retain(|l| {
                let words = l.split_whitespace().count();
                (2..=4).contains(&words) && canonical(l) != canon_abstraction
            });
            if labels.len() < before {
                flags.push(format!(
                    "dropped {} invalid cue label(s) for entry {entry_id}",
                    before - labels.len()
                ));
            }
            if labels.len() > MAX_CUES_PER_ENTRY {
                labels.truncate(MAX_CUES_PER_ENTRY);
                flags.push(format!("truncated cue labels for entry {entry_id} to 3"));
            }
            Ok(labels)
        }
    }
}

// ─── full pipeline ───

/// Ingest one source end to end. With the stub backend and a fixed
/// config this is a pure function of (source, store state).
pub fn ingest(
    store: &mut MemoryStore,
    name: &str,
    kind: SourceKind,
    units: Vec<SourceUnit>,
    cfg: &IngestConfig,
    backend: &ExtractionBackend,
) -> Result<IngestReport> {
    cfg.validate()?;
    let mut report = IngestReport::default();
    if units.is_empty() {
        return Ok(report);
    }
    let source_id = store.add_source(name, kind, units)?;
    report.source_id = Some(source_id);
    let mut flags = Vec::new();
    let segments = segment_source(store, source_id, cfg, backend, &mut flags)?;
    report.segments_made = segments.len();
    for segment_id in segments {
        let episode = build_episodic(store, segment_id, cfg.episodic_mode, backend, &mut flags)?;
        report.episodes_made += 1;
        let candidates = extract_candidates(store, segment_id, backend)?;
        for candidate in candidates {
            if candidate.abstraction.trim().is_empty() || candidate.value.trim().is_empty() {
                flags.push("skipped candidate with empty field".into());
                continue;
            }
            report.candidates_extracted += 1;
            let targets =
                find_consolidation_targets(&candidate.abstraction, store, cfg.top_k, cfg.gamma)?;
            let outcome = judge_match(&candidate, &targets, store, backend, &mut flags)?;
            let decision = match outcome.target {
                Some(target) => {
                    let existing = store.entry(target)?.value.clone();
                    ConsolidationDecision::Update {
                        target,
                        merged_value: merge_values(&existing, &candidate.value),
                        refined_abstraction: outcome.refined_abstraction,
                    }
                }
                None => ConsolidationDecision::Create,
            };
            let (entry_id, created) = apply_consolidation(store, &candidate, &decision, episode)?;
            if created {
                report.entries_created += 1;
            } else {
                report.entries_updated += 1;
            }
            // Cues are regenerated after every create and update; links
            // accumulate, old ones are kept.
            let labels = generate_cue_anchors(store, entry_id, backend, &mut flags)?;
            for label in labels {
                let (_, outcome) = store.link_cue(entry_id, &label)?;
                match outcome {
                    crate::store::LinkOutcome::CreatedAnchor => report.anchors_created += 1,
                    _ => report.anchors_reused += 1,
                }
            }
        }
    }
    report.flags = flags;
    Ok(report)
}
