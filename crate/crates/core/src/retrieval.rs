//! Retrieval: joint semantic seeding over abstractions and cues, the
//! link-following frontier, and the budgeted sequential control loop.
//!
//! The sequential retriever is a small state machine. The working set
//! starts empty and the frontier starts as the semantic hits for the
//! query, so the first Expand performs the seed retrieval. Each step a
//! policy picks Refine, Expand, or Stop; Refine re-queries and merges
//! the new hits into the frontier, Expand promotes chosen frontier
//! entries into the working set and pulls their neighbors in behind
//! them. Invalid actions are coerced to Stop and flagged in the trace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{MemoraError, Result};
use crate::provider::ProviderBackend;
use crate::store::{canonical, AnchorId, EntryId, EpisodeId, MemoryStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    /// Entries from the top abstractions plus entries linked to the top
    /// cue anchors.
    Union,
    /// Entries from the top abstractions that also link to at least one
    /// of the top cue anchors.
    Gated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// TopK width over the abstraction index.
    pub k_a: usize,
    /// TopK width over the cue index.
    pub k_c: usize,
    pub mode: SeedMode,
    /// Cue-cue similarity threshold for implicit adjacency; None turns
    /// that edge kind off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_adj: Option<f64>,
    /// Hop limit for plain graph traversal.
    pub hops: usize,
    /// Step budget for the sequential loop. Stop is free; other actions
    /// cost their configured positive amount.
    pub budget: u32,
    pub max_steps: usize,
    pub refine_cost: u32,
    pub expand_cost: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_a: 5,
            k_c: 5,
            mode: SeedMode::Union,
            delta_adj: None,
            hops: 1,
            budget: 8,
            max_steps: 10,
            refine_cost: 1,
            expand_cost: 1,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(MemoraError::Config("budget must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(MemoraError::Config("max_steps must be >= 1".into()));
        }
        if self.refine_cost == 0 || self.expand_cost == 0 {
            return Err(MemoraError::Config(
                "action costs must be positive integers".into(),
            ));
        }
        if let Some(delta) = self.delta_adj {
            if !(0.0..=1.0).contains(&delta) {
                return Err(MemoraError::Config("delta_adj must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn action_cost(&self, action: &Action) -> u32 {
        match action {
            Action::Refine { .. } => self.refine_cost,
            Action::Expand { .. } => self.expand_cost,
            Action::Stop => 0,
        }
    }
}

/// Why an entry sits in the frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Came straight from semantic seeding.
    Seed,
    SharedCue { anchor: AnchorId },
    SimilarCue { from: AnchorId, to: AnchorId },
    ExplicitEdge { from: EntryId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierItem {
    pub entry: EntryId,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Action {
    Refine { query: String },
    Expand { selected: Vec<EntryId> },
    Stop,
}

#[derive(Debug, Clone)]
pub struct RetrievalState {
    pub step: usize,
    pub query_text: String,
    pub query_vector: EmbeddingVector,
    pub working: BTreeMap<EntryId, f64>,
    pub frontier: BTreeMap<EntryId, FrontierItem>,
    /// Signed because the last applied action may push it below zero;
    /// the loop breaks before anything consults a negative balance.
    pub budget_remaining: i64,
}

impl RetrievalState {
    pub fn digest(&self) -> String {
        format!(
            "t={} q={:?} |W|={} |F|={} b={}",
            self.step,
            self.query_text,
            self.working.len(),
            self.frontier.len(),
            self.budget_remaining
        )
    }

    /// Frontier items best first (score descending, id ascending).
    pub fn frontier_ranked(&self) -> Vec<FrontierItem> {
        let mut items: Vec<FrontierItem> = self.frontier.values().copied().collect();
        items.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then(a.entry.cmp(&b.entry))
        });
        items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryEnd {
    Stopped,
    BudgetExhausted,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub state_digest: String,
    pub action: Action,
    pub logprob: f64,
    pub applied: bool,
    pub coerced: bool,
    pub cost: u32,
    pub budget_after: i64,
    pub working_size: usize,
    pub frontier_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub id: EntryId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    /// Score descending, ties by ascending id.
    pub entries: Vec<ScoredEntry>,
    /// Each retrieved entry that has episodes appears under exactly one
    /// episode (its smallest), so grounded context stays grouped.
    pub episodic_groups: BTreeMap<EpisodeId, Vec<EntryId>>,
    pub steps_taken: usize,
    pub budget_spent: u32,
    pub end: TrajectoryEnd,
    pub coerced: bool,
    pub trace: Vec<TraceStep>,
}

fn ranked_entries(hits: &BTreeMap<EntryId, f64>) -> Vec<ScoredEntry> {
    let mut out: Vec<ScoredEntry> = hits
        .iter()
        .map(|(id, score)| ScoredEntry {
            id: *id,
            score: *score,
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.id.cmp(&b.id))
    });
    out
}

fn group_by_episode(
    entries: &[ScoredEntry],
    store: &MemoryStore,
) -> BTreeMap<EpisodeId, Vec<EntryId>> {
    let mut groups: BTreeMap<EpisodeId, Vec<EntryId>> = BTreeMap::new();
    for scored in entries {
        let entry = store.entry(scored.id).expect("retrieved entries exist");
        if let Some(episode) = entry.episodic_ids.iter().next() {
            groups.entry(*episode).or_default().push(scored.id);
        }
    }
    groups
}

// ─── semantic seeding ───

/// Joint match against abstractions and cue anchors, returning entry
/// scores. Entries inherit their abstraction bucket's score and the
/// scores of their matched anchors; the best signal wins.
pub fn semantic_hits(
    store: &MemoryStore,
    query: &EmbeddingVector,
    cfg: &RetrievalConfig,
) -> Result<BTreeMap<EntryId, f64>> {
    if store.entry_count() == 0 {
        return Ok(BTreeMap::new());
    }
    let top_abstractions = store.abstraction_index().top_k(query, cfg.k_a)?;
    let mut from_abstractions: BTreeMap<EntryId, f64> = BTreeMap::new();
    for (bucket, score) in &top_abstractions {
        for entry in store.bucket_entries(*bucket).into_iter().flatten() {
            let slot = from_abstractions.entry(*entry).or_insert(f64::MIN);
            *slot = slot.max(*score);
        }
    }
    let top_anchors = store.cue_index().top_k(query, cfg.k_c)?;
    let mut from_cues: BTreeMap<EntryId, f64> = BTreeMap::new();
    for (anchor_id, score) in &top_anchors {
        for entry in &store.anchor(*anchor_id)?.entry_ids {
            let slot = from_cues.entry(*entry).or_insert(f64::MIN);
            *slot = slot.max(*score);
        }
    }
    Ok(match cfg.mode {
        SeedMode::Union => {
            let mut merged = from_abstractions;
            for (entry, score) in from_cues {
                let slot = merged.entry(entry).or_insert(f64::MIN);
                *slot = slot.max(score);
            }
            merged
        }
        SeedMode::Gated => {
            let anchor_set: BTreeSet<AnchorId> =
                top_anchors.iter().map(|(id, _)| *id).collect();
            from_abstractions
                .into_iter()
                .filter(|(entry, _)| {
                    store
                        .entry(*entry)
                        .map(|e| e.cue_ids.iter().any(|c| anchor_set.contains(c)))
                        .unwrap_or(false)
                })
                .map(|(entry, score)| {
                    let cue_score = from_cues.get(&entry).copied().unwrap_or(f64::MIN);
                    (entry, score.max(cue_score))
                })
                .collect()
        }
    })
}

/// One-shot retrieval with no traversal: score, rank, group.
pub fn semantic_retrieve(
    store: &MemoryStore,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult> {
    if query.trim().is_empty() {
        return Err(MemoraError::EmptyField("query"));
    }
    let hits = if store.entry_count() == 0 {
        BTreeMap::new()
    } else {
        let vector = store.embedder().embed(&canonical(query))?;
        semantic_hits(store, &vector, cfg)?
    };
    let entries = ranked_entries(&hits);
    let episodic_groups = group_by_episode(&entries, store);
    Ok(RetrievalResult {
        query: query.to_string(),
        entries,
        episodic_groups,
        steps_taken: 0,
        budget_spent: 0,
        end: TrajectoryEnd::Stopped,
        coerced: false,
        trace: Vec::new(),
    })
}

/// Algorithm start state: empty working set, semantic hits as frontier.
pub fn init_frontier(
    store: &MemoryStore,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<RetrievalState> {
    if query.trim().is_empty() {
        return Err(MemoraError::EmptyField("query"));
    }
    let query_vector = store.embedder().embed(&canonical(query))?;
    let hits = if store.entry_count() == 0 {
        BTreeMap::new()
    } else {
        semantic_hits(store, &query_vector, cfg)?
    };
    let frontier = hits
        .into_iter()
        .map(|(entry, score)| {
            (
                entry,
                FrontierItem {
                    entry,
                    score,
                    provenance: Provenance::Seed,
                },
            )
        })
        .collect();
    Ok(RetrievalState {
        step: 0,
        query_text: query.to_string(),
        query_vector,
        working: BTreeMap::new(),
        frontier,
        budget_remaining: cfg.budget as i64,
    })
}

// ─── link structure ───

/// All entries one link away: shared cue anchors, cue pairs whose
/// similarity clears `delta_adj` (when set), and injected explicit
/// edges. The entry itself is excluded; when several links reach the
/// same entry the strongest one is kept.
pub fn neighbors(
    store: &MemoryStore,
    entry_id: EntryId,
    delta_adj: Option<f64>,
) -> Result<Vec<FrontierItem>> {
    let entry = store.entry(entry_id)?;
    let mut found: BTreeMap<EntryId, FrontierItem> = BTreeMap::new();
    let offer = |found: &mut BTreeMap<EntryId, FrontierItem>, item: FrontierItem| {
        if item.entry == entry_id {
            return;
        }
        match found.get(&item.entry) {
            Some(existing) if existing.score >= item.score => {}
            _ => {
                found.insert(item.entry, item);
            }
        }
    };
    for anchor_id in &entry.cue_ids {
        for other in &store.anchor(*anchor_id)?.entry_ids {
            offer(
                &mut found,
                FrontierItem {
                    entry: *other,
                    score: 1.0,
                    provenance: Provenance::SharedCue { anchor: *anchor_id },
                },
            );
        }
    }
    for target in store.explicit_edges_from(entry_id) {
        offer(
            &mut found,
            FrontierItem {
                entry: target,
                score: 1.0,
                provenance: Provenance::ExplicitEdge { from: entry_id },
            },
        );
    }
    if let Some(delta) = delta_adj {
        for anchor_id in &entry.cue_ids {
            let vector = store
                .cue_index()
                .get(anchor_id)
                .expect("linked anchors are indexed")
                .clone();
            for (other_anchor, sim) in store.cue_index().scan_at_least(&vector, delta)? {
                if other_anchor == *anchor_id {
                    continue;
                }
                for target in &store.anchor(other_anchor)?.entry_ids {
                    offer(
                        &mut found,
                        FrontierItem {
                            entry: *target,
                            score: sim,
                            provenance: Provenance::SimilarCue {
                                from: *anchor_id,
                                to: other_anchor,
                            },
                        },
                    );
                }
            }
        }
    }
    Ok(found.into_values().collect())
}

/// Breadth-first closure of [`neighbors`] up to `hops` hops, seeds
/// included. Zero hops returns the seeds unchanged.
pub fn traverse(
    store: &MemoryStore,
    seeds: &[EntryId],
    hops: usize,
    delta_adj: Option<f64>,
) -> Result<BTreeSet<EntryId>> {
    let mut visited: BTreeSet<EntryId> = BTreeSet::new();
    let mut queue: VecDeque<(EntryId, usize)> = VecDeque::new();
    for seed in seeds {
        store.entry(*seed)?;
        if visited.insert(*seed) {
            queue.push_back((*seed, 0));
        }
    }
    while let Some((entry, depth)) = queue.pop_front() {
        if depth == hops {
            continue;
        }
        for item in neighbors(store, entry, delta_adj)? {
            if visited.insert(item.entry) {
                queue.push_back((item.entry, depth + 1));
            }
        }
    }
    Ok(visited)
}

// ─── the control loop ───

fn validate_action(state: &RetrievalState, action: &Action) -> Result<()> {
    match action {
        Action::Stop => Ok(()),
        Action::Refine { query } => {
            if query.trim().is_empty() {
                Err(MemoraError::InvalidAction("refine with empty query".into()))
            } else {
                Ok(())
            }
        }
        Action::Expand { selected } => {
            if selected.is_empty() {
                return Err(MemoraError::InvalidAction("expand with empty selection".into()));
            }
            for id in selected {
                if !state.frontier.contains_key(id) {
                    return Err(MemoraError::InvalidAction(format!(
                        "expand selected {id} which is not in the frontier"
                    )));
                }
            }
            Ok(())
        }
    }
}

/// Apply one action to the state. The caller owns the loop discipline;
/// this refuses to act once the budget is spent.
pub fn apply_action(
    store: &MemoryStore,
    state: &mut RetrievalState,
    action: &Action,
    cfg: &RetrievalConfig,
) -> Result<()> {
    if state.budget_remaining <= 0 {
        return Err(MemoraError::BudgetExhausted);
    }
    validate_action(state, action)?;
    match action {
        Action::Stop => return Ok(()),
        Action::Refine { query } => {
            state.query_text = query.clone();
            state.query_vector = store.embedder().embed(&canonical(query))?;
            let hits = semantic_hits(store, &state.query_vector, cfg)?;
            for (entry, score) in hits {
                if state.working.contains_key(&entry) {
                    continue;
                }
                let item = state.frontier.entry(entry).or_insert(FrontierItem {
                    entry,
                    score,
                    provenance: Provenance::Seed,
                });
                item.score = item.score.max(score);
            }
        }
        Action::Expand { selected } => {
            for id in selected {
                let item = state.frontier.remove(id).expect("validated above");
                state.working.insert(*id, item.score);
            }
            for id in selected {
                for item in neighbors(store, *id, cfg.delta_adj)? {
                    if state.working.contains_key(&item.entry) {
                        continue;
                    }
                    match state.frontier.get_mut(&item.entry) {
                        Some(existing) => existing.score = existing.score.max(item.score),
                        None => {
                            state.frontier.insert(item.entry, item);
                        }
                    }
                }
            }
        }
    }
    state.budget_remaining -= cfg.action_cost(action) as i64;
    state.step += 1;
    Ok(())
}

/// What a policy hands back each step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub action: Action,
    /// log pi(a|s); deterministic policies report 0 (probability 1).
    pub logprob: f64,
    pub note: Option<String>,
}

impl PolicyDecision {
    pub fn new(action: Action) -> Self {
        Self {
            action,
            logprob: 0.0,
            note: None,
        }
    }
}

pub trait RetrievalPolicy {
    fn decide(
        &mut self,
        store: &MemoryStore,
        state: &RetrievalState,
        cfg: &RetrievalConfig,
    ) -> Result<PolicyDecision>;
}

/// Run the sequential retrieval loop: decide, break on Stop or a spent
/// budget, otherwise apply. Invalid decisions are coerced to Stop and
/// flagged rather than aborting the query.
pub fn policy_retrieve(
    store: &MemoryStore,
    query: &str,
    policy: &mut dyn RetrievalPolicy,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult> {
    cfg.validate()?;
    let mut state = init_frontier(store, query, cfg)?;
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut end = TrajectoryEnd::MaxSteps;
    let mut any_coerced = false;
    for t in 0..cfg.max_steps {
        let digest = state.digest();
        let mut decision = policy.decide(store, &state, cfg)?;
        let mut coerced = false;
        if let Err(problem) = validate_action(&state, &decision.action) {
            decision.note = Some(format!("coerced to stop: {problem}"));
            decision.action = Action::Stop;
            coerced = true;
            any_coerced = true;
        }
        let is_stop = decision.action == Action::Stop;
        let out_of_budget = state.budget_remaining <= 0;
        let applied = !is_stop && !out_of_budget;
        let cost = if applied {
            cfg.action_cost(&decision.action)
        } else {
            0
        };
        if applied {
            apply_action(store, &mut state, &decision.action, cfg)?;
        }
        trace.push(TraceStep {
            step: t,
            state_digest: digest,
            action: decision.action,
            logprob: decision.logprob,
            applied,
            coerced,
            cost,
            budget_after: state.budget_remaining,
            working_size: state.working.len(),
            frontier_size: state.frontier.len(),
            note: decision.note,
        });
        if is_stop {
            end = TrajectoryEnd::Stopped;
            break;
        }
        if out_of_budget {
            end = TrajectoryEnd::BudgetExhausted;
            break;
        }
    }
    let entries = ranked_entries(&state.working);
    let episodic_groups = group_by_episode(&entries, store);
    Ok(RetrievalResult {
        query: query.to_string(),
        entries,
        episodic_groups,
        steps_taken: trace.len(),
        budget_spent: trace.iter().map(|s| s.cost).sum(),
        end,
        coerced: any_coerced,
        trace,
    })
}

// ─── policies ───

/// Deterministic default: expand every frontier item scoring at least
/// theta while budget lasts; if the opening frontier is empty, refine
/// once by appending the nearest cue label; otherwise stop. Stateless,
/// so repeated runs from the same store and query coincide.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    pub theta: f64,
}

pub const DEFAULT_HEURISTIC_THETA: f64 = 0.25;

impl Default for HeuristicPolicy {
    fn default() -> Self {
        Self {
            theta: DEFAULT_HEURISTIC_THETA,
        }
    }
}

impl HeuristicPolicy {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }
}

impl RetrievalPolicy for HeuristicPolicy {
    fn decide(
        &mut self,
        store: &MemoryStore,
        state: &RetrievalState,
        _cfg: &RetrievalConfig,
    ) -> Result<PolicyDecision> {
        let strong: Vec<EntryId> = state
            .frontier
            .values()
            .filter(|item| item.score >= self.theta)
            .map(|item| item.entry)
            .collect();
        if !strong.is_empty() && state.budget_remaining > 0 {
            return Ok(PolicyDecision::new(Action::Expand { selected: strong }));
        }
        if state.step == 0 && state.frontier.is_empty() {
            if let Some((anchor, _)) = store
                .cue_index()
                .top_k(&state.query_vector, 1)?
                .into_iter()
                .next()
            {
                let label = store.anchor(anchor)?.label.clone();
                return Ok(PolicyDecision::new(Action::Refine {
                    query: format!("{} {}", state.query_text, label),
                }));
            }
        }
        Ok(PolicyDecision::new(Action::Stop))
    }
}

/// Plays back a fixed action list, then stops.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: VecDeque<Action>,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self {
            actions: actions.into(),
        }
    }
}

impl RetrievalPolicy for ScriptedPolicy {
    fn decide(
        &mut self,
        _store: &MemoryStore,
        _state: &RetrievalState,
        _cfg: &RetrievalConfig,
    ) -> Result<PolicyDecision> {
        Ok(PolicyDecision::new(
            self.actions.pop_front().unwrap_or(Action::Stop),
        ))
    }
}

/// Expands the whole opening frontier exactly once, then stops. This
/// is the scripted [Expand(all), Stop] shape flat retrieval reduces
/// to. Stateless, so reuse across runs is safe.
#[derive(Debug, Clone, Default)]
pub struct ExpandAllOncePolicy;

impl RetrievalPolicy for ExpandAllOncePolicy {
    fn decide(
        &mut self,
        _store: &MemoryStore,
        state: &RetrievalState,
        _cfg: &RetrievalConfig,
    ) -> Result<PolicyDecision> {
        if state.step == 0 && !state.frontier.is_empty() {
            return Ok(PolicyDecision::new(Action::Expand {
                selected: state.frontier.keys().copied().collect(),
            }));
        }
        Ok(PolicyDecision::new(Action::Stop))
    }
}

const POLICY_PROMPT: &str = "You steer a memory retrieval loop. Decide the next action.\n\
Query: {query}\n\
Budget remaining: {budget}\n\
Working set (already retrieved):\n{working}\n\
Frontier (candidates to expand):\n{frontier}\n\
Reply with exactly one line:\n\
REFINE: <rewritten query>\n\
EXPAND: <comma-separated frontier ids>\n\
STOP\n";

fn render_entry_line(store: &MemoryStore, entry: EntryId, score: Option<f64>) -> String {
    let (abstraction, value) = match store.entry(entry) {
        Ok(e) => (e.abstraction.clone(), e.value.clone()),
        Err(_) => ("<missing>".into(), String::new()),
    };
    match score {
        Some(score) => format!("[{entry}] {abstraction} — {value} ({score:.3})"),
        None => format!("[{entry}] {abstraction} — {value}"),
    }
}

fn parse_policy_reply(reply: &str) -> (Action, Option<String>) {
    for line in reply.lines() {
        let line = line.trim();
        if line == "STOP" {
            return (Action::Stop, None);
        }
        if let Some(rest) = line.strip_prefix("REFINE:") {
            let query = rest.trim();
            if !query.is_empty() {
                return (
                    Action::Refine {
                        query: query.to_string(),
                    },
                    None,
                );
            }
        }
        if let Some(rest) = line.strip_prefix("EXPAND:") {
            let ids: Vec<EntryId> = rest
                .split(',')
                .filter_map(|token| token.trim().parse::<u64>().ok().map(EntryId))
                .collect();
            if !ids.is_empty() && ids.len() == rest.split(',').count() {
                return (Action::Expand { selected: ids }, None);
            }
        }
    }
    (
        Action::Stop,
        Some("unparseable policy reply; stopping".into()),
    )
}

/// Asks a chat provider for the next action using the exact
/// REFINE/EXPAND/STOP grammar. Unparseable replies stop with a note;
/// out-of-frontier selections are left for the loop to coerce.
pub struct ProviderPolicy {
    pub backend: ProviderBackend,
}

impl RetrievalPolicy for ProviderPolicy {
    fn decide(
        &mut self,
        store: &MemoryStore,
        state: &RetrievalState,
        _cfg: &RetrievalConfig,
    ) -> Result<PolicyDecision> {
        let working = if state.working.is_empty() {
            "(empty)".to_string()
        } else {
            state
                .working
                .keys()
                .map(|id| render_entry_line(store, *id, None))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let frontier = if state.frontier.is_empty() {
            "(empty)".to_string()
        } else {
            state
                .frontier_ranked()
                .iter()
                .map(|item| render_entry_line(store, item.entry, Some(item.score)))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let reply = self.backend.complete(
            POLICY_PROMPT,
            &BTreeMap::from([
                ("query", state.query_text.clone()),
                ("budget", state.budget_remaining.to_string()),
                ("working", working),
                ("frontier", frontier),
            ]),
        )?;
        let (action, note) = parse_policy_reply(&reply);
        Ok(PolicyDecision {
            action,
            logprob: 0.0,
            note,
        })
    }
}
