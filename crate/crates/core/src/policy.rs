//! Policy learning math: trajectory judging and the group-relative
//! loss. Everything here is pure arithmetic over sampled trajectories;
//! log-probabilities are inputs and no gradients are computed (an
//! external trainer owns differentiation and parameter updates).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingVector};
use crate::error::{MemoraError, Result};
use crate::retrieval::{
    policy_retrieve, Action, RetrievalConfig, RetrievalPolicy, RetrievalResult, TrajectoryEnd,
};
use crate::store::{canonical, EntryId, MemoryStore};

/// Judge weights for the scalar trajectory score
/// J = w1 * ground - w2 * redund - w3 * cost, plus the redundancy
/// threshold and the KL coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub delta_red: f64,
    pub beta: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.5,
            w3: 0.1,
            delta_red: 0.85,
            beta: 0.1,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("beta", self.beta),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(MemoraError::InvalidParameter(format!(
                    "{name} must be a nonnegative finite number"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.delta_red) {
            return Err(MemoraError::InvalidParameter(
                "delta_red must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A probability table over the three action variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDist {
    pub refine: f64,
    pub expand: f64,
    pub stop: f64,
}

const DIST_TOLERANCE: f64 = 1e-9;

impl ActionDist {
    pub fn new(refine: f64, expand: f64, stop: f64) -> Result<Self> {
        let dist = Self {
            refine,
            expand,
            stop,
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self.probs();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MemoraError::Distribution(
                "probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_TOLERANCE {
            return Err(MemoraError::Distribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn probs(&self) -> [f64; 3] {
        [self.refine, self.expand, self.stop]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state_digest: String,
    pub action: Action,
    /// log pi_theta(a_t | s_t), supplied by whoever sampled the step.
    pub logprob_current: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprob_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_current: Option<ActionDist>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist_ref: Option<ActionDist>,
    /// Whether the loop actually applied this action (the final action
    /// of a budget-exhausted run is decided but never applied).
    pub applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    /// In [0, 1].
    pub ground: f64,
    pub redund: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub steps: Vec<TrajectoryStep>,
    pub retrieved: BTreeSet<EntryId>,
    pub end: TrajectoryEnd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<ScoreComponents>,
}

impl Trajectory {
    pub fn from_result(result: &RetrievalResult) -> Self {
        Self {
            query: result.query.clone(),
            steps: result
                .trace
                .iter()
                .map(|step| TrajectoryStep {
                    state_digest: step.state_digest.clone(),
                    action: step.action.clone(),
                    logprob_current: step.logprob,
                    logprob_ref: None,
                    dist_current: None,
                    dist_ref: None,
                    applied: step.applied,
                })
                .collect(),
            retrieved: result.entries.iter().map(|e| e.id).collect(),
            end: result.end,
            components: None,
        }
    }
}

// ─── judge components ───

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let cleaned: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        (!cleaned.is_empty()).then_some(cleaned)
    })
}

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .filter(|t| !crate::ingest::is_stopword(t))
        .collect()
}

/// How well the retrieved set supports the query. With a reference
/// answer this is the fraction of its content tokens covered by the
/// retrieved values; without one it falls back to the cosine between
/// the query and the centroid of the retrieved values, clamped to
/// [0, 1]. An empty retrieval grounds nothing.
pub fn groundedness(
    query: &str,
    retrieved: &BTreeSet<EntryId>,
    store: &MemoryStore,
    reference: Option<&str>,
) -> Result<f64> {
    if retrieved.is_empty() {
        return Ok(0.0);
    }
    let values: Vec<String> = retrieved
        .iter()
        .map(|id| store.entry(*id).map(|e| e.value.clone()))
        .collect::<Result<_>>()?;
    if let Some(reference) = reference {
        let wanted = content_tokens(reference);
        if wanted.is_empty() {
            return Ok(0.0);
        }
        let mut have: BTreeSet<String> = BTreeSet::new();
        for value in &values {
            have.extend(tokens(value));
        }
        let covered = wanted.iter().filter(|t| have.contains(*t)).count();
        return Ok(covered as f64 / wanted.len() as f64);
    }
    let embedder = store.embedder();
    let query_vec = embedder.embed(&canonical(query))?;
    let mut sums = vec![0.0; query_vec.dims()];
    for value in &values {
        let v = embedder.embed(&canonical(value))?;
        for (slot, x) in sums.iter_mut().zip(v.values()) {
            *slot += x;
        }
    }
    let n = values.len() as f64;
    let centroid = EmbeddingVector::new(sums.iter().map(|s| s / n).collect())?;
    match cosine(&query_vec, &centroid) {
        Ok(sim) => Ok(sim.clamp(0.0, 1.0)),
        Err(MemoraError::ZeroVector) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// The literal overlap fraction: over all ordered value pairs of the
/// retrieved set, including each value against itself, the share whose
/// cosine exceeds delta. A singleton therefore scores 1.
pub fn redundancy(
    retrieved: &BTreeSet<EntryId>,
    store: &MemoryStore,
    delta_red: f64,
) -> Result<f64> {
    if retrieved.is_empty() {
        return Ok(0.0);
    }
    let embedder = store.embedder();
    let vectors: Vec<EmbeddingVector> = retrieved
        .iter()
        .map(|id| {
            let entry = store.entry(*id)?;
            embedder.embed(&canonical(&entry.value))
        })
        .collect::<Result<_>>()?;
    let mut hits = 0usize;
    for a in &vectors {
        for b in &vectors {
            if cosine(a, b)? > delta_red {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (vectors.len() * vectors.len()) as f64)
}

/// Budget consumption: the configured cost of every applied action.
pub fn trajectory_cost(traj: &Trajectory, cfg: &RetrievalConfig) -> f64 {
    traj.steps
        .iter()
        .filter(|step| step.applied)
        .map(|step| cfg.action_cost(&step.action) as f64)
        .sum()
}

/// Populate a trajectory's score components in one pass.
pub fn score_components(
    traj: &Trajectory,
    store: &MemoryStore,
    cfg: &RetrievalConfig,
    weights: &ScoreWeights,
    reference: Option<&str>,
) -> Result<ScoreComponents> {
    Ok(ScoreComponents {
        ground: groundedness(&traj.query, &traj.retrieved, store, reference)?,
        redund: redundancy(&traj.retrieved, store, weights.delta_red)?,
        cost: trajectory_cost(traj, cfg),
    })
}

/// J = w1 * ground - w2 * redund - w3 * cost.
pub fn score_trajectory(traj: &Trajectory, weights: &ScoreWeights) -> Result<f64> {
    let c = traj.components.ok_or(MemoraError::MissingComponents)?;
    Ok(weights.w1 * c.ground - weights.w2 * c.redund - weights.w3 * c.cost)
}

// ─── group-relative math ───

/// Zero-mean advantages within a group.
pub fn group_advantages(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(MemoraError::InvalidParameter(
            "advantage group must be non-empty".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MemoraError::NonFiniteValue);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(scores.iter().map(|s| s - mean).collect())
}

fn check_logprob(lp: f64) -> Result<()> {
    if !lp.is_finite() || lp > 0.0 {
        return Err(MemoraError::InvalidParameter(format!(
            "logprob must be finite and <= 0, got {lp}"
        )));
    }
    Ok(())
}

/// L = -sum_i A_i * sum_t logprob_current(i, t).
pub fn gr_loss(group: &[Trajectory], advantages: &[f64]) -> Result<f64> {
    if group.len() != advantages.len() {
        return Err(MemoraError::InvalidParameter(
            "advantage count must match group size".into(),
        ));
    }
    let mut loss = 0.0;
    for (traj, advantage) in group.iter().zip(advantages) {
        let mut sum = 0.0;
        for step in &traj.steps {
            check_logprob(step.logprob_current)?;
            sum += step.logprob_current;
        }
        loss -= advantage * sum;
    }
    Ok(loss)
}

/// KL(p || q) over the three action variants, with 0 * log 0 = 0. Mass
/// where the reference has none is a support violation.
pub fn kl_divergence(current: &ActionDist, reference: &ActionDist) -> Result<f64> {
    current.validate()?;
    reference.validate()?;
    let mut total = 0.0;
    for (p, q) in current.probs().iter().zip(reference.probs()) {
        if *p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Err(MemoraError::Distribution(
                "current policy puts mass where the reference has none".into(),
            ));
        }
        total += p * (p / q).ln();
    }
    Ok(total)
}

/// L + beta * sum over steps of KL(p_theta || p_ref). Every step must
/// carry both distributions.
pub fn kl_regularized_loss(
    group: &[Trajectory],
    advantages: &[f64],
    beta: f64,
) -> Result<f64> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(MemoraError::InvalidParameter(
            "beta must be nonnegative".into(),
        ));
    }
    let base = gr_loss(group, advantages)?;
    let mut kl_total = 0.0;
    for traj in group {
        for step in &traj.steps {
            let (current, reference) = match (&step.dist_current, &step.dist_ref) {
                (Some(c), Some(r)) => (c, r),
                _ => return Err(MemoraError::MissingComponents),
            };
            kl_total += kl_divergence(current, reference)?;
        }
    }
    Ok(base + beta * kl_total)
}

/// Run the retriever G times and collect trajectories. A deterministic
/// policy yields G structurally identical trajectories; stochastic or
/// mixed policies may diverge.
pub fn sample_group(
    store: &MemoryStore,
    query: &str,
    policy: &mut dyn RetrievalPolicy,
    cfg: &RetrievalConfig,
    group_size: usize,
) -> Result<Vec<Trajectory>> {
    if group_size == 0 {
        return Err(MemoraError::InvalidParameter(
            "group size must be >= 1".into(),
        ));
    }
    let mut group = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let result = policy_retrieve(store, query, policy, cfg)?;
        group.push(Trajectory::from_result(&result));
    }
    Ok(group)
}

/// Epsilon-mixture of two policies: each step flips a seeded coin and
/// delegates to the reference with probability epsilon.
pub struct MixedPolicy<P, R> {
    pub primary: P,
    pub reference: R,
    pub epsilon: f64,
    rng: rand_chacha::ChaCha8Rng,
}

impl<P, R> MixedPolicy<P, R> {
    pub fn new(primary: P, reference: R, epsilon: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(MemoraError::InvalidParameter(
                "epsilon must be in [0, 1]".into(),
            ));
        }
        Ok(Self {
            primary,
            reference,
            epsilon,
            rng: <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
        })
    }
}

impl<P: RetrievalPolicy, R: RetrievalPolicy> RetrievalPolicy for MixedPolicy<P, R> {
    fn decide(
        &mut self,
        store: &MemoryStore,
        state: &crate::retrieval::RetrievalState,
        cfg: &RetrievalConfig,
    ) -> Result<crate::retrieval::PolicyDecision> {
        if rand::Rng::gen_bool(&mut self.rng, self.epsilon) {
            self.reference.decide(store, state, cfg)
        } else {
            self.primary.decide(store, state, cfg)
        }
    }
}

// ─── export ───

#[derive(Serialize)]
struct ExportRecord<'a> {
    query: &'a str,
    end: TrajectoryEnd,
    steps: &'a [TrajectoryStep],
    components: &'a ScoreComponents,
    score: f64,
    advantage: f64,
}

/// One JSON record per trajectory, with its score and group-relative
/// advantage, for external training code.
pub fn export_group_jsonl(group: &[Trajectory], weights: &ScoreWeights) -> Result<String> {
    let scores: Vec<f64> = group
        .iter()
        .map(|t| score_trajectory(t, weights))
        .collect::<Result<_>>()?;
    let advantages = group_advantages(&scores)?;
    let mut out = String::new();
    for ((traj, score), advantage) in group.iter().zip(&scores).zip(&advantages) {
        let record = ExportRecord {
            query: &traj.query,
            end: traj.end,
            steps: &traj.steps,
            components: traj.components.as_ref().expect("scored above"),
            score: *score,
            advantage: *advantage,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

/// Convenience: sample, score, and export one group.
pub fn collect_group(
    store: &MemoryStore,
    query: &str,
    policy: &mut dyn RetrievalPolicy,
    cfg: &RetrievalConfig,
    weights: &ScoreWeights,
    group_size: usize,
    reference: Option<&str>,
) -> Result<Vec<Trajectory>> {
    let mut group = sample_group(store, query, policy, cfg, group_size)?;
    for traj in &mut group {
        traj.components = Some(score_components(traj, store, cfg, weights, reference)?);
    }
    Ok(group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedder, TestEmbedder};
    use crate::retrieval::{HeuristicPolicy, ScriptedPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn store() -> MemoryStore {
        MemoryStore::new(Arc::new(TestEmbedder::default()))
    }

    fn step(action: Action, logprob: f64) -> TrajectoryStep {
        TrajectoryStep {
            state_digest: "s".into(),
            action,
            logprob_current: logprob,
            logprob_ref: None,
            dist_current: None,
            dist_ref: None,
            applied: true,
        }
    }

    fn bare_trajectory(steps: Vec<TrajectoryStep>) -> Trajectory {
        Trajectory {
            query: "q".into(),
            steps,
            retrieved: BTreeSet::new(),
            end: TrajectoryEnd::Stopped,
            components: None,
        }
    }

    #[test]
    fn test_groundedness_of_empty_retrieval_is_zero() {
        let s = store();
        let g = groundedness("q", &BTreeSet::new(), &s, Some("answer")).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn test_full_reference_coverage_scores_one() {
        let mut s = store();
        let id = s
            .create_entry("jane hobby", "jane paints landscapes weekends", &[])
            .unwrap();
        let g = groundedness(
            "what does jane do",
            &BTreeSet::from([id]),
            &s,
            Some("jane paints landscapes"),
        )
        .unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_half_reference_coverage_scores_half() {
        // Oracle: reference has exactly two content tokens, one covered.
        let mut s = store();
        let id = s.create_entry("fact", "contains alpha only", &[]).unwrap();
        let g = groundedness("q", &BTreeSet::from([id]), &s, Some("alpha zebra")).unwrap();
        assert!((g - 0.5).abs() < 1e-12);
    }

    #[test]
    fn test_centroid_groundedness_matches_manual_computation() {
        let mut s = store();
        let a = s.create_entry("one", "red apples ripen", &[]).unwrap();
        let b = s.create_entry("two", "green pears ripen", &[]).unwrap();
        let got = groundedness("ripen fruit", &BTreeSet::from([a, b]), &s, None).unwrap();
        let embedder = TestEmbedder::default();
        let q = embedder.embed("ripen fruit").unwrap();
        let va = embedder.embed("red apples ripen").unwrap();
        let vb = embedder.embed("green pears ripen").unwrap();
        let mean: Vec<f64> = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| (x + y) / 2.0)
            .collect();
        let want = cosine(&q, &EmbeddingVector::new(mean).unwrap())
            .unwrap()
            .clamp(0.0, 1.0);
        assert!((got - want).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn test_singleton_redundancy_is_one() {
        let mut s = store();
        let id = s.create_entry("fact", "some value text", &[]).unwrap();
        let r = redundancy(&BTreeSet::from([id]), &s, 0.85).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn test_two_orthogonal_values_score_half() {
        let mut s = store();
        let a = s.create_entry("one", "alpha beta", &[]).unwrap();
        let b = s.create_entry("two", "gamma delta", &[]).unwrap();
        let embedder = TestEmbedder::default();
        let va = embedder.embed("alpha beta").unwrap();
        let vb = embedder.embed("gamma delta").unwrap();
        assert!(cosine(&va, &vb).unwrap() < 0.5, "precondition: orthogonal-ish");
        let r = redundancy(&BTreeSet::from([a, b]), &s, 0.5).unwrap();
        assert_eq!(r, 0.5, "only the two diagonal pairs count");
    }

    #[test]
    fn test_redundancy_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let mut s = store();
        let mut ids = BTreeSet::new();
        let mut values = Vec::new();
        for i in 0..5 {
            let value = format!(
                "v{} w{} w{}",
                i,
                rng.gen_range(0..4),
                rng.gen_range(0..4)
            );
            ids.insert(s.create_entry(&format!("e{i}"), &value, &[]).unwrap());
            values.push(value);
        }
        let delta = 0.3;
        let got = redundancy(&ids, &s, delta).unwrap();
        let embedder = TestEmbedder::default();
        let vecs: Vec<EmbeddingVector> = values
            .iter()
            .map(|v| embedder.embed(&canonical(v)).unwrap())
            .collect();
        let mut hits = 0;
        for a in &vecs {
            for b in &vecs {
                if cosine(a, b).unwrap() > delta {
                    hits += 1;
                }
            }
        }
        let want = hits as f64 / 25.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn test_redundancy_bounded_by_diagonal_floor_and_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..10 {
            let mut s = store();
            let mut ids = BTreeSet::new();
            let n = rng.gen_range(1..=6);
            for i in 0..n {
                let value = format!("w{} w{} uniq{i}", rng.gen_range(0..5), rng.gen_range(0..5));
                ids.insert(s.create_entry(&format!("e{i}"), &value, &[]).unwrap());
            }
            let r = redundancy(&ids, &s, 0.6).unwrap();
            assert!(r >= 1.0 / n as f64 - 1e-12, "diagonal floor");
            assert!(r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn test_trajectory_cost_arithmetic() {
        let cfg = RetrievalConfig::default();
        let only_stop = bare_trajectory(vec![step(Action::Stop, 0.0)]);
        assert_eq!(trajectory_cost(&only_stop, &cfg), 0.0);
        let two_expands = bare_trajectory(vec![
            step(Action::Expand { selected: vec![EntryId(1)] }, 0.0),
            step(Action::Expand { selected: vec![EntryId(2)] }, 0.0),
            step(Action::Stop, 0.0),
        ]);
        assert_eq!(trajectory_cost(&two_expands, &cfg), 2.0);
    }

    #[test]
    fn test_trajectory_cost_matches_retrieval_budget_spent() {
        let mut s = store();
        let a = s.create_entry("alpha topic", "value a", &[]).unwrap();
        let b = s.create_entry("alpha other", "value b", &[]).unwrap();
        let cfg = RetrievalConfig::default();
        let mut policy = ScriptedPolicy::new(vec![
            Action::Expand { selected: vec![a] },
            Action::Expand { selected: vec![b] },
            Action::Stop,
        ]);
        let result = policy_retrieve(&s, "alpha topic other", &mut policy, &cfg).unwrap();
        let traj = Trajectory::from_result(&result);
        assert_eq!(trajectory_cost(&traj, &cfg), result.budget_spent as f64);
    }

    #[test]
    fn test_score_weighted_combination() {
        let mut traj = bare_trajectory(vec![]);
        traj.components = Some(ScoreComponents {
            ground: 0.8,
            redund: 0.5,
            cost: 2.0,
        });
        let weights = ScoreWeights {
            w1: 1.0,
            w2: 0.5,
            w3: 0.1,
            ..Default::default()
        };
        let j = score_trajectory(&traj, &weights).unwrap();
        assert!((j - 0.35).abs() < 1e-12);
    }

    #[test]
    fn test_zero_weights_score_zero() {
        let mut traj = bare_trajectory(vec![]);
        traj.components = Some(ScoreComponents {
            ground: 0.9,
            redund: 0.4,
            cost: 7.0,
        });
        let weights = ScoreWeights {
            w1: 0.0,
            w2: 0.0,
            w3: 0.0,
            ..Default::default()
        };
        assert_eq!(score_trajectory(&traj, &weights).unwrap(), 0.0);
    }

    #[test]
    fn test_unscored_trajectory_is_rejected() {
        let traj = bare_trajectory(vec![]);
        assert!(matches!(
            score_trajectory(&traj, &ScoreWeights::default()),
            Err(MemoraError::MissingComponents)
        ));
    }

    #[test]
    fn test_advantage_arithmetic() {
        assert_eq!(group_advantages(&[5.0]).unwrap(), vec![0.0]);
        assert_eq!(
            group_advantages(&[1.0, 2.0, 3.0]).unwrap(),
            vec![-1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn test_advantages_zero_mean_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..50 {
            let g = rng.gen_range(1..=20);
            let scores: Vec<f64> = (0..g).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let adv = group_advantages(&scores).unwrap();
            let total: f64 = adv.iter().sum();
            assert!(total.abs() <= 1e-9 * g as f64);
        }
    }

    #[test]
    fn test_advantages_are_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let scores: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 37.5).collect();
        let a = group_advantages(&scores).unwrap();
        let b = group_advantages(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn test_gr_loss_zero_when_advantages_zero() {
        let group = vec![bare_trajectory(vec![step(Action::Stop, -0.7)])];
        assert_eq!(gr_loss(&group, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn test_gr_loss_matches_hand_expansion() {
        // Trajectory 1: logprobs -0.1, -0.2; trajectory 2: logprob -0.5.
        // Scores 2 and 0 give advantages +1 and -1, so
        // L = -(1 * (-0.1 - 0.2) + (-1) * (-0.5)) = -0.2.
        let t1 = bare_trajectory(vec![
            step(Action::Refine { query: "a".into() }, -0.1),
            step(Action::Stop, -0.2),
        ]);
        let t2 = bare_trajectory(vec![step(Action::Stop, -0.5)]);
        let advantages = group_advantages(&[2.0, 0.0]).unwrap();
        assert_eq!(advantages, vec![1.0, -1.0]);
        let got = gr_loss(&[t1, t2], &advantages).unwrap();
        assert!((got - -0.2).abs() < 1e-12);
        assert!((got - 0.0).abs() > 1e-9, "sanity: not trivially zero");
    }

    #[test]
    fn test_positive_logprob_is_rejected() {
        let group = vec![bare_trajectory(vec![step(Action::Stop, 0.5)])];
        assert!(gr_loss(&group, &[0.0]).is_err());
    }

    #[test]
    fn test_kl_zero_for_identical_distributions() {
        let d = ActionDist::new(0.2, 0.3, 0.5).unwrap();
        assert!(kl_divergence(&d, &d).unwrap().abs() < 1e-12);
    }

    #[test]
    fn test_kl_hand_computed_case() {
        let p = ActionDist::new(0.5, 0.5, 0.0).unwrap();
        let q = ActionDist::new(0.25, 0.75, 0.0).unwrap();
        let want = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&p, &q).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn test_kl_support_violation_is_an_error() {
        let p = ActionDist::new(0.5, 0.5, 0.0).unwrap();
        let q = ActionDist::new(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(MemoraError::Distribution(_))
        ));
    }

    #[test]
    fn test_unnormalized_distribution_is_rejected() {
        assert!(ActionDist::new(0.5, 0.5, 0.5).is_err());
        assert!(ActionDist::new(-0.1, 0.6, 0.5).is_err());
    }

    #[test]
    fn test_kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..1.0)).collect();
            let (ps, qs) = raw.split_at(3);
            let pt: f64 = ps.iter().sum();
            let qt: f64 = qs.iter().sum();
            let p = ActionDist::new(ps[0] / pt, ps[1] / pt, ps[2] / pt).unwrap();
            let q = ActionDist::new(qs[0] / qt, qs[1] / qt, qs[2] / qt).unwrap();
            assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        }
    }

    fn with_dists(mut traj: Trajectory, current: ActionDist, reference: ActionDist) -> Trajectory {
        for step in &mut traj.steps {
            step.dist_current = Some(current);
            step.dist_ref = Some(reference);
        }
        traj
    }

    #[test]
    fn test_kl_loss_reduces_to_gr_loss() {
        let d = ActionDist::new(0.3, 0.3, 0.4).unwrap();
        let group = vec![
            with_dists(
                bare_trajectory(vec![step(Action::Stop, -0.4)]),
                d,
                d,
            ),
            with_dists(
                bare_trajectory(vec![step(Action::Stop, -0.9)]),
                d,
                d,
            ),
        ];
        let advantages = group_advantages(&[1.0, 3.0]).unwrap();
        let base = gr_loss(&group, &advantages).unwrap();
        // Identical distributions: any beta adds exactly zero.
        let total = kl_regularized_loss(&group, &advantages, 0.7).unwrap();
        assert!((total - base).abs() < 1e-12);
        // Beta zero: KL never enters.
        let p = ActionDist::new(0.5, 0.5, 0.0).unwrap();
        let q = ActionDist::new(0.25, 0.75, 0.0).unwrap();
        let skewed: Vec<Trajectory> = group
            .iter()
            .map(|t| with_dists(t.clone(), p, q))
            .collect();
        let at_zero = kl_regularized_loss(&skewed, &advantages, 0.0).unwrap();
        assert!((at_zero - base).abs() < 1e-12);
        let kl_step = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
        let at_beta = kl_regularized_loss(&skewed, &advantages, 0.7).unwrap();
        assert!((at_beta - (base + 0.7 * 2.0 * kl_step)).abs() < 1e-12);
    }

    #[test]
    fn test_missing_distributions_are_rejected() {
        let group = vec![bare_trajectory(vec![step(Action::Stop, -0.4)])];
        assert!(matches!(
            kl_regularized_loss(&group, &[0.0], 0.5),
            Err(MemoraError::MissingComponents)
        ));
    }

    #[test]
    fn test_deterministic_policy_yields_identical_group() {
        let mut s = store();
        s.create_entry("alpha topic", "value alpha", &[]).unwrap();
        s.create_entry("alpha sibling", "value sibling", &[]).unwrap();
        let cfg = RetrievalConfig::default();
        let mut policy = HeuristicPolicy::default();
        let group = sample_group(&s, "alpha topic", &mut policy, &cfg, 3).unwrap();
        assert_eq!(group.len(), 3);
        assert_eq!(group[0], group[1]);
        assert_eq!(group[1], group[2]);
        assert!(!group[0].retrieved.is_empty());
    }

    #[test]
    fn test_group_size_zero_is_an_error() {
        let s = store();
        let mut policy = HeuristicPolicy::default();
        assert!(sample_group(&s, "q", &mut policy, &RetrievalConfig::default(), 0).is_err());
    }

    #[test]
    fn test_full_mixture_with_stop_reference_stops_immediately() {
        let mut s = store();
        s.create_entry("alpha topic", "value alpha", &[]).unwrap();
        let cfg = RetrievalConfig::default();
        let mut policy = MixedPolicy::new(
            HeuristicPolicy::default(),
            ScriptedPolicy::new(vec![]),
            1.0,
            9,
        )
        .unwrap();
        let group = sample_group(&s, "alpha topic", &mut policy, &cfg, 4).unwrap();
        for traj in &group {
            assert_eq!(traj.steps.len(), 1);
            assert_eq!(traj.steps[0].action, Action::Stop);
        }
    }

    #[test]
    fn test_export_emits_parseable_records_with_advantages() {
        let mut s = store();
        s.create_entry("alpha topic", "value alpha", &[]).unwrap();
        let cfg = RetrievalConfig::default();
        let weights = ScoreWeights::default();
        let mut policy = HeuristicPolicy::default();
        let group = collect_group(&s, "alpha topic", &mut policy, &cfg, &weights, 3, None).unwrap();
        let jsonl = export_group_jsonl(&group, &weights).unwrap();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 3);
        let mut advantage_total = 0.0;
        for line in lines {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(value["score"].is_number());
            assert!(value["components"]["ground"].is_number());
            advantage_total += value["advantage"].as_f64().unwrap();
        }
        assert!(advantage_total.abs() < 1e-9);
    }
}
