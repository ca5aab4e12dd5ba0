//! Steady-state interactive GA: fitness from votes, activation trigger,
//! tournament selection, breeding and worst-individual replacement.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{CampaignConfig, InitMode, Violation};
use crate::domain::{CampaignId, ConceptId, ConceptStatus, GameConcept, Origin, PopulationState, Section, VoterToken, Vote};
use crate::operators::{parse_concept, Draft, OperatorBackend, OperatorError, Operators};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("population of {size} is smaller than tournament size {k}")]
    PopulationTooSmall { size: usize, k: usize },
    #[error("seeded mode needs {expected} seed concepts, found {found}")]
    SeedCountMismatch { expected: usize, found: usize },
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub concept_id: ConceptId,
    pub positives: u64,
    pub neutrals: u64,
    pub negatives: u64,
    pub score: f64,
    pub eval_count: u64,
}

impl FitnessReport {
    pub fn empty(concept_id: ConceptId) -> Self {
        compute_fitness_from_values(concept_id, [])
    }
}

/// Fitness over the deduplicated votes of one concept.
pub fn compute_fitness(concept_id: ConceptId, votes: &BTreeMap<VoterToken, Vote>) -> FitnessReport {
    compute_fitness_from_values(concept_id, votes.values().copied())
}

pub fn compute_fitness_from_values(concept_id: ConceptId, votes: impl IntoIterator<Item = Vote>) -> FitnessReport {
    let (mut positives, mut neutrals, mut negatives) = (0u64, 0u64, 0u64);
    for v in votes {
        match v {
            Vote::Positive => positives += 1,
            Vote::Neutral => neutrals += 1,
            Vote::Negative => negatives += 1,
        }
    }
    let eval_count = positives + neutrals + negatives;
    let score = (positives as f64 - negatives as f64) / eval_count.max(1) as f64;
    FitnessReport { concept_id, positives, neutrals, negatives, score, eval_count }
}

/// True once enough new votes arrived and every published member has been seen enough.
pub fn should_activate(
    state: &PopulationState,
    published: &BTreeSet<ConceptId>,
    fitness: &BTreeMap<ConceptId, FitnessReport>,
    trigger_new_evals: u64,
    min_evals: u32,
) -> bool {
    state.evals_since_last_activation >= trigger_new_evals
        && state
            .members
            .iter()
            .filter(|id| published.contains(*id))
            .all(|id| fitness.get(id).map_or(0, |f| f.eval_count) >= u64::from(min_evals))
}

/// What selection and replacement need to know about a member.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: ConceptId,
    pub score: f64,
    pub eval_count: u64,
    pub created_at_iteration: u64,
    /// Creation order within the campaign; separates members born in the same iteration.
    pub ordinal: u64,
}

impl Candidate {
    pub fn new(concept: &GameConcept, fitness: &FitnessReport, ordinal: u64) -> Self {
        Self {
            id: concept.concept_id.clone(),
            score: fitness.score,
            eval_count: fitness.eval_count,
            created_at_iteration: concept.created_at_iteration,
            ordinal,
        }
    }
}

/// Selection preference without the random tie-break: `Greater` means `a` wins.
pub fn selection_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(b.eval_count.cmp(&a.eval_count))
        .then(a.created_at_iteration.cmp(&b.created_at_iteration))
}

/// Deletion preference: `Less` means `a` is removed first.
pub fn deletion_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.created_at_iteration.cmp(&b.created_at_iteration))
        .then(a.ordinal.cmp(&b.ordinal))
}

/// Winner of an already drawn sample. Remaining ties go to `rng`.
pub fn select_from_sample<'a, R: Rng + ?Sized>(sample: &[&'a Candidate], rng: &mut R) -> Option<&'a Candidate> {
    let best = sample.iter().copied().max_by(|a, b| selection_order(a, b))?;
    let tied: Vec<&Candidate> = sample.iter().copied().filter(|c| selection_order(c, best) == Ordering::Equal).collect();
    if tied.len() == 1 {
        Some(best)
    } else {
        tied.choose(rng).copied()
    }
}

/// Draws `k` distinct members uniformly and returns the fittest.
pub fn tournament_select<'a, R: Rng + ?Sized>(
    members: &'a [Candidate],
    k: usize,
    rng: &mut R,
) -> Result<&'a Candidate, EngineError> {
    if k < 2 || members.len() < k {
        return Err(EngineError::PopulationTooSmall { size: members.len(), k });
    }
    let sample: Vec<&Candidate> = index::sample(rng, members.len(), k).iter().map(|i| &members[i]).collect();
    Ok(select_from_sample(&sample, rng).expect("sample is non-empty"))
}

/// The member removed to make room for an offspring.
pub fn removal_target(members: &[Candidate], min_evals: u32) -> Option<&Candidate> {
    let eligible: Vec<&Candidate> = members.iter().filter(|c| c.eval_count >= u64::from(min_evals)).collect();
    let pool: Vec<&Candidate> = if eligible.is_empty() { members.iter().collect() } else { eligible };
    pool.into_iter().min_by(|a, b| deletion_order(a, b))
}

/// Inserts `offspring` and removes the worst eligible existing member.
/// `members` describes the current population; the offspring is never a removal candidate.
pub fn replace_worst(
    state: &PopulationState,
    members: &[Candidate],
    offspring: &ConceptId,
    min_evals: u32,
) -> (PopulationState, ConceptId) {
    debug_assert!(!state.members.contains(offspring));
    let current: Vec<Candidate> = members.iter().filter(|c| state.members.contains(&c.id)).cloned().collect();
    let removed = removal_target(&current, min_evals).expect("population is non-empty").id.clone();
    let mut next = state.clone();
    next.members.retain(|m| *m != removed);
    next.members.push(offspring.clone());
    (next, removed)
}

/// Deterministic sub-seed for a labeled stream.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Generator used by activation `iteration` (1-based).
pub fn activation_rng(base: u64, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, "activation", iteration))
}

/// Opaque fingerprint of a generator's position.
pub fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Identity of a concept about to be created.
#[derive(Debug, Clone)]
pub struct Birth {
    pub concept_id: ConceptId,
    pub campaign_id: CampaignId,
    pub iteration: u64,
}

impl Birth {
    fn concept(self, draft: Draft, origin: Origin, parent_ids: Vec<ConceptId>, mutation_focus: Option<String>) -> GameConcept {
        GameConcept {
            concept_id: self.concept_id,
            campaign_id: self.campaign_id,
            body: draft.body,
            sections: draft.sections,
            origin,
            parent_ids,
            mutation_focus,
            created_at_iteration: self.iteration,
            status: ConceptStatus::ActiveUnpublished,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bred {
    pub concept: GameConcept,
    pub recombination_applied: bool,
}

/// One offspring: recombine with probability `recombination_prob` (when a
/// distinct second parent is available), then always mutate.
#[allow(clippy::too_many_arguments)]
pub fn breed<R: Rng + ?Sized>(
    a: &GameConcept,
    b: Option<&GameConcept>,
    recombination_prob: f64,
    ops: &Operators,
    backend: &dyn OperatorBackend,
    rng: &mut R,
    birth: Birth,
) -> Result<Bred, EngineError> {
    let coin = rng.random_bool(recombination_prob.clamp(0.0, 1.0));
    let b = b.filter(|b| b.concept_id != a.concept_id);
    if coin && b.is_none() {
        log::warn!("recombination drawn without a distinct second parent; mutating {} only", a.concept_id);
    }
    let focus = ops.settings().focus_list.choose(rng).cloned().unwrap_or_default();
    let (concept, recombination_applied) = match (coin, b) {
        (true, Some(b)) => {
            let child = ops.recombine(backend, a.into(), b.into(), rng)?;
            let mutated = ops.mutate(backend, child.individual(), &focus, &[&a.body, &b.body], rng)?;
            let parents = vec![a.concept_id.clone(), b.concept_id.clone()];
            (birth.concept(mutated, Origin::Recombination, parents, Some(focus)), true)
        }
        _ => {
            let mutated = ops.mutate(backend, a.into(), &focus, &[], rng)?;
            (birth.concept(mutated, Origin::Mutation, vec![a.concept_id.clone()], Some(focus)), false)
        }
    };
    Ok(Bred { concept, recombination_applied })
}

/// Builds the initial population with ordinals `1..=population_size`.
pub fn initialize_population<R: Rng + ?Sized>(
    config: &CampaignConfig,
    campaign_id: &CampaignId,
    ops: &Operators,
    backend: &dyn OperatorBackend,
    rng: &mut R,
) -> Result<(PopulationState, Vec<GameConcept>), EngineError> {
    let violations = crate::config::validate_config(config);
    if !violations.is_empty() {
        return Err(EngineError::InvalidConfig(violations));
    }
    let n = config.population_size;
    let seeds: Vec<&String> = match config.init_mode {
        InitMode::Random => Vec::new(),
        InitMode::Seeded => {
            if config.seed_concepts.len() != n {
                return Err(EngineError::SeedCountMismatch { expected: n, found: config.seed_concepts.len() });
            }
            config.seed_concepts.iter().collect()
        }
        InitMode::Mixed => config.seed_concepts.iter().take(n / 2).collect(),
    };
    let mut concepts = Vec::with_capacity(n);
    for (i, text) in seeds.iter().enumerate() {
        let birth = birth_for(campaign_id, i as u64 + 1, 0);
        let sections = parse_concept(text, ops.schema())
            .unwrap_or_else(|_| vec![Section::new(ops.schema().get(1).map_or("game concept", |s| s.label.as_str()), text.trim(), None)]);
        let draft = Draft { body: text.trim().to_string(), sections };
        concepts.push(birth.concept(draft, Origin::HumanSeed, Vec::new(), None));
    }
    for i in seeds.len()..n {
        let (draft, interpretation) = ops.random(backend, rng)?;
        if let Some(interp) = interpretation {
            log::info!("initial concept {} drew interpretation: {interp}", i + 1);
        }
        concepts.push(birth_for(campaign_id, i as u64 + 1, 0).concept(draft, Origin::LlmRandom, Vec::new(), None));
    }
    let state = PopulationState {
        members: concepts.iter().map(|c| c.concept_id.clone()).collect(),
        iteration: 0,
        evals_since_last_activation: 0,
    };
    Ok((state, concepts))
}

fn birth_for(campaign_id: &CampaignId, ordinal: u64, iteration: u64) -> Birth {
    Birth { concept_id: ConceptId::for_ordinal(campaign_id, ordinal), campaign_id: campaign_id.clone(), iteration }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub parents: Vec<ConceptId>,
    pub recombination_applied: bool,
    pub mutation_focus: String,
    pub offspring_id: ConceptId,
    pub removed_id: ConceptId,
    pub rng_state_digest: String,
}

/// A member as the engine sees it during an activation.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub concept: &'a GameConcept,
    pub fitness: &'a FitnessReport,
    pub ordinal: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub record: IterationRecord,
    pub offspring: GameConcept,
    pub state: PopulationState,
}

/// One select, breed, replace cycle. Pure with respect to `state`: on error nothing changes.
#[allow(clippy::too_many_arguments)]
pub fn run_iteration(
    state: &PopulationState,
    members: &[Member<'_>],
    config: &CampaignConfig,
    ops: &Operators,
    backend: &dyn OperatorBackend,
    rng: &mut ChaCha8Rng,
    offspring_id: ConceptId,
    campaign_id: &CampaignId,
) -> Result<Activation, EngineError> {
    let rng_state_digest = rng_digest(rng);
    let candidates: Vec<Candidate> = members.iter().map(|m| Candidate::new(m.concept, m.fitness, m.ordinal)).collect();
    let by_id: BTreeMap<&ConceptId, &GameConcept> = members.iter().map(|m| (&m.concept.concept_id, m.concept)).collect();

    let k = config.tournament_size;
    let a = tournament_select(&candidates, k, rng)?.id.clone();
    let mut b = None;
    for _ in 0..config.population_size.max(1) {
        let pick = tournament_select(&candidates, k, rng)?;
        if pick.id != a {
            b = Some(pick.id.clone());
            break;
        }
    }
    let iteration = state.iteration + 1;
    let birth = Birth { concept_id: offspring_id.clone(), campaign_id: campaign_id.clone(), iteration };
    let bred = breed(by_id[&a], b.as_ref().map(|id| by_id[id]), config.recombination_prob, ops, backend, rng, birth)?;

    let (mut next, removed_id) = replace_worst(state, &candidates, &offspring_id, config.min_evals_per_published);
    next.iteration = iteration;
    next.evals_since_last_activation = 0;
    let record = IterationRecord {
        iteration,
        parents: bred.concept.parent_ids.clone(),
        recombination_applied: bred.recombination_applied,
        mutation_focus: bred.concept.mutation_focus.clone().unwrap_or_default(),
        offspring_id,
        removed_id,
        rng_state_digest,
    };
    Ok(Activation { record, offspring: bred.concept, state: next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TemplatePreset;
    use crate::operators::{MockBackend, OperatorSettings, TemplateSet};

    fn cand(id: &str, score: f64, evals: u64, iter: u64, ordinal: u64) -> Candidate {
        Candidate { id: ConceptId::new(id), score, eval_count: evals, created_at_iteration: iter, ordinal }
    }

    fn ops(config: &CampaignConfig) -> Operators {
        Operators::new(TemplateSet::builtin(TemplatePreset::Minimalist), OperatorSettings::from_config(config))
    }

    #[test]
    fn fitness_examples() {
        let f = compute_fitness_from_values(
            ConceptId::new("c"),
            [Vote::Positive, Vote::Positive, Vote::Positive, Vote::Neutral, Vote::Negative],
        );
        assert_eq!((f.score, f.eval_count), (0.4, 5));
        let f = FitnessReport::empty(ConceptId::new("c"));
        assert_eq!((f.score, f.eval_count), (0.0, 0));
        let f = compute_fitness_from_values(ConceptId::new("c"), [Vote::Neutral; 5]);
        assert_eq!((f.score, f.eval_count), (0.0, 5));
    }

    #[test]
    fn trigger_examples() {
        let ids: Vec<ConceptId> = ["a", "b"].map(ConceptId::new).to_vec();
        let state = |n| PopulationState { members: ids.clone(), iteration: 0, evals_since_last_activation: n };
        let published: BTreeSet<_> = ids.iter().cloned().collect();
        let voted = |count_b| {
            BTreeMap::from([
                (ids[0].clone(), FitnessReport { eval_count: 3, ..FitnessReport::empty(ids[0].clone()) }),
                (ids[1].clone(), FitnessReport { eval_count: count_b, ..FitnessReport::empty(ids[1].clone()) }),
            ])
        };
        assert!(should_activate(&state(25), &published, &voted(1), 25, 1));
        assert!(!should_activate(&state(24), &published, &voted(1), 25, 1));
        assert!(!should_activate(&state(30), &published, &voted(0), 25, 1));
        assert!(should_activate(&state(30), &BTreeSet::from([ids[0].clone()]), &voted(0), 25, 1));
    }

    #[test]
    fn tournament_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pop = [cand("A", 0.4, 5, 0, 1), cand("B", -0.2, 5, 0, 2)];
        assert_eq!(tournament_select(&pop, 2, &mut rng).unwrap().id.as_str(), "A");
        let pop = [cand("A", 0.4, 5, 0, 1), cand("A'", 0.4, 3, 0, 2)];
        assert_eq!(tournament_select(&pop, 2, &mut rng).unwrap().id.as_str(), "A'");
        let pop = [cand("old", 0.4, 3, 0, 1), cand("new", 0.4, 3, 2, 2)];
        assert_eq!(tournament_select(&pop, 2, &mut rng).unwrap().id.as_str(), "new");
        assert!(matches!(tournament_select(&pop[..1], 2, &mut rng), Err(EngineError::PopulationTooSmall { .. })));
    }

    #[test]
    fn full_ties_use_rng() {
        let pop = [cand("x", 0.0, 0, 0, 1), cand("y", 0.0, 0, 0, 2)];
        let mut seen = BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            seen.insert(tournament_select(&pop, 2, &mut rng).unwrap().id.clone());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn replacement_examples() {
        let state = |ids: &[&str]| PopulationState { members: ids.iter().map(|s| ConceptId::new(*s)).collect(), ..Default::default() };
        let pop = [cand("A", 0.4, 2, 0, 1), cand("B", 0.0, 2, 0, 2), cand("C", -0.5, 2, 0, 3)];
        let (next, removed) = replace_worst(&state(&["A", "B", "C"]), &pop, &ConceptId::new("D"), 1);
        assert_eq!(removed.as_str(), "C");
        assert_eq!(next.members, ["A", "B", "D"].map(ConceptId::new));

        let pop = [cand("A", -0.2, 2, 0, 1), cand("B", -0.2, 2, 3, 2)];
        assert_eq!(replace_worst(&state(&["A", "B"]), &pop, &ConceptId::new("D"), 1).1.as_str(), "A");

        let pop = [cand("A", 0.0, 0, 0, 1), cand("B", 0.0, 0, 0, 2), cand("C", 0.0, 0, 1, 3)];
        assert_eq!(replace_worst(&state(&["A", "B", "C"]), &pop, &ConceptId::new("D"), 1).1.as_str(), "A");

        // Unvoted members are protected while someone is eligible.
        let pop = [cand("A", 0.5, 1, 0, 1), cand("B", 0.0, 0, 1, 2)];
        assert_eq!(replace_worst(&state(&["A", "B"]), &pop, &ConceptId::new("D"), 1).1.as_str(), "A");
    }

    #[test]
    fn init_modes() {
        let campaign = CampaignId::new("t");
        let mut config = CampaignConfig::default();
        let schema = TemplateSet::builtin(TemplatePreset::Minimalist).schema().to_vec();
        let mock = MockBackend::new(1, schema);
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        let (state, concepts) = initialize_population(&config, &campaign, &ops(&config), &mock, &mut rng).unwrap();
        assert_eq!(state.members.len(), 10);
        assert!(concepts.iter().all(|c| c.origin == Origin::LlmRandom && c.violations().is_empty()));

        config.init_mode = InitMode::Mixed;
        config.seed_concepts = (0..3).map(|i| format!("Seed idea {i}")).collect();
        let (_, concepts) = initialize_population(&config, &campaign, &ops(&config), &mock, &mut rng).unwrap();
        let seeds = concepts.iter().filter(|c| c.origin == Origin::HumanSeed).count();
        assert_eq!((seeds, concepts.len() - seeds), (3, 7));

        config.init_mode = InitMode::Seeded;
        let err = initialize_population(&config, &campaign, &ops(&config), &mock, &mut rng).unwrap_err();
        assert_eq!(err, EngineError::SeedCountMismatch { expected: 10, found: 3 });
    }

    #[test]
    fn seeded_mode_makes_no_backend_calls() {
        struct Refuse;
        impl OperatorBackend for Refuse {
            fn name(&self) -> &str {
                "refuse"
            }
            fn complete(&self, _: &crate::operators::CompletionRequest) -> Result<crate::operators::Completion, crate::operators::BackendError> {
                panic!("backend called")
            }
        }
        let config = CampaignConfig {
            init_mode: InitMode::Seeded,
            seed_concepts: (0..10).map(|i| format!("Seed {i}")).collect(),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, concepts) = initialize_population(&config, &CampaignId::new("s"), &ops(&config), &Refuse, &mut rng).unwrap();
        assert!(concepts.iter().all(|c| c.origin == Origin::HumanSeed));
    }

    #[test]
    fn breed_branches() {
        let config = CampaignConfig::default();
        let o = ops(&config);
        let mock = MockBackend::new(2, o.schema().to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, init) = initialize_population(&config, &CampaignId::new("b"), &o, &mock, &mut rng).unwrap();
        let birth = || Birth { concept_id: ConceptId::new("child"), campaign_id: CampaignId::new("b"), iteration: 1 };
        let bred = breed(&init[0], Some(&init[1]), 1.0, &o, &mock, &mut rng, birth()).unwrap();
        assert!(bred.recombination_applied);
        assert_eq!(bred.concept.parent_ids, [init[0].concept_id.clone(), init[1].concept_id.clone()]);
        assert!(bred.concept.violations().is_empty());
        let bred = breed(&init[0], Some(&init[1]), 0.0, &o, &mock, &mut rng, birth()).unwrap();
        assert!(!bred.recombination_applied);
        assert_eq!(bred.concept.parent_ids, [init[0].concept_id.clone()]);
        assert_eq!(bred.concept.origin, Origin::Mutation);
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(1, "activation", 1), derive_seed(1, "activation", 1));
        assert_ne!(derive_seed(1, "activation", 1), derive_seed(1, "activation", 2));
        assert_eq!(rng_digest(&activation_rng(5, 1)), rng_digest(&activation_rng(5, 1)));
    }
}
