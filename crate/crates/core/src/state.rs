//! Campaign state as a fold over the event log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::CampaignConfig;
use crate::domain::{CampaignId, ConceptId, ConceptStatus, GameConcept, PopulationState, Vote, VoterToken};
use crate::engine::{compute_fitness_from_values, Candidate, FitnessReport, IterationRecord};
use crate::store::{Event, EventBody, StoreError, VoteOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub concept: GameConcept,
    pub ordinal: u64,
    pub created_at: DateTime<Utc>,
    pub published_at: Option<DateTime<Utc>>,
    pub channel_ref: Option<String>,
    pub retired_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub concept_id: ConceptId,
    pub queued_at: DateTime<Utc>,
}

/// Aggregate counts for one concept. Never carries voter identities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub positives: u64,
    pub neutrals: u64,
    pub negatives: u64,
}

impl VoteCounts {
    pub fn total(&self) -> u64 {
        self.positives + self.neutrals + self.negatives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum VoteRejection {
    #[error("unknown concept")]
    UnknownConcept,
    #[error("concept is closed for evaluation")]
    ConceptClosed,
    #[error("concept is not published yet")]
    NotPublished,
    #[error("campaign is not running")]
    CampaignNotRunning,
    #[error("no vote to retract")]
    NothingToRetract,
}

impl VoteRejection {
    pub fn code(self) -> &'static str {
        match self {
            VoteRejection::UnknownConcept => "unknown_concept",
            VoteRejection::ConceptClosed => "concept_closed",
            VoteRejection::NotPublished => "not_published",
            VoteRejection::CampaignNotRunning => "campaign_not_running",
            VoteRejection::NothingToRetract => "nothing_to_retract",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {seq} cannot be applied: {reason}")]
pub struct ApplyError {
    pub seq: u64,
    pub reason: String,
}

/// Everything the log determines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub campaign_id: Option<CampaignId>,
    pub config: Option<CampaignConfig>,
    pub voter_salt: String,
    pub running: bool,
    pub concepts: BTreeMap<ConceptId, ConceptRecord>,
    /// Latest value per voter; `None` after a retraction.
    pub votes: BTreeMap<ConceptId, BTreeMap<VoterToken, Option<Vote>>>,
    pub population: PopulationState,
    pub iterations: Vec<IterationRecord>,
    pub queue: Vec<QueueEntry>,
    pub next_ordinal: u64,
    pub last_seq: u64,
    pub accepted_votes: u64,
    pub overwritten_votes: u64,
}

/// Point-in-time view of what the engine consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub campaign_id: Option<CampaignId>,
    pub as_of_seq: u64,
    pub population: PopulationState,
    pub published: BTreeSet<ConceptId>,
    pub fitness: BTreeMap<ConceptId, FitnessReport>,
}

/// One row of the published listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublishedRow<'a> {
    pub concept: &'a GameConcept,
    pub counts: VoteCounts,
}

/// Folds a whole log. Any inconsistency is reported as a corrupt log at that seq.
pub fn replay(events: &[Event]) -> Result<CampaignState, StoreError> {
    let mut state = CampaignState::default();
    for e in events {
        state.apply(e).map_err(|err| StoreError::CorruptLog { seq: err.seq, reason: err.reason })?;
    }
    Ok(state)
}

impl CampaignState {
    pub fn apply(&mut self, event: &Event) -> Result<(), ApplyError> {
        let fail = |reason: String| ApplyError { seq: event.seq, reason };
        if event.seq != self.last_seq + 1 {
            return Err(fail(format!("expected seq {}", self.last_seq + 1)));
        }
        if self.campaign_id.is_none() && !matches!(event.body, EventBody::CampaignCreated { .. }) {
            return Err(fail("first event must be campaign_created".into()));
        }
        match &event.body {
            EventBody::CampaignCreated { campaign_id, config, voter_salt } => {
                if self.campaign_id.is_some() {
                    return Err(fail("campaign already created".into()));
                }
                self.campaign_id = Some(campaign_id.clone());
                self.config = Some((**config).clone());
                self.voter_salt = voter_salt.clone();
                self.next_ordinal = 1;
            }
            EventBody::CampaignStarted {} => {
                if self.running {
                    return Err(fail("campaign already running".into()));
                }
                self.running = true;
                let pending: Vec<ConceptId> = self
                    .population
                    .members
                    .iter()
                    .filter(|id| self.status(id) == Some(ConceptStatus::ActiveUnpublished))
                    .cloned()
                    .collect();
                let mut pending: Vec<(u64, ConceptId)> = pending.into_iter().map(|id| (self.concepts[&id].ordinal, id)).collect();
                pending.sort();
                for (_, id) in pending {
                    self.enqueue(id, event.at);
                }
            }
            EventBody::CampaignStopped {} => {
                if !self.running {
                    return Err(fail("campaign not running".into()));
                }
                self.running = false;
                self.queue.clear();
            }
            EventBody::ConceptCreated { concept, ordinal } => {
                let id = &concept.concept_id;
                if self.concepts.contains_key(id) {
                    return Err(fail(format!("duplicate concept {id}")));
                }
                if *ordinal != self.next_ordinal {
                    return Err(fail(format!("expected ordinal {}, found {ordinal}", self.next_ordinal)));
                }
                if concept.status != ConceptStatus::ActiveUnpublished {
                    return Err(fail("new concepts must be active_unpublished".into()));
                }
                if let Some(missing) = concept.parent_ids.iter().find(|p| !self.concepts.contains_key(*p)) {
                    return Err(fail(format!("unknown parent {missing}")));
                }
                self.next_ordinal += 1;
                let initial = concept.parent_ids.is_empty();
                self.concepts.insert(
                    id.clone(),
                    ConceptRecord {
                        concept: (**concept).clone(),
                        ordinal: *ordinal,
                        created_at: event.at,
                        published_at: None,
                        channel_ref: None,
                        retired_at: None,
                    },
                );
                if initial {
                    self.population.members.push(id.clone());
                    if self.running {
                        self.enqueue(id.clone(), event.at);
                    }
                }
            }
            EventBody::ConceptPublished { concept_id, channel_ref } => {
                let rec = self.concepts.get_mut(concept_id).ok_or_else(|| fail(format!("unknown concept {concept_id}")))?;
                if rec.concept.status != ConceptStatus::ActiveUnpublished {
                    return Err(fail(format!("{concept_id} cannot be published from {:?}", rec.concept.status)));
                }
                rec.concept.status = ConceptStatus::ActivePublished;
                rec.published_at = Some(event.at);
                rec.channel_ref = channel_ref.clone();
                self.queue.retain(|q| &q.concept_id != concept_id);
            }
            EventBody::VoteRecorded { concept_id, voter_token, value, outcome } => {
                if !self.concepts.contains_key(concept_id) {
                    return Err(fail(format!("vote on unknown concept {concept_id}")));
                }
                let prior = self.votes.get(concept_id).is_some_and(|m| m.contains_key(voter_token));
                match (outcome, prior) {
                    (VoteOutcome::Accepted, false) => {
                        self.accepted_votes += 1;
                        self.population.evals_since_last_activation += 1;
                    }
                    (VoteOutcome::Overwritten, true) => self.overwritten_votes += 1,
                    _ => return Err(fail(format!("outcome {outcome:?} inconsistent with prior votes"))),
                }
                self.votes.entry(concept_id.clone()).or_default().insert(voter_token.clone(), *value);
            }
            EventBody::ActivationCompleted { record } => {
                if record.iteration != self.population.iteration + 1 {
                    return Err(fail(format!("expected iteration {}", self.population.iteration + 1)));
                }
                if !self.concepts.contains_key(&record.offspring_id) || self.is_member(&record.offspring_id) {
                    return Err(fail(format!("offspring {} is unknown or already a member", record.offspring_id)));
                }
                if !self.is_member(&record.removed_id) {
                    return Err(fail(format!("removed {} is not a member", record.removed_id)));
                }
                self.population.members.retain(|m| m != &record.removed_id);
                self.population.members.push(record.offspring_id.clone());
                self.population.iteration = record.iteration;
                self.population.evals_since_last_activation = 0;
                self.iterations.push(record.clone());
                if self.running {
                    self.enqueue(record.offspring_id.clone(), event.at);
                }
            }
            EventBody::ConceptRetired { concept_id } => {
                if self.is_member(concept_id) {
                    return Err(fail(format!("cannot retire member {concept_id}")));
                }
                let rec = self.concepts.get_mut(concept_id).ok_or_else(|| fail(format!("unknown concept {concept_id}")))?;
                if rec.concept.status == ConceptStatus::Retired {
                    return Err(fail(format!("{concept_id} already retired")));
                }
                rec.concept.status = ConceptStatus::Retired;
                rec.retired_at = Some(event.at);
                self.queue.retain(|q| &q.concept_id != concept_id);
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    fn enqueue(&mut self, concept_id: ConceptId, at: DateTime<Utc>) {
        if !self.queue.iter().any(|q| q.concept_id == concept_id) {
            self.queue.push(QueueEntry { concept_id, queued_at: at });
        }
    }

    pub fn is_member(&self, id: &ConceptId) -> bool {
        self.population.members.contains(id)
    }

    pub fn status(&self, id: &ConceptId) -> Option<ConceptStatus> {
        self.concepts.get(id).map(|r| r.concept.status)
    }

    pub fn concept(&self, id: &ConceptId) -> Option<&GameConcept> {
        self.concepts.get(id).map(|r| &r.concept)
    }

    pub fn config(&self) -> Option<&CampaignConfig> {
        self.config.as_ref()
    }

    pub fn is_initialized(&self) -> bool {
        !self.concepts.is_empty()
    }

    /// Deduplicated votes currently in effect for `id`.
    pub fn effective_votes(&self, id: &ConceptId) -> BTreeMap<VoterToken, Vote> {
        self.votes
            .get(id)
            .map(|m| m.iter().filter_map(|(t, v)| v.map(|v| (t.clone(), v))).collect())
            .unwrap_or_default()
    }

    pub fn my_vote(&self, id: &ConceptId, token: &VoterToken) -> Option<Vote> {
        self.votes.get(id).and_then(|m| m.get(token).copied().flatten())
    }

    /// True once `token` has cast any vote on `id`, retracted or not.
    pub fn has_voted(&self, id: &ConceptId, token: &VoterToken) -> bool {
        self.votes.get(id).is_some_and(|m| m.contains_key(token))
    }

    pub fn counts(&self, id: &ConceptId) -> VoteCounts {
        let f = self.fitness(id);
        VoteCounts { positives: f.positives, neutrals: f.neutrals, negatives: f.negatives }
    }

    pub fn fitness(&self, id: &ConceptId) -> FitnessReport {
        let values = self.votes.get(id).into_iter().flat_map(|m| m.values().filter_map(|v| *v));
        compute_fitness_from_values(id.clone(), values)
    }

    /// Members currently open for evaluation.
    pub fn published_members(&self) -> BTreeSet<ConceptId> {
        self.population
            .members
            .iter()
            .filter(|id| self.status(id) == Some(ConceptStatus::ActivePublished))
            .cloned()
            .collect()
    }

    pub fn member_fitness(&self) -> BTreeMap<ConceptId, FitnessReport> {
        self.population.members.iter().map(|id| (id.clone(), self.fitness(id))).collect()
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.population
            .members
            .iter()
            .map(|id| {
                let rec = &self.concepts[id];
                Candidate::new(&rec.concept, &self.fitness(id), rec.ordinal)
            })
            .collect()
    }

    /// What a vote would do right now.
    pub fn classify_vote(&self, id: &ConceptId, token: &VoterToken, value: Option<Vote>) -> Result<VoteOutcome, VoteRejection> {
        let status = self.status(id).ok_or(VoteRejection::UnknownConcept)?;
        if status == ConceptStatus::Retired || !self.is_member(id) {
            return Err(VoteRejection::ConceptClosed);
        }
        if status != ConceptStatus::ActivePublished {
            return Err(VoteRejection::NotPublished);
        }
        if !self.running {
            return Err(VoteRejection::CampaignNotRunning);
        }
        match (self.has_voted(id, token), value) {
            (true, _) => Ok(VoteOutcome::Overwritten),
            (false, Some(_)) => Ok(VoteOutcome::Accepted),
            (false, None) => Err(VoteRejection::NothingToRetract),
        }
    }

    pub fn concept_by_channel_ref(&self, channel_ref: &str) -> Option<&ConceptId> {
        // Handles may carry a suffix after '@' (e.g. the poll message id); votes quote only the part before it.
        self.concepts
            .values()
            .find(|r| r.channel_ref.as_deref().is_some_and(|h| h == channel_ref || h.split('@').next() == Some(channel_ref)))
            .map(|r| &r.concept.concept_id)
    }

    /// Non-members that were never retired: removed members, or offspring of an
    /// activation that did not complete.
    pub fn pending_retirements(&self) -> Vec<ConceptId> {
        self.concepts
            .values()
            .filter(|r| r.concept.status != ConceptStatus::Retired && !self.is_member(&r.concept.concept_id))
            .map(|r| r.concept.concept_id.clone())
            .collect()
    }

    /// Every concept that has been published, retired ones included, in creation order.
    pub fn query_published(&self) -> Vec<PublishedRow<'_>> {
        let mut rows: Vec<&ConceptRecord> = self.concepts.values().filter(|r| r.published_at.is_some()).collect();
        rows.sort_by_key(|r| r.ordinal);
        rows.into_iter().map(|r| PublishedRow { concept: &r.concept, counts: self.counts(&r.concept.concept_id) }).collect()
    }

    /// Concepts in creation order.
    pub fn concepts_in_order(&self) -> Vec<&ConceptRecord> {
        let mut rows: Vec<&ConceptRecord> = self.concepts.values().collect();
        rows.sort_by_key(|r| r.ordinal);
        rows
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            campaign_id: self.campaign_id.clone(),
            as_of_seq: self.last_seq,
            population: self.population.clone(),
            published: self.published_members(),
            fitness: self.member_fitness(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
