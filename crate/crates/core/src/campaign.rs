//! The single-writer command path of a campaign: lifecycle, vote ingestion,
//! timed publication and activations. Every change is appended to the log
//! first and then applied to the in-memory state, exactly as replay would.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{validate_config, CampaignConfig, Violation};
use crate::domain::{CampaignId, ConceptId, GameConcept, Vote, VoterToken};
use crate::engine::{activation_rng, derive_seed, run_iteration, should_activate, EngineError, IterationRecord, Member};
use crate::operators::{backend_from_config, OperatorBackend, OperatorSettings, Operators, TemplateError, TemplateSet};
use crate::publish::{Channel, ChannelError, IncomingVote, PublishSchedule, VoteTarget};
use crate::state::{replay, CampaignState, VoteRejection};
use crate::store::{Event, EventBody, EventLog, StoreError, VoteOutcome};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("concept {0} is already published")]
    AlreadyPublished(ConceptId),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("log does not start with campaign_created")]
    NotACampaign,
}

/// Result of one vote submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "reason")]
pub enum IngestOutcome {
    Accepted,
    Overwritten,
    Rejected(VoteRejection),
}

impl From<VoteOutcome> for IngestOutcome {
    fn from(o: VoteOutcome) -> Self {
        match o {
            VoteOutcome::Accepted => IngestOutcome::Accepted,
            VoteOutcome::Overwritten => IngestOutcome::Overwritten,
        }
    }
}

/// What one scheduler tick did.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct TickReport {
    pub votes: Vec<IngestOutcome>,
    pub activations: Vec<IterationRecord>,
    pub published: Vec<ConceptId>,
}

pub fn schedule_for(config: &CampaignConfig) -> PublishSchedule {
    let tz: Tz = config.channel.timezone.parse().unwrap_or(Tz::UTC);
    PublishSchedule::new(config.slots(), tz, config.channel.immediate_mode)
}

pub fn operators_for(config: &CampaignConfig) -> Result<Operators, TemplateError> {
    let templates = TemplateSet::from_settings(&config.backend.templates)?;
    Ok(Operators::new(templates, OperatorSettings::from_config(config)))
}

pub struct Campaign {
    id: CampaignId,
    config: CampaignConfig,
    log: EventLog,
    state: CampaignState,
    ops: Operators,
    backend: Arc<dyn OperatorBackend>,
    schedule: PublishSchedule,
    channel: Box<dyn Channel>,
}

impl Campaign {
    /// Records a new campaign. `voter_salt: None` draws a random salt.
    pub fn create(
        config: CampaignConfig,
        log: EventLog,
        channel: Box<dyn Channel>,
        backend: Option<Arc<dyn OperatorBackend>>,
        voter_salt: Option<String>,
        now: DateTime<Utc>,
    ) -> Result<Self, CampaignError> {
        let violations = validate_config(&config);
        if !violations.is_empty() {
            return Err(CampaignError::InvalidConfig(violations));
        }
        let ops = operators_for(&config)?;
        let backend = backend.unwrap_or_else(|| backend_from_config(&config, ops.schema()));
        let id = CampaignId::new(config.campaign_id.clone().unwrap_or_else(|| "campaign".into()));
        let salt = voter_salt.unwrap_or_else(|| {
            let mut bytes = [0u8; 16];
            rand::rng().fill_bytes(&mut bytes);
            hex::encode(bytes)
        });
        let mut recorded = config.clone();
        recorded.log_path = None;
        let mut campaign = Self {
            id: id.clone(),
            schedule: schedule_for(&config),
            config,
            log,
            state: CampaignState::default(),
            ops,
            backend,
            channel,
        };
        campaign.append(EventBody::CampaignCreated { campaign_id: id, config: Box::new(recorded), voter_salt: salt }, now)?;
        Ok(campaign)
    }

    /// Rebuilds a campaign from its log and finishes any interrupted activation.
    pub fn resume(
        log: EventLog,
        events: &[Event],
        channel: Box<dyn Channel>,
        backend: Option<Arc<dyn OperatorBackend>>,
        now: DateTime<Utc>,
    ) -> Result<Self, CampaignError> {
        let state = replay(events)?;
        let (Some(id), Some(config)) = (state.campaign_id.clone(), state.config.clone()) else {
            return Err(CampaignError::NotACampaign);
        };
        let ops = operators_for(&config)?;
        let backend = backend.unwrap_or_else(|| backend_from_config(&config, ops.schema()));
        let mut campaign = Self { id, schedule: schedule_for(&config), config, log, state, ops, backend, channel };
        campaign.reconcile(now)?;
        Ok(campaign)
    }

    fn append(&mut self, body: EventBody, now: DateTime<Utc>) -> Result<Event, CampaignError> {
        let event = self.log.append(body, now)?;
        self.state.apply(&event).map_err(|e| StoreError::CorruptLog { seq: e.seq, reason: e.reason })?;
        Ok(event)
    }

    /// Retires concepts an interrupted activation left behind.
    fn reconcile(&mut self, now: DateTime<Utc>) -> Result<(), CampaignError> {
        for id in self.state.pending_retirements() {
            log::info!("retiring {id} left over from an interrupted activation");
            self.retire(&id, now)?;
        }
        Ok(())
    }

    pub fn id(&self) -> &CampaignId {
        &self.id
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn schedule(&self) -> &PublishSchedule {
        &self.schedule
    }

    pub fn channel_name(&self) -> &str {
        self.channel.name()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn channel_mut(&mut self) -> &mut dyn Channel {
        self.channel.as_mut()
    }

    /// Starts (or restarts) the campaign. The first start creates the initial population.
    pub fn start(&mut self, now: DateTime<Utc>) -> Result<(), CampaignError> {
        if self.state.running {
            return Err(CampaignError::InvalidTransition("campaign is already running".into()));
        }
        let missing = self.config.population_size.saturating_sub(self.state.population.members.len());
        let fresh = if self.state.population.iteration == 0 && missing > 0 {
            self.initial_concepts(missing)?
        } else {
            Vec::new()
        };
        self.append(EventBody::CampaignStarted {}, now)?;
        for (concept, ordinal) in fresh {
            self.append(EventBody::ConceptCreated { concept: Box::new(concept), ordinal }, now)?;
        }
        Ok(())
    }

    /// Builds the not-yet-created part of the initial population without touching the log.
    fn initial_concepts(&self, missing: usize) -> Result<Vec<(GameConcept, u64)>, CampaignError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.rng_seed, "init", 0));
        let (_, mut concepts) = crate::engine::initialize_population(&self.config, &self.id, &self.ops, self.backend.as_ref(), &mut rng)?;
        let skip = concepts.len() - missing;
        let first = self.state.next_ordinal;
        Ok(concepts
            .drain(skip..)
            .enumerate()
            .map(|(i, mut c)| {
                let ordinal = first + i as u64;
                c.concept_id = ConceptId::for_ordinal(&self.id, ordinal);
                (c, ordinal)
            })
            .collect())
    }

    /// Stops the campaign. Pending publications are dropped; state is kept.
    pub fn stop(&mut self, now: DateTime<Utc>) -> Result<(), CampaignError> {
        if !self.state.running {
            return Err(CampaignError::InvalidTransition("campaign is not running".into()));
        }
        self.append(EventBody::CampaignStopped {}, now)?;
        Ok(())
    }

    pub fn voter_token(&self, channel: &str, user_ref: &str) -> VoterToken {
        VoterToken::derive(&self.state.voter_salt, channel, user_ref)
    }

    /// Records a vote from an already pseudonymized voter.
    pub fn ingest_token_vote(
        &mut self,
        token: &VoterToken,
        concept_id: &ConceptId,
        value: Option<Vote>,
        now: DateTime<Utc>,
    ) -> Result<IngestOutcome, CampaignError> {
        match self.state.classify_vote(concept_id, token, value) {
            Err(r) => Ok(IngestOutcome::Rejected(r)),
            Ok(outcome) => {
                let body = EventBody::VoteRecorded { concept_id: concept_id.clone(), voter_token: token.clone(), value, outcome };
                self.append(body, now)?;
                Ok(outcome.into())
            }
        }
    }

    /// Records a vote from a channel user. The raw user reference is not stored.
    pub fn ingest_vote(
        &mut self,
        user_ref: &str,
        concept_id: &ConceptId,
        value: Option<Vote>,
        now: DateTime<Utc>,
    ) -> Result<IngestOutcome, CampaignError> {
        let token = self.voter_token(self.channel.name(), user_ref);
        self.ingest_token_vote(&token, concept_id, value, now)
    }

    fn ingest_incoming(&mut self, vote: IncomingVote, now: DateTime<Utc>) -> Result<IngestOutcome, CampaignError> {
        let concept_id = match vote.target {
            VoteTarget::Concept(id) => id,
            VoteTarget::ChannelRef(r) => match self.state.concept_by_channel_ref(&r) {
                Some(id) => id.clone(),
                None => return Ok(IngestOutcome::Rejected(VoteRejection::UnknownConcept)),
            },
        };
        self.ingest_vote(&vote.user_ref, &concept_id, vote.value, now)
    }

    /// Position of a concept in the publication queue.
    pub fn enqueue_for_publication(&self, concept_id: &ConceptId) -> Result<usize, CampaignError> {
        let rec = self.state.concepts.get(concept_id).ok_or_else(|| CampaignError::UnknownConcept(concept_id.clone()))?;
        if rec.published_at.is_some() {
            return Err(CampaignError::AlreadyPublished(concept_id.clone()));
        }
        self.state
            .queue
            .iter()
            .position(|q| &q.concept_id == concept_id)
            .ok_or_else(|| CampaignError::InvalidTransition(format!("{concept_id} is not awaiting publication")))
    }

    /// Publishes queued concepts whose slot has arrived, in FIFO order. A
    /// channel failure leaves the rest queued for the next tick.
    pub fn publish_due(&mut self, now: DateTime<Utc>) -> Result<Vec<ConceptId>, CampaignError> {
        let mut published = Vec::new();
        let due: Vec<ConceptId> = self
            .state
            .queue
            .iter()
            .filter(|q| self.schedule.is_due(q.queued_at, now))
            .map(|q| q.concept_id.clone())
            .collect();
        for id in due {
            let concept = self.state.concept(&id).expect("queued concepts exist").clone();
            match self.channel.publish(&concept) {
                Ok(channel_ref) => {
                    self.append(EventBody::ConceptPublished { concept_id: id.clone(), channel_ref }, now)?;
                    published.push(id);
                }
                Err(e) => {
                    log::warn!("publishing {id} failed, will retry: {e}");
                    break;
                }
            }
        }
        Ok(published)
    }

    pub fn activation_due(&self) -> bool {
        let limit_reached = self.config.max_iterations.is_some_and(|m| self.state.population.iteration >= m);
        self.state.running
            && !limit_reached
            && should_activate(
                &self.state.population,
                &self.state.published_members(),
                &self.state.member_fitness(),
                self.config.trigger_new_evals,
                self.config.min_evals_per_published,
            )
    }

    /// Runs one activation now, whether or not the trigger condition holds.
    pub fn activate(&mut self, now: DateTime<Utc>) -> Result<IterationRecord, CampaignError> {
        let fitness = self.state.member_fitness();
        let members: Vec<Member<'_>> = self
            .state
            .population
            .members
            .iter()
            .map(|id| {
                let rec = &self.state.concepts[id];
                Member { concept: &rec.concept, fitness: &fitness[id], ordinal: rec.ordinal }
            })
            .collect();
        let iteration = self.state.population.iteration + 1;
        let mut rng = activation_rng(self.config.rng_seed, iteration);
        let offspring_id = ConceptId::for_ordinal(&self.id, self.state.next_ordinal);
        let activation = run_iteration(
            &self.state.population,
            &members,
            &self.config,
            &self.ops,
            self.backend.as_ref(),
            &mut rng,
            offspring_id,
            &self.id,
        )?;
        let ordinal = self.state.next_ordinal;
        self.append(EventBody::ConceptCreated { concept: Box::new(activation.offspring), ordinal }, now)?;
        self.append(EventBody::ActivationCompleted { record: activation.record.clone() }, now)?;
        self.retire(&activation.record.removed_id, now)?;
        debug_assert_eq!(self.state.population, activation.state);
        Ok(activation.record)
    }

    fn retire(&mut self, id: &ConceptId, now: DateTime<Utc>) -> Result<(), CampaignError> {
        let rec = &self.state.concepts[id];
        if rec.published_at.is_some() {
            let (concept, channel_ref, counts) = (rec.concept.clone(), rec.channel_ref.clone(), self.state.counts(id));
            if let Err(e) = self.channel.close(&concept, channel_ref.as_deref(), counts) {
                log::warn!("closing {id} on the channel failed: {e}");
            }
        }
        self.append(EventBody::ConceptRetired { concept_id: id.clone() }, now)?;
        Ok(())
    }

    /// Activates if the trigger condition holds.
    pub fn maybe_activate(&mut self, now: DateTime<Utc>) -> Result<Option<IterationRecord>, CampaignError> {
        if self.activation_due() {
            self.activate(now).map(Some)
        } else {
            Ok(None)
        }
    }

    /// One scheduler step: collect channel votes, activate if due, publish what is due.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Result<TickReport, CampaignError> {
        let mut report = TickReport::default();
        match self.channel.poll_votes() {
            Ok(votes) => {
                for v in votes {
                    report.votes.push(self.ingest_incoming(v, now)?);
                }
            }
            Err(ChannelError::Failure { reason, .. }) => log::warn!("reading votes failed: {reason}"),
            Err(e) => log::error!("reading votes failed: {e}"),
        }
        if let Some(record) = self.maybe_activate(now)? {
            report.activations.push(record);
        }
        report.published = self.publish_due(now)?;
        Ok(report)
    }

    /// Draws from a stream derived from the campaign seed. For callers that
    /// need campaign-scoped randomness (e.g. simulation).
    pub fn derived_rng(&self, label: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.config.rng_seed, label, index))
    }
}

/// Random hex token, for issuing web sessions.
pub fn random_token<R: Rng + ?Sized>(rng: &mut R) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ConceptStatus;
    use crate::publish::WebChannel;
    use std::sync::Mutex;

    fn t(mins: i64) -> DateTime<Utc> {
        "2024-03-01T08:00:00Z".parse::<DateTime<Utc>>().unwrap() + chrono::Duration::minutes(mins)
    }

    fn config() -> CampaignConfig {
        CampaignConfig { campaign_id: Some("t".into()), trigger_new_evals: 5, rng_seed: 9, ..Default::default() }
    }

    fn campaign(config: CampaignConfig) -> Campaign {
        Campaign::create(config, EventLog::in_memory(), Box::new(WebChannel), None, Some("salt".into()), t(0)).unwrap()
    }

    /// A channel whose availability the test controls.
    struct Flaky(Arc<Mutex<bool>>, Arc<Mutex<Vec<ConceptId>>>);

    impl Channel for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn publish(&mut self, c: &GameConcept) -> Result<Option<String>, ChannelError> {
            if *self.0.lock().unwrap() {
                self.1.lock().unwrap().push(c.concept_id.clone());
                Ok(None)
            } else {
                Err(ChannelError::failure("down"))
            }
        }
        fn close(&mut self, _: &GameConcept, _: Option<&str>, _: crate::state::VoteCounts) -> Result<(), ChannelError> {
            Ok(())
        }
        fn poll_votes(&mut self) -> Result<Vec<IncomingVote>, ChannelError> {
            Ok(vec![])
        }
    }

    fn vote_all(c: &mut Campaign, voter: &str, now: DateTime<Utc>) {
        for id in c.state().published_members() {
            c.ingest_vote(voter, &id, Some(Vote::Positive), now).unwrap();
        }
    }

    #[test]
    fn lifecycle_and_initialization() {
        let mut c = campaign(config());
        assert!(!c.state().is_initialized());
        c.start(t(1)).unwrap();
        assert_eq!(c.state().population.members.len(), 10);
        assert_eq!(c.state().queue.len(), 10);
        assert!(matches!(c.start(t(2)), Err(CampaignError::InvalidTransition(_))));
        c.stop(t(3)).unwrap();
        assert!(c.state().queue.is_empty());
        assert!(matches!(c.stop(t(3)), Err(CampaignError::InvalidTransition(_))));
        c.start(t(4)).unwrap();
        assert_eq!(c.state().concepts.len(), 10);
        assert_eq!(c.state().queue.len(), 10);
    }

    #[test]
    fn slot_publication_is_fifo_and_idempotent() {
        let mut c = campaign(config());
        c.start(t(0)).unwrap();
        assert!(c.publish_due(t(30)).unwrap().is_empty());
        let first = c.publish_due(t(60)).unwrap();
        assert_eq!(first.len(), 10);
        assert_eq!(first[0], ConceptId::new("t-c0001"));
        assert!(c.publish_due(t(61)).unwrap().is_empty());
        assert!(matches!(c.enqueue_for_publication(&first[0]), Err(CampaignError::AlreadyPublished(_))));
    }

    #[test]
    fn channel_outage_publishes_exactly_once_later() {
        let up = Arc::new(Mutex::new(false));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let mut cfg = config();
        cfg.channel.immediate_mode = true;
        let mut c = Campaign::create(cfg, EventLog::in_memory(), Box::new(Flaky(up.clone(), seen.clone())), None, Some("s".into()), t(0)).unwrap();
        c.start(t(0)).unwrap();
        assert!(c.publish_due(t(1)).unwrap().is_empty());
        assert_eq!(c.state().queue.len(), 10);
        *up.lock().unwrap() = true;
        assert_eq!(c.publish_due(t(2)).unwrap().len(), 10);
        assert!(c.publish_due(t(3)).unwrap().is_empty());
        assert_eq!(seen.lock().unwrap().len(), 10);
        let events = crate::store::events_from_bytes(c.log().memory_bytes().unwrap()).unwrap();
        let published = events.iter().filter(|e| matches!(e.body, EventBody::ConceptPublished { .. })).count();
        assert_eq!(published, 10);
    }

    #[test]
    fn votes_trigger_activation() {
        let mut cfg = config();
        cfg.channel.immediate_mode = true;
        let mut c = campaign(cfg);
        c.start(t(0)).unwrap();
        c.tick(t(1)).unwrap();
        assert_eq!(c.ingest_vote("u", &ConceptId::new("t-c0001"), Some(Vote::Positive), t(2)).unwrap(), IngestOutcome::Accepted);
        assert_eq!(c.ingest_vote("u", &ConceptId::new("t-c0001"), Some(Vote::Negative), t(2)).unwrap(), IngestOutcome::Overwritten);
        assert!(!c.activation_due());
        vote_all(&mut c, "v", t(3));
        assert!(c.activation_due());
        let report = c.tick(t(4)).unwrap();
        assert_eq!(report.activations.len(), 1);
        assert_eq!(report.published.len(), 1);
        let record = &report.activations[0];
        assert_eq!(c.state().population.members.len(), 10);
        assert_eq!(c.state().concepts.len(), 11);
        assert_eq!(c.state().status(&record.removed_id), Some(ConceptStatus::Retired));
        assert_eq!(
            c.ingest_vote("u", &record.removed_id, Some(Vote::Positive), t(5)).unwrap(),
            IngestOutcome::Rejected(VoteRejection::ConceptClosed)
        );
    }

    #[test]
    fn resume_matches_and_retires_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let mut cfg = config();
        cfg.channel.immediate_mode = true;
        let mut c = Campaign::create(cfg, EventLog::create(&path).unwrap(), Box::new(WebChannel), None, None, t(0)).unwrap();
        c.start(t(0)).unwrap();
        c.tick(t(1)).unwrap();
        vote_all(&mut c, "v", t(2));
        c.activate(t(3)).unwrap();
        let digest = c.state().digest();
        drop(c);

        let (log, events) = EventLog::open(&path).unwrap();
        let c = Campaign::resume(log, &events, Box::new(WebChannel), None, t(4)).unwrap();
        assert_eq!(c.state().digest(), digest);

        // Cut the log right after an activation_completed: the removed member must be retired on resume.
        let text = std::fs::read_to_string(&path).unwrap();
        let keep: Vec<&str> = text.lines().take_while(|l| !l.contains("\"kind\":\"concept_retired\"")).collect();
        std::fs::write(&path, keep.join("\n") + "\n").unwrap();
        let (log, events) = EventLog::open(&path).unwrap();
        let c = Campaign::resume(log, &events, Box::new(WebChannel), None, t(5)).unwrap();
        assert!(c.state().pending_retirements().is_empty());
        assert_eq!(c.state().concepts.values().filter(|r| r.concept.status == ConceptStatus::Retired).count(), 1);
    }

    #[test]
    fn max_iterations_caps_activations() {
        let mut cfg = config();
        cfg.channel.immediate_mode = true;
        cfg.max_iterations = Some(0);
        let mut c = campaign(cfg);
        c.start(t(0)).unwrap();
        c.tick(t(1)).unwrap();
        vote_all(&mut c, "v", t(2));
        assert!(!c.activation_due());
    }
}
