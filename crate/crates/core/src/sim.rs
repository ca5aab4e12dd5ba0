//! Desk-scale simulation: the real campaign service driven by a virtual clock
//! and synthetic voters with hidden keyword preferences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{Campaign, CampaignError};
use crate::config::CampaignConfig;
use crate::domain::{ConceptId, GameConcept, Vote};
use crate::engine::derive_seed;
use crate::operators::mock::KEYWORD_POOL;
use crate::publish::{Channel, ChannelError, IncomingVote};
use crate::state::{CampaignState, VoteCounts};
use crate::store::EventLog;

pub const TICK: Duration = Duration::minutes(5);
/// Virtual days without an activation before a run counts as stalled.
pub const STALL_DAYS: i64 = 60;

pub fn virtual_epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200, 0).expect("2024-01-01T00:00:00Z")
}

/// Synthetic voter population. Loaded from a TOML voters file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoterSpec {
    pub voters: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Chance that a voter shows up after a given publication slot.
    pub response_rate: f64,
    /// Half-width of the uniform per-voter perturbation of each keyword weight.
    pub noise: f64,
    /// Sessions start uniformly within this many minutes after a slot.
    pub session_minutes: u64,
    /// Mean keyword weights. Empty means: draw weights in [-1, 1] for the mock keyword pool.
    pub keywords: BTreeMap<String, f64>,
}

impl Default for VoterSpec {
    fn default() -> Self {
        Self {
            voters: 35,
            theta_lo: -0.1,
            theta_hi: 0.1,
            response_rate: 0.6,
            noise: 0.3,
            session_minutes: 120,
            keywords: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid voters file: {0}")]
    InvalidVoters(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("simulation stalled at iteration {iteration} ({at}): no activation for {STALL_DAYS} virtual days")]
    Stalled { iteration: u64, at: DateTime<Utc> },
}

impl VoterSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let spec: Self = toml::from_str(text).map_err(|e| SimError::InvalidVoters(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if self.voters == 0 {
            problems.push("voters must be at least 1".to_string());
        }
        if !(self.theta_lo < self.theta_hi) {
            problems.push("theta_lo must be below theta_hi".to_string());
        }
        if !(self.response_rate > 0.0 && self.response_rate <= 1.0) {
            problems.push("response_rate must be in (0, 1]".to_string());
        }
        if !(self.noise >= 0.0) {
            problems.push("noise must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidVoters(problems.join("; ")))
        }
    }
}

/// Lowercase alphanumeric tokens of a text.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// Mean weight of the keywords a concept mentions; 0 when it mentions none.
pub fn utility(weights: &BTreeMap<String, f64>, concept: &GameConcept) -> f64 {
    let present = tokens(&concept.body);
    let hits: Vec<f64> = weights.iter().filter(|(k, _)| present.contains(*k)).map(|(_, w)| *w).collect();
    if hits.is_empty() {
        0.0
    } else {
        hits.iter().sum::<f64>() / hits.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct VoterModel {
    pub mean_weights: BTreeMap<String, f64>,
    pub voters: Vec<BTreeMap<String, f64>>,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl VoterModel {
    pub fn new<R: Rng + ?Sized>(spec: &VoterSpec, rng: &mut R) -> Self {
        let mean_weights: BTreeMap<String, f64> = if spec.keywords.is_empty() {
            KEYWORD_POOL.iter().map(|k| (k.to_string(), rng.random_range(-1.0..=1.0))).collect()
        } else {
            spec.keywords.iter().map(|(k, w)| (k.to_lowercase(), *w)).collect()
        };
        let voters = (0..spec.voters)
            .map(|_| {
                mean_weights
                    .iter()
                    .map(|(k, w)| {
                        let jitter = if spec.noise > 0.0 { rng.random_range(-spec.noise..=spec.noise) } else { 0.0 };
                        (k.clone(), w + jitter)
                    })
                    .collect()
            })
            .collect();
        Self { mean_weights, voters, theta_lo: spec.theta_lo, theta_hi: spec.theta_hi }
    }

    pub fn vote(&self, voter: usize, concept: &GameConcept) -> Vote {
        let u = utility(&self.voters[voter], concept);
        if u > self.theta_hi {
            Vote::Positive
        } else if u < self.theta_lo {
            Vote::Negative
        } else {
            Vote::Neutral
        }
    }

    /// Mean hidden utility (under the mean weights) of the current population.
    pub fn population_utility(&self, state: &CampaignState) -> f64 {
        let members = &state.population.members;
        let total: f64 = members.iter().filter_map(|id| state.concept(id)).map(|c| utility(&self.mean_weights, c)).sum();
        total / members.len().max(1) as f64
    }
}

/// Channel stand-in: publication is instantaneous, votes are injected directly.
#[derive(Debug, Default)]
pub struct SimChannel;

impl Channel for SimChannel {
    fn name(&self) -> &str {
        "sim"
    }

    fn publish(&mut self, _concept: &GameConcept) -> Result<Option<String>, ChannelError> {
        Ok(None)
    }

    fn close(&mut self, _concept: &GameConcept, _channel_ref: Option<&str>, _counts: VoteCounts) -> Result<(), ChannelError> {
        Ok(())
    }

    fn poll_votes(&mut self) -> Result<Vec<IncomingVote>, ChannelError> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub campaign_id: String,
    pub seed: u64,
    pub iterations: u64,
    pub concepts_created: usize,
    pub accepted_votes: u64,
    pub overwritten_votes: u64,
    pub events: u64,
    pub virtual_start: DateTime<Utc>,
    pub virtual_end: DateTime<Utc>,
    pub initial_utility: f64,
    /// Mean hidden utility of the population after each activation.
    pub utility_per_activation: Vec<f64>,
    pub state_digest: String,
}

impl SimSummary {
    pub fn final_utility(&self) -> f64 {
        self.utility_per_activation.last().copied().unwrap_or(self.initial_utility)
    }
}

impl fmt::Display for SimSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "campaign_id: {}", self.campaign_id)?;
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "iterations: {}", self.iterations)?;
        writeln!(f, "concepts_created: {}", self.concepts_created)?;
        writeln!(f, "accepted_votes: {}", self.accepted_votes)?;
        writeln!(f, "overwritten_votes: {}", self.overwritten_votes)?;
        writeln!(f, "events: {}", self.events)?;
        writeln!(f, "virtual_start: {}", self.virtual_start.to_rfc3339())?;
        writeln!(f, "virtual_end: {}", self.virtual_end.to_rfc3339())?;
        writeln!(f, "initial_utility: {:.4}", self.initial_utility)?;
        writeln!(f, "final_utility: {:.4}", self.final_utility())?;
        let series: Vec<String> = self.utility_per_activation.iter().map(|u| format!("{u:.4}")).collect();
        writeln!(f, "utility_per_activation: [{}]", series.join(", "))?;
        write!(f, "state_digest: {}", self.state_digest)
    }
}

pub struct SimRun {
    pub summary: SimSummary,
    pub campaign: Campaign,
}

/// Runs exactly `iterations` activations. `seed` replaces the config's rng seed.
pub fn simulate(mut config: CampaignConfig, spec: &VoterSpec, iterations: u64, seed: u64, log: EventLog) -> Result<SimRun, SimError> {
    spec.validate()?;
    config.rng_seed = seed;
    let salt = format!("{:016x}", derive_seed(seed, "voter-salt", 0));
    let start = virtual_epoch();
    let mut campaign = Campaign::create(config, log, Box::new(SimChannel), None, Some(salt), start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "voters", 0));
    let model = VoterModel::new(spec, &mut rng);
    let user_refs: Vec<String> = (0..spec.voters).map(|i| format!("voter-{i:03}")).collect();

    campaign.start(start)?;
    campaign.publish_due(start)?;
    let initial_utility = model.population_utility(campaign.state());
    let mut utilities = Vec::new();
    let mut sessions: BTreeSet<(DateTime<Utc>, usize)> = BTreeSet::new();
    let mut now = start;
    let mut last_progress = start;
    let mut next_slot = session_slot_after(&campaign, start - Duration::seconds(1));

    while campaign.state().population.iteration < iterations {
        now += TICK;
        while next_slot <= now {
            for voter in 0..spec.voters {
                if rng.random_bool(spec.response_rate) {
                    let offset = rng.random_range(0..=spec.session_minutes as i64);
                    sessions.insert((next_slot + Duration::minutes(offset), voter));
                }
            }
            next_slot = session_slot_after(&campaign, next_slot);
        }
        campaign.publish_due(now)?;
        while let Some(&(_, voter)) = sessions.first().filter(|(at, _)| *at <= now) {
            sessions.pop_first();
            let token = campaign.voter_token(campaign.channel_name(), &user_refs[voter]);
            let mut pending: Vec<(u64, ConceptId)> = campaign
                .state()
                .published_members()
                .into_iter()
                .filter(|id| !campaign.state().has_voted(id, &token))
                .map(|id| (campaign.state().concepts[&id].ordinal, id))
                .collect();
            pending.sort();
            for (_, id) in pending {
                if campaign.state().population.iteration >= iterations {
                    break;
                }
                let value = model.vote(voter, campaign.state().concept(&id).expect("member exists"));
                campaign.ingest_vote(&user_refs[voter], &id, Some(value), now)?;
                if campaign.maybe_activate(now)?.is_some() {
                    utilities.push(model.population_utility(campaign.state()));
                    last_progress = now;
                    campaign.publish_due(now)?;
                }
            }
        }
        if now - last_progress > Duration::days(STALL_DAYS) {
            return Err(SimError::Stalled { iteration: campaign.state().population.iteration, at: now });
        }
    }
    campaign.log_mut().flush().map_err(CampaignError::from)?;

    let state = campaign.state();
    let summary = SimSummary {
        campaign_id: campaign.id().to_string(),
        seed,
        iterations: state.population.iteration,
        concepts_created: state.concepts.len(),
        accepted_votes: state.accepted_votes,
        overwritten_votes: state.overwritten_votes,
        events: state.last_seq,
        virtual_start: start,
        virtual_end: now,
        initial_utility,
        utility_per_activation: utilities,
        state_digest: state.digest(),
    };
    Ok(SimRun { summary, campaign })
}

/// Next voter session anchor: the next publication slot, or every three hours without slots.
fn session_slot_after(campaign: &Campaign, t: DateTime<Utc>) -> DateTime<Utc> {
    campaign.schedule().next_slot_after(t).unwrap_or(t + Duration::hours(3))
}
