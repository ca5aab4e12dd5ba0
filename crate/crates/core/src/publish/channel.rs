//! Channel adapter contract.

use std::time::Duration;

use thiserror::Error;

use crate::domain::{ConceptId, GameConcept, Vote};
use crate::state::VoteCounts;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteTarget {
    Concept(ConceptId),
    /// Channel-side handle recorded at publication (e.g. a poll id).
    ChannelRef(String),
}

/// A vote as received from a channel, before pseudonymization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncomingVote {
    pub user_ref: String,
    pub target: VoteTarget,
    /// `None` retracts an earlier vote.
    pub value: Option<Vote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel failure: {reason}")]
    Failure { reason: String, retry_after: Option<Duration> },
    #[error("channel credentials: {0}")]
    Auth(String),
}

impl ChannelError {
    pub fn failure(reason: impl Into<String>) -> Self {
        ChannelError::Failure { reason: reason.into(), retry_after: None }
    }
}

/// Adapters hold destination config only; campaign state lives in the log.
pub trait Channel: Send {
    /// Stable name, part of every voter pseudonym from this channel.
    fn name(&self) -> &str;

    /// Shows a concept and opens voting on it. Returns the channel-side handle, if any.
    fn publish(&mut self, concept: &GameConcept) -> Result<Option<String>, ChannelError>;

    /// Ends voting on a retired concept and shows its final aggregate counts.
    fn close(&mut self, concept: &GameConcept, channel_ref: Option<&str>, counts: VoteCounts) -> Result<(), ChannelError>;

    /// Votes received since the last call.
    fn poll_votes(&mut self) -> Result<Vec<IncomingVote>, ChannelError>;
}

/// The web channel: concepts are served by the HTTP API and votes arrive through it.
#[derive(Debug, Default)]
pub struct WebChannel;

impl Channel for WebChannel {
    fn name(&self) -> &str {
        "web"
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
