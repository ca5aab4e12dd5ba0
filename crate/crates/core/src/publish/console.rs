//! Reference channel: concepts go to a writer, votes come in as text lines.
//!
//! Input protocol, one vote per line: `VOTE <concept_id> <+1|0|-1> <user_ref>`.

use std::io::Write;
use std::sync::mpsc::{Receiver, TryRecvError};

use super::channel::{Channel, ChannelError, IncomingVote, VoteTarget};
use crate::domain::{ConceptId, GameConcept, Vote};
use crate::state::VoteCounts;

pub struct ConsoleChannel {
    out: Box<dyn Write + Send>,
    input: Option<Receiver<String>>,
    closed: bool,
}

impl ConsoleChannel {
    pub fn new(out: Box<dyn Write + Send>, input: Option<Receiver<String>>) -> Self {
        Self { out, input, closed: false }
    }

    /// True once the input side has hung up.
    pub fn input_closed(&self) -> bool {
        self.closed
    }

    fn emit(&mut self, text: &str) -> Result<(), ChannelError> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| ChannelError::failure(format!("console write failed: {e}")))
    }
}

/// Parses one protocol line. Blank lines and `#` comments yield `Ok(None)`.
pub fn parse_vote_line(line: &str) -> Result<Option<IncomingVote>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        [cmd, concept, value, user] if cmd.eq_ignore_ascii_case("VOTE") => {
            let value = Vote::parse(value).ok_or_else(|| format!("vote value must be +1, 0 or -1, got {value:?}"))?;
            Ok(Some(IncomingVote {
                user_ref: (*user).to_string(),
                target: VoteTarget::Concept(ConceptId::new(*concept)),
                value: Some(value),
            }))
        }
        _ => Err(format!("expected `VOTE <concept_id> <+1|0|-1> <user_ref>`, got {line:?}")),
    }
}

impl Channel for ConsoleChannel {
    fn name(&self) -> &str {
        "console"
    }

    fn publish(&mut self, concept: &GameConcept) -> Result<Option<String>, ChannelError> {
        let text = format!(
            "=== {} ===\n{}\n--- vote: VOTE {} <+1|0|-1> <your-name>",
            concept.concept_id, concept.body, concept.concept_id
        );
        self.emit(&text)?;
        Ok(None)
    }

    fn close(&mut self, concept: &GameConcept, _channel_ref: Option<&str>, counts: VoteCounts) -> Result<(), ChannelError> {
        let text = format!(
            "=== {} closed: {} liked, {} neutral, {} disliked ===",
            concept.concept_id, counts.positives, counts.neutrals, counts.negatives
        );
        self.emit(&text)
    }

    fn poll_votes(&mut self) -> Result<Vec<IncomingVote>, ChannelError> {
        let mut votes = Vec::new();
        let Some(input) = &self.input else { return Ok(votes) };
        loop {
            match input.try_recv() {
                Ok(line) => match parse_vote_line(&line) {
                    Ok(Some(v)) => votes.push(v),
                    Ok(None) => {}
                    Err(e) => log::warn!("ignoring console input: {e}"),
                },
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.closed = true;
                    break;
                }
            }
        }
        Ok(votes)
    }
}
