//! Shared vocabulary: concepts, votes, evaluations and population membership.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

opaque_id!(
    /// Identifies one campaign (one event log).
    CampaignId
);
opaque_id!(
    /// Identifies one game concept. Unique across campaigns because it embeds the campaign id.
    ConceptId
);
opaque_id!(
    /// Salted pseudonym of a channel user. Raw user ids never leave the ingestion path.
    VoterToken
);

impl ConceptId {
    pub fn for_ordinal(campaign: &CampaignId, ordinal: u64) -> Self {
        Self(format!("{campaign}-c{ordinal:04}"))
    }
}

impl VoterToken {
    /// Derives the pseudonym for `user_ref` on `channel`.
    pub fn derive(salt: &str, channel: &str, user_ref: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(salt.as_bytes());
        hasher.update([0u8]);
        hasher.update(channel.as_bytes());
        hasher.update([0u8]);
        hasher.update(user_ref.as_bytes());
        let digest = hasher.finalize();
        Self(hex::encode(&digest[..16]))
    }
}

/// The three-value evaluation scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vote {
    Negative,
    Neutral,
    Positive,
}

impl Vote {
    pub fn value(self) -> i8 {
        match self {
            Vote::Positive => 1,
            Vote::Neutral => 0,
            Vote::Negative => -1,
        }
    }

    pub fn from_value(value: i64) -> Option<Self> {
        match value {
            1 => Some(Vote::Positive),
            0 => Some(Vote::Neutral),
            -1 => Some(Vote::Negative),
            _ => None,
        }
    }

    /// Parses `+1`, `1`, `0`, `-1`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "+1" | "1" => Some(Vote::Positive),
            "0" | "+0" | "-0" => Some(Vote::Neutral),
            "-1" => Some(Vote::Negative),
            _ => None,
        }
    }
}

impl Serialize for Vote {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Vote {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(deserializer)?;
        Vote::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("vote value {v} not in {{-1, 0, 1}}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    LlmRandom,
    HumanSeed,
    Recombination,
    Mutation,
}

impl Origin {
    pub fn expected_parents(self) -> usize {
        match self {
            Origin::LlmRandom | Origin::HumanSeed => 0,
            Origin::Recombination => 2,
            Origin::Mutation => 1,
        }
    }
}

/// Lifecycle status. Only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptStatus {
    ActiveUnpublished,
    ActivePublished,
    Retired,
}

impl ConceptStatus {
    pub fn can_become(self, next: ConceptStatus) -> bool {
        next > self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_limit: Option<usize>,
}

impl Section {
    pub fn new(label: impl Into<String>, text: impl Into<String>, char_limit: Option<usize>) -> Self {
        Self { label: label.into(), text: text.into(), char_limit }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Renders sections as the canonical free-text body, one `Label: text` paragraph per section.
pub fn format_body(sections: &[Section]) -> String {
    sections
        .iter()
        .map(|s| format!("{}: {}", capitalize(&s.label), s.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn capitalize(label: &str) -> String {
    let mut chars = label.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lowercased, whitespace-collapsed form used for duplicate detection.
pub fn normalize_body(body: &str) -> String {
    body.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// A game concept: the genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConcept {
    pub concept_id: ConceptId,
    pub campaign_id: CampaignId,
    pub body: String,
    pub sections: Vec<Section>,
    pub origin: Origin,
    pub parent_ids: Vec<ConceptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_focus: Option<String>,
    pub created_at_iteration: u64,
    pub status: ConceptStatus,
}

/// Section-level tolerance over the char limit a prompt asks for.
pub const SECTION_TOLERANCE: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConceptViolation {
    ParentCount { origin: Origin, found: usize },
    DuplicateParents,
    SectionTooLong { label: String, len: usize, limit: usize },
}

impl GameConcept {
    pub fn body_len(&self) -> usize {
        self.body.chars().count()
    }

    pub fn violations(&self) -> Vec<ConceptViolation> {
        let mut out = Vec::new();
        if self.parent_ids.len() != self.origin.expected_parents() {
            out.push(ConceptViolation::ParentCount { origin: self.origin, found: self.parent_ids.len() });
        } else if self.parent_ids.len() == 2 && self.parent_ids[0] == self.parent_ids[1] {
            out.push(ConceptViolation::DuplicateParents);
        }
        for s in &self.sections {
            if let Some(limit) = s.char_limit {
                if s.char_len() as f64 > limit as f64 * SECTION_TOLERANCE {
                    out.push(ConceptViolation::SectionTooLong { label: s.label.clone(), len: s.char_len(), limit });
                }
            }
        }
        out
    }
}

/// One voter's judgment of one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub voter_token: VoterToken,
    pub concept_id: ConceptId,
    pub value: Vote,
    pub submitted_at: DateTime<Utc>,
}

/// Latest vote per voter for `concept_id`. Input order is submission order; later entries win.
pub fn effective_evaluations(evals: &[Evaluation], concept_id: &ConceptId) -> BTreeMap<VoterToken, Vote> {
    let mut out = BTreeMap::new();
    for e in evals.iter().filter(|e| &e.concept_id == concept_id) {
        out.insert(e.voter_token.clone(), e.value);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationState {
    pub members: Vec<ConceptId>,
    pub iteration: u64,
    pub evals_since_last_activation: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ev(voter: &str, value: Vote, secs: i64) -> Evaluation {
        Evaluation {
            voter_token: VoterToken::new(voter),
            concept_id: ConceptId::new("c1"),
            value,
            submitted_at: Utc.timestamp_opt(secs, 0).unwrap(),
        }
    }

    #[test]
    fn latest_vote_wins() {
        let evals = [ev("u1", Vote::Positive, 0), ev("u1", Vote::Negative, 1)];
        let eff = effective_evaluations(&evals, &ConceptId::new("c1"));
        assert_eq!(eff.len(), 1);
        assert_eq!(eff[&VoterToken::new("u1")], Vote::Negative);
    }

    #[test]
    fn empty_evaluations() {
        assert!(effective_evaluations(&[], &ConceptId::new("c1")).is_empty());
    }

    #[test]
    fn distinct_voters_pass_through() {
        let evals = [ev("u1", Vote::Positive, 0), ev("u2", Vote::Neutral, 1), ev("u3", Vote::Negative, 2)];
        let eff = effective_evaluations(&evals, &ConceptId::new("c1"));
        assert_eq!(eff.len(), 3);
        assert_eq!(eff.values().map(|v| v.value() as i32).sum::<i32>(), 0);
    }

    #[test]
    fn other_concepts_ignored() {
        let mut e = ev("u1", Vote::Positive, 0);
        e.concept_id = ConceptId::new("c2");
        assert!(effective_evaluations(&[e], &ConceptId::new("c1")).is_empty());
    }

    #[test]
    fn vote_wire_values() {
        assert_eq!(serde_json::to_string(&Vote::Negative).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Vote>("1").unwrap(), Vote::Positive);
        assert!(serde_json::from_str::<Vote>("2").is_err());
        assert_eq!(Vote::parse("+1"), Some(Vote::Positive));
        assert_eq!(Vote::parse("-1"), Some(Vote::Negative));
        assert_eq!(Vote::parse("2"), None);
    }

    #[test]
    fn status_only_moves_forward() {
        use ConceptStatus::*;
        assert!(ActiveUnpublished.can_become(ActivePublished));
        assert!(ActivePublished.can_become(Retired));
        assert!(ActiveUnpublished.can_become(Retired));
        assert!(!Retired.can_become(ActivePublished));
        assert!(!ActivePublished.can_become(ActiveUnpublished));
        assert!(!Retired.can_become(Retired));
    }

    #[test]
    fn voter_token_is_salted_and_stable() {
        let a = VoterToken::derive("salt", "telegram", "12345");
        assert_eq!(a, VoterToken::derive("salt", "telegram", "12345"));
        assert_ne!(a, VoterToken::derive("other", "telegram", "12345"));
        assert!(!a.as_str().contains("12345"));
    }

    #[test]
    fn parent_count_rule() {
        let mut c = GameConcept {
            concept_id: ConceptId::new("x"),
            campaign_id: CampaignId::new("k"),
            body: String::new(),
            sections: vec![Section::new("level design", "a".repeat(375), Some(300))],
            origin: Origin::Recombination,
            parent_ids: vec![ConceptId::new("a"), ConceptId::new("a")],
            mutation_focus: None,
            created_at_iteration: 1,
            status: ConceptStatus::ActiveUnpublished,
        };
        assert_eq!(c.violations(), vec![ConceptViolation::DuplicateParents]);
        c.parent_ids = vec![ConceptId::new("a")];
        c.sections[0].text.push('b');
        let v = c.violations();
        assert_eq!(v.len(), 2);
    }
}
