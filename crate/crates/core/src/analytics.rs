//! Measurements over an event log: vote timelines, concept length series and
//! word frequencies, with CSV export.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::domain::GameConcept;
use crate::state::CampaignState;
use crate::store::{Event, EventBody, StoreError, VoteOutcome};

pub const LENGTH_WINDOW: usize = 5;

/// Common English function words. Campaign-specific lists can be loaded with [`parse_stopwords`].
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "each", "for", "from", "has", "have", "he", "her", "his", "how", "if", "in", "into", "is", "it", "its", "more",
    "must", "no", "not", "of", "on", "one", "or", "other", "out", "she", "so", "some", "such", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "through", "to", "up", "use", "uses", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "will", "with", "would", "you", "your",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub start: DateTime<Utc>,
    pub count: u64,
}

/// Accepted votes per epoch-aligned bucket, from the first to the last
/// non-empty bucket (empty ones in between included).
pub fn eval_timeline(events: &[Event], bucket: Duration) -> Vec<Bucket> {
    let width = bucket.num_milliseconds();
    assert!(width > 0, "bucket width must be positive");
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for e in events {
        if let EventBody::VoteRecorded { outcome: VoteOutcome::Accepted, .. } = e.body {
            *counts.entry(e.at.timestamp_millis().div_euclid(width)).or_default() += 1;
        }
    }
    let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    (first..=last)
        .map(|k| Bucket {
            start: DateTime::from_timestamp_millis(k * width).expect("bucket start in range"),
            count: counts.get(&k).copied().unwrap_or(0),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthSeries {
    /// Mean body length (chars) of the population right after each activation.
    pub raw: Vec<f64>,
    /// Trailing mean over the last [`LENGTH_WINDOW`] entries of `raw`.
    pub smoothed: Vec<f64>,
}

pub fn trailing_mean(raw: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(raw.len());
    let mut sum = 0.0;
    for i in 0..raw.len() {
        sum += raw[i];
        if i >= window {
            sum -= raw[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn length_series(raw: Vec<f64>) -> LengthSeries {
    let smoothed = trailing_mean(&raw, LENGTH_WINDOW);
    LengthSeries { raw, smoothed }
}

fn mean_member_length(state: &CampaignState) -> f64 {
    let members = &state.population.members;
    let total: usize = members.iter().filter_map(|id| state.concept(id)).map(GameConcept::body_len).sum();
    total as f64 / members.len().max(1) as f64
}

/// Per-activation mean population length, recomputed by replaying `events`.
pub fn activation_lengths(events: &[Event]) -> Result<Vec<f64>, StoreError> {
    let mut state = CampaignState::default();
    let mut raw = Vec::new();
    for e in events {
        state.apply(e).map_err(|err| StoreError::CorruptLog { seq: err.seq, reason: err.reason })?;
        if matches!(e.body, EventBody::ActivationCompleted { .. }) {
            raw.push(mean_member_length(&state));
        }
    }
    Ok(raw)
}

pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

/// Ranked word counts: lowercase, split on non-alphanumerics, stopwords
/// removed, descending count then alphabetical.
pub fn word_frequencies<'a>(bodies: impl IntoIterator<Item = &'a str>, stopwords: &[impl AsRef<str>]) -> Vec<(String, u64)> {
    let stop: std::collections::BTreeSet<&str> = stopwords.iter().map(AsRef::as_ref).collect();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for body in bodies {
        for word in body.to_lowercase().split(|c: char| !c.is_alphanumeric()) {
            if !word.is_empty() && !stop.contains(word) {
                *counts.entry(word.to_string()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Which population a word export covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationPick {
    Initial,
    Final,
}

/// Member bodies of the initial or the final population.
pub fn population_bodies(events: &[Event], pick: PopulationPick) -> Result<Vec<String>, StoreError> {
    let mut state = CampaignState::default();
    let mut initial: Option<Vec<String>> = None;
    for e in events {
        if pick == PopulationPick::Initial && initial.is_none() && matches!(e.body, EventBody::ActivationCompleted { .. }) {
            initial = Some(bodies(&state));
        }
        state.apply(e).map_err(|err| StoreError::CorruptLog { seq: err.seq, reason: err.reason })?;
    }
    Ok(match pick {
        PopulationPick::Initial => initial.unwrap_or_else(|| bodies(&state)),
        PopulationPick::Final => bodies(&state),
    })
}

fn bodies(state: &CampaignState) -> Vec<String> {
    state.population.members.iter().filter_map(|id| state.concept(id)).map(|c| c.body.clone()).collect()
}

/// Summary served to dashboards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignStats {
    pub iteration: u64,
    pub total_concepts: usize,
    pub total_evals: u64,
    pub timeline: Vec<Bucket>,
    pub avg_length: LengthSeries,
}

pub fn campaign_stats(state: &CampaignState, events: &[Event], bucket: Duration) -> Result<CampaignStats, StoreError> {
    Ok(CampaignStats {
        iteration: state.population.iteration,
        total_concepts: state.concepts.len(),
        total_evals: state.accepted_votes,
        timeline: eval_timeline(events, bucket),
        avg_length: length_series(activation_lengths(events)?),
    })
}

fn to_csv<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

pub fn timeline_csv(buckets: &[Bucket]) -> String {
    to_csv(
        ["bucket_start", "count"],
        buckets.iter().map(|b| [b.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), b.count.to_string()]),
    )
}

pub fn lengths_csv(series: &LengthSeries) -> String {
    to_csv(
        ["activation", "mean_length", "smoothed"],
        series.raw.iter().zip(&series.smoothed).enumerate().map(|(i, (r, s))| [(i + 1).to_string(), format!("{r:.3}"), format!("{s:.3}")]),
    )
}

pub fn words_csv(words: &[(String, u64)]) -> String {
    to_csv(["word", "count"], words.iter().map(|(w, c)| [w.clone(), c.to_string()]))
}
