//! Deterministic offline backend used by tests and simulations.
//!
//! * init: schema-shaped text built from a keyword pool, keyed by seed;
//! * crossover: section-wise merge, odd sections from parent A and even ones
//!   from parent B, with the two names joined;
//! * mutation: rewrites only the section the focus names (one keyword swapped)
//!   and tags it with the focus.
//!
//! Keywords survive crossover unchanged, so keyword-based voter models see
//! heritable traits.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::backend::{Completion, CompletionRequest, OperatorBackend, OperatorTask, BackendError};
use super::parse::format_response;
use super::template::SectionSpec;
use crate::domain::{capitalize, Section};

pub const KEYWORD_POOL: [&str; 24] = [
    "echo", "mirror", "shadow", "light", "gravity", "sound", "color", "time", "rhythm", "pixel", "maze", "portal",
    "wind", "water", "fire", "memory", "balance", "orbit", "magnet", "rotation", "reflection", "bounce", "silence",
    "spark",
];

const SENTENCES: [&str; 4] = [
    "A minimalist game where the player bends {a} and {b} to solve puzzles and reach the exit.",
    "A plain background, one character, and objects shaped by {a} and {b}. Input is a single key.",
    "Levels are built around {a}, adding one obstacle at a time and mixing in {b}.",
    "Press the key to use {a}, avoid the {b} and reach the exit.",
];

const TAG_OPEN: &str = " (variant ";
const MAX_NAME_CHARS: usize = 40;

#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    schema: Vec<SectionSpec>,
}

impl MockBackend {
    pub fn new(seed: u64, schema: Vec<SectionSpec>) -> Self {
        Self { seed, schema }
    }

    fn rng_for(&self, request: &CompletionRequest) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(request.seed ^ (u64::from(request.attempt) << 48));
        rng
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<Section> {
        let kws: Vec<&str> = KEYWORD_POOL.choose_multiple(rng, 5).copied().collect();
        self.schema
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let text = if i == 0 {
                    format!("{}{}", capitalize(kws[0]), capitalize(kws[1]))
                } else {
                    SENTENCES[(i - 1) % SENTENCES.len()].replace("{a}", kws[i % 5]).replace("{b}", kws[(i + 1) % 5])
                };
                Section::new(spec.label.clone(), text, spec.char_limit)
            })
            .collect()
    }

    pub fn crossover(a: &[Section], b: &[Section]) -> Vec<Section> {
        a.iter()
            .enumerate()
            .map(|(i, sa)| match (i, b.get(i)) {
                (0, Some(sb)) => Section { text: merge_names(&sa.text, &sb.text), ..sa.clone() },
                (i, Some(sb)) if i % 2 == 0 => sb.clone(),
                _ => sa.clone(),
            })
            .collect()
    }

    pub fn mutate<R: Rng + ?Sized>(parent: &[Section], focus: &str, rng: &mut R) -> Vec<Section> {
        let idx = focus_section_index(focus, parent);
        let mut out = parent.to_vec();
        if let Some(section) = out.get_mut(idx) {
            section.text = rewrite(&section.text, focus, rng);
        }
        out
    }
}

impl OperatorBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let mut rng = self.rng_for(request);
        let sections = match &request.task {
            OperatorTask::Init => self.init(&mut rng),
            OperatorTask::Crossover { a, b } => Self::crossover(a, b),
            OperatorTask::Mutation { parent, focus } => Self::mutate(parent, focus, &mut rng),
        };
        Ok(Completion { text: format_response(&sections), attempts: 1 })
    }
}

fn merge_names(a: &str, b: &str) -> String {
    let joined = format!("{a}-{b}");
    if joined.chars().count() <= MAX_NAME_CHARS {
        return joined;
    }
    let head = a.split('-').next().unwrap_or(a);
    let tail = b.rsplit('-').next().unwrap_or(b);
    format!("{head}-{tail}")
}

fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !matches!(*w, "the" | "of" | "s" | "game" | "a" | "an"))
        .map(str::to_string)
        .collect()
}

/// Index of the section a focus like "the level design" refers to.
/// Falls back to the second section (the main description) when no label matches.
pub fn focus_section_index(focus: &str, sections: &[Section]) -> usize {
    let focus_words = words(focus);
    let best = sections
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, s)| (words(&s.label).iter().filter(|w| focus_words.contains(w)).count(), i))
        .filter(|(score, _)| *score > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    match best {
        Some((_, i)) => i,
        None => 1.min(sections.len().saturating_sub(1)),
    }
}

fn rewrite<R: Rng + ?Sized>(text: &str, focus: &str, rng: &mut R) -> String {
    let base = match text.find(TAG_OPEN) {
        Some(pos) => &text[..pos],
        None => text,
    };
    let present: Vec<&str> = KEYWORD_POOL
        .iter()
        .copied()
        .filter(|k| words(base).iter().any(|w| w == k))
        .collect();
    let replacement_pool: Vec<&str> = KEYWORD_POOL.iter().copied().filter(|k| !present.contains(k)).collect();
    let new_word = *replacement_pool.choose(rng).unwrap_or(&KEYWORD_POOL[0]);
    let rewritten = match present.choose(rng) {
        Some(old) => {
            let re = Regex::new(&format!(r"\b{}\b", regex::escape(old))).expect("escaped keyword is a valid regex");
            re.replace_all(base, new_word).into_owned()
        }
        None => format!("{base} It now features {new_word}."),
    };
    format!("{rewritten}{TAG_OPEN}{})", words(focus).join("-"))
}
