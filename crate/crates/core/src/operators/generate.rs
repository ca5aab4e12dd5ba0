//! Drives one operator call end to end: render, complete, parse, enforce
//! section limits, reject duplicates, re-prompt when needed.

use rand::Rng;
use thiserror::Error;

use super::backend::{BackendError, CompletionRequest, OperatorBackend, OperatorTask};
use super::parse::{parse_concept, ParseError};
use super::render::{render_crossover_prompt, render_init_prompt, render_mutation_prompt, Draft, Individual, RenderError, RenderedPrompt};
use super::template::{SectionSpec, TemplateSet};
use crate::config::CampaignConfig;
use crate::domain::{normalize_body, Section, SECTION_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OperatorError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("generation failed after {attempts} attempt(s): {last}")]
    GenerationFailed { attempts: u32, last: String },
    #[error("offspring duplicates a parent after normalization")]
    DegenerateOffspring,
}

#[derive(Debug, Clone)]
pub struct OperatorSettings {
    pub brief: String,
    pub interpretations: Vec<String>,
    pub focus_list: Vec<String>,
    pub generation_attempts: u32,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl OperatorSettings {
    pub fn from_config(c: &CampaignConfig) -> Self {
        Self {
            brief: c.brief.clone(),
            interpretations: c.interpretations.clone(),
            focus_list: c.mutation_focus_list.clone(),
            generation_attempts: c.backend.generation_attempts.max(1),
            max_tokens: c.backend.max_tokens,
            temperature: c.backend.temperature,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Operators {
    templates: TemplateSet,
    settings: OperatorSettings,
}

/// Truncates to at most `limit` chars, preferring the last sentence end.
pub fn truncate_at_sentence(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let cut: String = text.chars().take(limit).collect();
    match cut.rfind(['.', '!', '?']) {
        Some(pos) if pos > 0 => cut[..=pos].to_string(),
        _ => cut.trim_end().to_string(),
    }
}

fn overlong(s: &Section) -> bool {
    s.char_limit.is_some_and(|l| s.char_len() as f64 > l as f64 * SECTION_TOLERANCE)
}

impl Operators {
    pub fn new(templates: TemplateSet, settings: OperatorSettings) -> Self {
        Self { templates, settings }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn settings(&self) -> &OperatorSettings {
        &self.settings
    }

    pub fn schema(&self) -> &[SectionSpec] {
        self.templates.schema()
    }

    fn run<R: Rng + ?Sized>(
        &self,
        backend: &dyn OperatorBackend,
        prompt: &RenderedPrompt,
        task: OperatorTask,
        schema: &[SectionSpec],
        avoid: &[&str],
        rng: &mut R,
    ) -> Result<Draft, OperatorError> {
        for w in &prompt.warnings {
            log::warn!("{w}");
        }
        let limit = self.settings.generation_attempts.max(1);
        let nonce = rng.next_u64();
        let avoid: Vec<String> = avoid.iter().map(|b| normalize_body(b)).collect();
        let mut overlong_reprompted = false;
        let mut duplicate_reprompted = false;
        let mut last = String::from("no attempt made");
        for attempt in 1..=limit {
            let request = CompletionRequest {
                prompt: prompt.text.clone(),
                max_length: self.settings.max_tokens,
                temperature: self.settings.temperature,
                attempt,
                seed: nonce,
                task: task.clone(),
            };
            let raw = backend.complete(&request)?.text;
            let mut sections = match parse_concept(&raw, schema) {
                Ok(s) => s,
                Err(e @ ParseError::MalformedResponse { .. }) => {
                    log::warn!("malformed operator response (attempt {attempt}/{limit}): {e}");
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(OperatorError::GenerationFailed { attempts: attempt, last: e.to_string() }),
            };
            if sections.iter().any(overlong) {
                if !overlong_reprompted && attempt < limit {
                    overlong_reprompted = true;
                    last = "section over its length limit".into();
                    continue;
                }
                for s in sections.iter_mut().filter(|s| overlong(s)) {
                    s.text = truncate_at_sentence(&s.text, s.char_limit.unwrap_or(usize::MAX));
                }
            }
            let draft = Draft::new(sections);
            if avoid.contains(&normalize_body(&draft.body)) {
                if !duplicate_reprompted && attempt < limit {
                    duplicate_reprompted = true;
                    last = "offspring duplicates a parent".into();
                    continue;
                }
                return Err(OperatorError::DegenerateOffspring);
            }
            return Ok(draft);
        }
        Err(OperatorError::GenerationFailed { attempts: limit, last })
    }

    /// A random individual from the brief. Returns the interpretation drawn, if any.
    pub fn random<R: Rng + ?Sized>(
        &self,
        backend: &dyn OperatorBackend,
        rng: &mut R,
    ) -> Result<(Draft, Option<String>), OperatorError> {
        let prompt = render_init_prompt(&self.templates.init, &self.settings.brief, Some(&self.settings.interpretations), rng)?;
        let draft = self.run(backend, &prompt, OperatorTask::Init, self.templates.init.section_schema(), &[], rng)?;
        Ok((draft, prompt.interpretation))
    }

    /// One offspring from two parents.
    pub fn recombine<R: Rng + ?Sized>(
        &self,
        backend: &dyn OperatorBackend,
        a: Individual<'_>,
        b: Individual<'_>,
        rng: &mut R,
    ) -> Result<Draft, OperatorError> {
        let prompt = render_crossover_prompt(&self.templates.crossover, &self.settings.brief, a, b)?;
        let task = OperatorTask::Crossover { a: a.sections.to_vec(), b: b.sections.to_vec() };
        // Only the mutated offspring is checked against the parents; this is an intermediate draft.
        self.run(backend, &prompt, task, self.templates.crossover.section_schema(), &[], rng)
    }

    /// A variation of `parent` that changes only `focus`. `avoid` lists bodies
    /// the result must not duplicate (the original parents).
    pub fn mutate<R: Rng + ?Sized>(
        &self,
        backend: &dyn OperatorBackend,
        parent: Individual<'_>,
        focus: &str,
        avoid: &[&str],
        rng: &mut R,
    ) -> Result<Draft, OperatorError> {
        let prompt = render_mutation_prompt(&self.templates.mutation, &self.settings.brief, parent, focus, &self.settings.focus_list)?;
        let task = OperatorTask::Mutation { parent: parent.sections.to_vec(), focus: focus.to_string() };
        let mut avoid = avoid.to_vec();
        avoid.push(parent.body);
        self.run(backend, &prompt, task, self.templates.mutation.section_schema(), &avoid, rng)
    }
}
