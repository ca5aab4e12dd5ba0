//! LLM-implemented variation operators: templates, rendering, completion
//! backends and response parsing.

pub mod backend;
pub mod generate;
pub mod mock;
pub mod parse;
pub mod render;
pub mod template;

pub use backend::{BackendError, BackendProfile, ChatBackend, Completion, CompletionRequest, OperatorBackend, OperatorTask, RetryPolicy};
pub use generate::{OperatorError, OperatorSettings, Operators};
pub use mock::MockBackend;
pub use parse::{format_response, parse_concept, ParseError};
pub use render::{render_crossover_prompt, render_init_prompt, render_mutation_prompt, Draft, Individual, RenderError, RenderedPrompt};
pub use template::{Marker, PromptTemplate, SectionSpec, TemplateError, TemplateKind, TemplateSet};

use std::sync::Arc;

use crate::config::{BackendKind, CampaignConfig};

/// Builds the backend the config asks for.
pub fn backend_from_config(config: &CampaignConfig, schema: &[SectionSpec]) -> Arc<dyn OperatorBackend> {
    match config.backend.kind {
        BackendKind::Mock => Arc::new(MockBackend::new(config.backend.mock_seed.unwrap_or(config.rng_seed), schema.to_vec())),
        BackendKind::Http => Arc::new(ChatBackend::new(BackendProfile::from_settings(&config.backend))),
    }
}
