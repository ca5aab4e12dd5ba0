//! Campaign configuration document and its validation.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Random,
    Seeded,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Which built-in prompt set to use when no template files are given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePreset {
    #[default]
    Minimalist,
    BoardGame,
    Roots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TemplateSettings {
    pub preset: TemplatePreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossover: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub name: String,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_ms: Vec<u64>,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Re-prompts allowed per operator call for malformed, overlong or duplicate answers.
    pub generation_attempts: u32,
    /// Seed of the mock backend's keyword pool. Defaults to the campaign rng seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_seed: Option<u64>,
    pub templates: TemplateSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            name: "mock".into(),
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            backoff_ms: vec![500, 2000, 8000],
            timeout_secs: 60,
            temperature: 1.0,
            max_tokens: 1024,
            generation_attempts: 3,
            mock_seed: None,
            templates: TemplateSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Console,
    Telegram,
    Web,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSettings {
    pub kind: ChannelKind,
    pub timezone: String,
    pub immediate_mode: bool,
    pub chat_id: String,
    pub bot_token_env: String,
    pub api_base: String,
    pub anonymous_polls: bool,
    pub listen: String,
    pub admin_token_env: String,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Console,
            timezone: "UTC".into(),
            immediate_mode: false,
            chat_id: String::new(),
            bot_token_env: "TELEGRAM_BOT_TOKEN".into(),
            api_base: "https://api.telegram.org".into(),
            anonymous_polls: true,
            listen: "127.0.0.1:8080".into(),
            admin_token_env: "IDEAFORGE_ADMIN_TOKEN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub campaign_id: Option<String>,
    pub brief: String,
    pub init_mode: InitMode,
    pub seed_concepts: Vec<String>,
    pub interpretations: Vec<String>,
    pub population_size: usize,
    pub tournament_size: usize,
    pub recombination_prob: f64,
    pub mutation_focus_list: Vec<String>,
    pub trigger_new_evals: u64,
    pub min_evals_per_published: u32,
    pub publish_slots: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    pub rng_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
    pub backend: BackendSettings,
    pub channel: ChannelSettings,
}

pub const DEFAULT_BRIEF: &str = "A white pixel is the minimum amount of information we can show on-screen, \
and pressing a key (or a button) is the least interaction we can ask players.";

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            campaign_id: None,
            brief: DEFAULT_BRIEF.into(),
            init_mode: InitMode::Random,
            seed_concepts: Vec::new(),
            interpretations: Vec::new(),
            population_size: 10,
            tournament_size: 2,
            recombination_prob: 0.7,
            mutation_focus_list: vec![
                "the goal of the game".into(),
                "the game's resources".into(),
                "the level design".into(),
                "the player's input".into(),
            ],
            trigger_new_evals: 25,
            min_evals_per_published: 1,
            publish_slots: vec!["09:00".into(), "12:00".into(), "17:00".into()],
            max_iterations: None,
            rng_seed: 0,
            log_path: None,
            backend: BackendSettings::default(),
            channel: ChannelSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

pub fn parse_slot(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M").ok()
}

/// Every rule the config breaks. Empty means valid.
pub fn validate_config(config: &CampaignConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, rule: &str| out.push(Violation { field, rule: rule.to_string() });

    if config.tournament_size < 2 {
        push("tournament_size", "must be at least 2");
    }
    if config.population_size < config.tournament_size.max(2) {
        push("population_size", "must be at least tournament_size (and at least 2)");
    }
    if !(0.0..=1.0).contains(&config.recombination_prob) || config.recombination_prob.is_nan() {
        push("recombination_prob", "must be within [0, 1]");
    }
    if config.trigger_new_evals < 1 {
        push("trigger_new_evals", "must be at least 1");
    }
    if config.mutation_focus_list.is_empty() {
        push("mutation_focus_list", "must not be empty");
    } else if config.mutation_focus_list.iter().any(|f| f.trim().is_empty()) {
        push("mutation_focus_list", "entries must not be blank");
    }
    if config.brief.trim().is_empty() {
        push("brief", "must not be empty");
    }

    let slots: Vec<_> = config.publish_slots.iter().map(|s| parse_slot(s)).collect();
    if slots.iter().any(Option::is_none) {
        push("publish_slots", "every slot must be a local time formatted HH:MM");
    } else if slots.windows(2).any(|w| w[0] >= w[1]) {
        push("publish_slots", "slots must be strictly increasing within a day");
    } else if slots.is_empty() && !config.channel.immediate_mode {
        push("publish_slots", "at least one slot is required unless channel.immediate_mode is set");
    }
    if config.channel.timezone.parse::<chrono_tz::Tz>().is_err() {
        push("channel.timezone", "must be an IANA timezone identifier");
    }

    if config.backend.max_attempts < 1 {
        push("backend.max_attempts", "must be at least 1");
    }
    if config.backend.generation_attempts < 1 {
        push("backend.generation_attempts", "must be at least 1");
    }
    if config.backend.kind == BackendKind::Http && config.backend.model.trim().is_empty() {
        push("backend.model", "required for the http backend");
    }
    out
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Reads the document and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config =
            Self::from_toml_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        if config.campaign_id.is_none() {
            config.campaign_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut() {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut self.log_path);
        fix(&mut self.backend.templates.init);
        fix(&mut self.backend.templates.crossover);
        fix(&mut self.backend.templates.mutation);
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        let v = validate_config(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn slots(&self) -> Vec<NaiveTime> {
        self.publish_slots.iter().filter_map(|s| parse_slot(s)).collect()
    }
}
