//! Marker-bearing prompt templates and their file format.
//!
//! A template file is UTF-8 text. It opens with a metadata block fenced by
//! `+++` lines (TOML: `kind` plus an ordered `[[sections]]` schema) followed by
//! the prompt text, where markers are written literally as `<BRIEF>`,
//! `<INDIVIDUAL>`, `<INDIVIDUAL_2>`, `<MUTATION>` and `<INTERPRETATION>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{TemplatePreset, TemplateSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Init,
    Crossover,
    Mutation,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Init => "init",
            TemplateKind::Crossover => "crossover",
            TemplateKind::Mutation => "mutation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Marker {
    Brief,
    Individual,
    Individual2,
    Mutation,
    Interpretation,
}

impl Marker {
    pub const ALL: [Marker; 5] =
        [Marker::Brief, Marker::Individual, Marker::Individual2, Marker::Mutation, Marker::Interpretation];

    pub fn name(self) -> &'static str {
        match self {
            Marker::Brief => "BRIEF",
            Marker::Individual => "INDIVIDUAL",
            Marker::Individual2 => "INDIVIDUAL_2",
            Marker::Mutation => "MUTATION",
            Marker::Interpretation => "INTERPRETATION",
        }
    }

    pub fn literal(self) -> String {
        format!("<{}>", self.name())
    }

    fn required(kind: TemplateKind) -> &'static [Marker] {
        match kind {
            TemplateKind::Init => &[Marker::Brief],
            TemplateKind::Crossover => &[Marker::Brief, Marker::Individual, Marker::Individual2],
            TemplateKind::Mutation => &[Marker::Brief, Marker::Individual, Marker::Mutation],
        }
    }

    fn allowed(kind: TemplateKind) -> &'static [Marker] {
        match kind {
            TemplateKind::Init => &[Marker::Brief, Marker::Interpretation],
            _ => Marker::required(kind),
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.name())
    }
}

/// One labelled part of the answer structure requested by a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl SectionSpec {
    pub fn new(label: &str, char_limit: Option<usize>) -> Self {
        Self { label: label.to_string(), char_limit, aliases: Vec::new() }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{kind} template is missing marker {marker}")]
    MissingMarker { kind: TemplateKind, marker: Marker },
    #[error("{kind} template must not contain marker {marker}")]
    UnexpectedMarker { kind: TemplateKind, marker: Marker },
    #[error("template declares kind {found}, expected {expected}")]
    WrongKind { expected: TemplateKind, found: TemplateKind },
    #[error("template has an empty section schema")]
    EmptySchema,
    #[error("template metadata block: {0}")]
    Metadata(String),
    #[error("template file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("template file {path}: {inner}")]
    InFile { path: PathBuf, inner: Box<TemplateError> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    text: String,
    markers: BTreeSet<Marker>,
    section_schema: Vec<SectionSpec>,
}

#[derive(Deserialize)]
struct Metadata {
    kind: TemplateKind,
    #[serde(default)]
    sections: Vec<SectionSpec>,
}

const FENCE: &str = "+++";

fn scan_markers(text: &str) -> BTreeSet<Marker> {
    Marker::ALL.into_iter().filter(|m| text.contains(&m.literal())).collect()
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, text: impl Into<String>, section_schema: Vec<SectionSpec>) -> Result<Self, TemplateError> {
        let text = text.into();
        let markers = scan_markers(&text);
        for &m in Marker::required(kind) {
            if !markers.contains(&m) {
                return Err(TemplateError::MissingMarker { kind, marker: m });
            }
        }
        if let Some(&m) = markers.iter().find(|m| !Marker::allowed(kind).contains(m)) {
            return Err(TemplateError::UnexpectedMarker { kind, marker: m });
        }
        if section_schema.is_empty() {
            return Err(TemplateError::EmptySchema);
        }
        Ok(Self { kind, text, markers, section_schema })
    }

    /// Parses the file format: fenced TOML metadata, then the prompt text.
    pub fn parse(contents: &str) -> Result<Self, TemplateError> {
        let contents = contents.strip_prefix('\u{feff}').unwrap_or(contents);
        let mut lines = contents.split_inclusive('\n');
        let first = lines.next().unwrap_or_default();
        if first.trim_end() != FENCE {
            return Err(TemplateError::Metadata(format!("file must start with a `{FENCE}` line")));
        }
        let mut meta = String::new();
        let mut closed = false;
        for line in lines.by_ref() {
            if line.trim_end() == FENCE {
                closed = true;
                break;
            }
            meta.push_str(line);
        }
        if !closed {
            return Err(TemplateError::Metadata(format!("missing closing `{FENCE}` line")));
        }
        let body: String = lines.collect();
        let meta: Metadata = toml::from_str(&meta).map_err(|e| TemplateError::Metadata(e.to_string()))?;
        Self::new(meta.kind, body.trim_end_matches(['\n', '\r']), meta.sections)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| TemplateError::InFile { path: path.to_path_buf(), inner: Box::new(e) })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn markers(&self) -> &BTreeSet<Marker> {
        &self.markers
    }

    pub fn has_marker(&self, m: Marker) -> bool {
        self.markers.contains(&m)
    }

    pub fn section_schema(&self) -> &[SectionSpec] {
        &self.section_schema
    }

    /// Substitutes markers in one left-to-right pass. Substituted values are
    /// never rescanned, and marker literals inside values are defused to their
    /// bare names so the output never carries an unresolved marker.
    pub fn render(&self, values: &BTreeMap<Marker, &str>) -> String {
        let mut out = String::with_capacity(self.text.len() + values.values().map(|v| v.len()).sum::<usize>());
        let mut rest = self.text.as_str();
        'outer: while let Some(pos) = rest.find('<') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            for m in Marker::ALL {
                let lit = m.literal();
                if tail.starts_with(&lit) {
                    out.push_str(&defuse(values.get(&m).copied().unwrap_or("")));
                    rest = &tail[lit.len()..];
                    continue 'outer;
                }
            }
            out.push('<');
            rest = &tail[1..];
        }
        out.push_str(rest);
        out
    }
}

/// Replaces marker literals in a substituted value by their bare names.
pub fn defuse(value: &str) -> String {
    let mut v = value.to_string();
    // Removing brackets can assemble a new literal ("<<BRIEF>>"), so repeat until none is left.
    while let Some(m) = Marker::ALL.into_iter().find(|m| v.contains(&m.literal())) {
        v = v.replace(&m.literal(), m.name());
    }
    v
}

pub fn has_unresolved_markers(text: &str) -> bool {
    !scan_markers(text).is_empty()
}

/// The three templates a campaign needs.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub init: PromptTemplate,
    pub crossover: PromptTemplate,
    pub mutation: PromptTemplate,
}

fn builtin_text(preset: TemplatePreset, kind: TemplateKind) -> &'static str {
    use TemplateKind::*;
    use TemplatePreset::*;
    match (preset, kind) {
        (Minimalist, Init) => include_str!("../../templates/minimalist_init.txt"),
        (Minimalist, Crossover) => include_str!("../../templates/minimalist_crossover.txt"),
        (Minimalist, Mutation) => include_str!("../../templates/minimalist_mutation.txt"),
        (BoardGame, Init) => include_str!("../../templates/board_game_init.txt"),
        (BoardGame, Crossover) => include_str!("../../templates/board_game_crossover.txt"),
        (BoardGame, Mutation) => include_str!("../../templates/board_game_mutation.txt"),
        (Roots, Init) => include_str!("../../templates/roots_init.txt"),
        (Roots, Crossover) => include_str!("../../templates/roots_crossover.txt"),
        (Roots, Mutation) => include_str!("../../templates/roots_mutation.txt"),
    }
}

/// Interpretations of the "roots" theme shipped with the `roots` preset.
pub const ROOTS_INTERPRETATIONS: [&str; 4] = [
    "the part of a plant that is below the ground and that absorbs water and minerals from the soil",
    "the part of a tooth within the socket",
    "one or more progenitors of a group of descendants",
    "the essential core",
];

impl TemplateSet {
    pub fn builtin(preset: TemplatePreset) -> Self {
        let get = |kind| {
            let t = PromptTemplate::parse(builtin_text(preset, kind)).expect("built-in templates are valid");
            debug_assert_eq!(t.kind(), kind);
            t
        };
        Self { init: get(TemplateKind::Init), crossover: get(TemplateKind::Crossover), mutation: get(TemplateKind::Mutation) }
    }

    /// Loads the configured template files, falling back to the preset for any not given.
    pub fn from_settings(settings: &TemplateSettings) -> Result<Self, TemplateError> {
        let builtin = Self::builtin(settings.preset);
        let pick = |path: &Option<PathBuf>, fallback: PromptTemplate, kind| -> Result<PromptTemplate, TemplateError> {
            match path {
                None => Ok(fallback),
                Some(p) => {
                    let t = PromptTemplate::load(p)?;
                    if t.kind() != kind {
                        return Err(TemplateError::InFile {
                            path: p.clone(),
                            inner: Box::new(TemplateError::WrongKind { expected: kind, found: t.kind() }),
                        });
                    }
                    Ok(t)
                }
            }
        };
        Ok(Self {
            init: pick(&settings.init, builtin.init, TemplateKind::Init)?,
            crossover: pick(&settings.crossover, builtin.crossover, TemplateKind::Crossover)?,
            mutation: pick(&settings.mutation, builtin.mutation, TemplateKind::Mutation)?,
        })
    }

    /// Answer structure expected from every operator.
    pub fn schema(&self) -> &[SectionSpec] {
        self.init.section_schema()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<SectionSpec> {
        vec![SectionSpec::new("name of the game", None)]
    }

    #[test]
    fn builtins_parse_with_expected_markers() {
        for preset in [TemplatePreset::Minimalist, TemplatePreset::BoardGame, TemplatePreset::Roots] {
            let set = TemplateSet::builtin(preset);
            assert!(set.crossover.has_marker(Marker::Individual2));
            assert!(set.mutation.has_marker(Marker::Mutation));
            assert_eq!(set.init.has_marker(Marker::Interpretation), preset == TemplatePreset::Roots);
        }
        let min = TemplateSet::builtin(TemplatePreset::Minimalist);
        let labels: Vec<_> = min.schema().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["name of the game", "game concept", "game resources", "level design", "game instructions"]);
        assert_eq!(min.schema()[1].char_limit, Some(1000));
    }

    #[test]
    fn kind_marker_rules() {
        let err = PromptTemplate::new(TemplateKind::Crossover, "<BRIEF> <INDIVIDUAL>", schema()).unwrap_err();
        assert!(matches!(err, TemplateError::MissingMarker { marker: Marker::Individual2, .. }));
        let err = PromptTemplate::new(TemplateKind::Init, "<BRIEF> <MUTATION>", schema()).unwrap_err();
        assert!(matches!(err, TemplateError::UnexpectedMarker { marker: Marker::Mutation, .. }));
        let ok = PromptTemplate::new(TemplateKind::Init, "<BRIEF> about <INTERPRETATION>", schema()).unwrap();
        assert_eq!(ok.markers().len(), 2);
        assert!(PromptTemplate::new(TemplateKind::Init, "<BRIEF>", vec![]).is_err());
    }

    #[test]
    fn individual_does_not_match_individual_2() {
        let t = PromptTemplate::new(TemplateKind::Mutation, "<BRIEF> <INDIVIDUAL> <MUTATION>", schema()).unwrap();
        assert!(!t.has_marker(Marker::Individual2));
    }

    #[test]
    fn render_is_single_pass_and_defuses_values() {
        let t = PromptTemplate::new(TemplateKind::Crossover, "<BRIEF>|<INDIVIDUAL>|<INDIVIDUAL_2>|<x>", schema()).unwrap();
        let values = BTreeMap::from([
            (Marker::Brief, "b <INDIVIDUAL_2>"),
            (Marker::Individual, "one"),
            (Marker::Individual2, "<BRIEF>two"),
        ]);
        let out = t.render(&values);
        assert_eq!(out, "b INDIVIDUAL_2|one|BRIEFtwo|<x>");
        assert!(!has_unresolved_markers(&out));
    }

    #[test]
    fn nested_marker_literals_are_defused() {
        assert_eq!(defuse("<<INDIVIDUAL>>"), "INDIVIDUAL");
        assert_eq!(defuse("<<<BRIEF>>>x"), "BRIEFx");
    }

    #[test]
    fn file_format() {
        let text = "+++\nkind = \"mutation\"\n[[sections]]\nlabel = \"rules\"\nchar_limit = 800\n+++\n<BRIEF>\nEXAMPLE: <INDIVIDUAL>\nchange <MUTATION>\n";
        let t = PromptTemplate::parse(text).unwrap();
        assert_eq!(t.kind(), TemplateKind::Mutation);
        assert_eq!(t.text(), "<BRIEF>\nEXAMPLE: <INDIVIDUAL>\nchange <MUTATION>");
        assert_eq!(t.section_schema()[0].char_limit, Some(800));
        assert!(PromptTemplate::parse("kind = \"init\"\n<BRIEF>").is_err());
        assert!(PromptTemplate::parse("+++\nkind = \"init\"\n<BRIEF>").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let settings = TemplateSettings { init: Some(PathBuf::from("/nonexistent/init.txt")), ..Default::default() };
        let err = TemplateSet::from_settings(&settings).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/init.txt"), "{err}");
    }
}
