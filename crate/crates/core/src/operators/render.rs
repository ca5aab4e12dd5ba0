//! Prompt rendering for the three operators.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use super::template::{Marker, PromptTemplate, TemplateKind};
use crate::domain::{format_body, ConceptId, GameConcept, Section};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("the design brief is empty")]
    EmptyBrief,
    #[error("template uses <INTERPRETATION> but no interpretations are configured")]
    MissingInterpretationList,
    #[error("recombination needs two distinct parents")]
    IdenticalParents,
    #[error("parent body is empty")]
    EmptyParentBody,
    #[error("mutation focus {0:?} is not in the configured focus list")]
    FocusNotInList(String),
    #[error("expected a {expected} template, got {found}")]
    WrongTemplate { expected: TemplateKind, found: TemplateKind },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub warnings: Vec<String>,
    /// The interpretation drawn for an init prompt, if any.
    pub interpretation: Option<String>,
}

/// A concept as an operator sees it: a body plus its parsed sections.
#[derive(Debug, Clone, Copy)]
pub struct Individual<'a> {
    pub id: Option<&'a ConceptId>,
    pub body: &'a str,
    pub sections: &'a [Section],
}

impl<'a> From<&'a GameConcept> for Individual<'a> {
    fn from(c: &'a GameConcept) -> Self {
        Individual { id: Some(&c.concept_id), body: &c.body, sections: &c.sections }
    }
}

/// An operator's intermediate result, e.g. a recombined child before mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub sections: Vec<Section>,
    pub body: String,
}

impl Draft {
    pub fn new(sections: Vec<Section>) -> Self {
        let body = format_body(&sections);
        Self { sections, body }
    }

    pub fn individual(&self) -> Individual<'_> {
        Individual { id: None, body: &self.body, sections: &self.sections }
    }
}

fn expect_kind(t: &PromptTemplate, expected: TemplateKind) -> Result<(), RenderError> {
    if t.kind() != expected {
        return Err(RenderError::WrongTemplate { expected, found: t.kind() });
    }
    Ok(())
}

pub fn render_init_prompt<R: Rng + ?Sized>(
    template: &PromptTemplate,
    brief: &str,
    interpretations: Option<&[String]>,
    rng: &mut R,
) -> Result<RenderedPrompt, RenderError> {
    expect_kind(template, TemplateKind::Init)?;
    if brief.trim().is_empty() {
        return Err(RenderError::EmptyBrief);
    }
    let mut interpretation = None;
    if template.has_marker(Marker::Interpretation) {
        let list = interpretations.filter(|l| !l.is_empty()).ok_or(RenderError::MissingInterpretationList)?;
        interpretation = Some(list[rng.random_range(0..list.len())].clone());
    }
    let mut values = BTreeMap::from([(Marker::Brief, brief.trim())]);
    if let Some(i) = interpretation.as_deref() {
        values.insert(Marker::Interpretation, i);
    }
    Ok(RenderedPrompt { text: template.render(&values), warnings: Vec::new(), interpretation })
}

pub fn render_crossover_prompt(
    template: &PromptTemplate,
    brief: &str,
    parent_a: Individual<'_>,
    parent_b: Individual<'_>,
) -> Result<RenderedPrompt, RenderError> {
    expect_kind(template, TemplateKind::Crossover)?;
    let same_id = matches!((parent_a.id, parent_b.id), (Some(a), Some(b)) if a == b);
    if same_id {
        return Err(RenderError::IdenticalParents);
    }
    if parent_a.body.trim().is_empty() || parent_b.body.trim().is_empty() {
        return Err(RenderError::EmptyParentBody);
    }
    let mut warnings = Vec::new();
    if brief.trim().is_empty() {
        warnings.push("empty brief substituted into crossover prompt".to_string());
    }
    let values = BTreeMap::from([
        (Marker::Brief, brief.trim()),
        (Marker::Individual, parent_a.body),
        (Marker::Individual2, parent_b.body),
    ]);
    Ok(RenderedPrompt { text: template.render(&values), warnings, interpretation: None })
}

pub fn render_mutation_prompt(
    template: &PromptTemplate,
    brief: &str,
    parent: Individual<'_>,
    focus: &str,
    focus_list: &[String],
) -> Result<RenderedPrompt, RenderError> {
    expect_kind(template, TemplateKind::Mutation)?;
    if !focus_list.iter().any(|f| f == focus) {
        return Err(RenderError::FocusNotInList(focus.to_string()));
    }
    if parent.body.trim().is_empty() {
        return Err(RenderError::EmptyParentBody);
    }
    let mut warnings = Vec::new();
    if brief.trim().is_empty() {
        warnings.push("empty brief substituted into mutation prompt".to_string());
    }
    let values = BTreeMap::from([(Marker::Brief, brief.trim()), (Marker::Individual, parent.body), (Marker::Mutation, focus)]);
    Ok(RenderedPrompt { text: template.render(&values), warnings, interpretation: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TemplatePreset;
    use crate::operators::template::{has_unresolved_markers, TemplateSet, ROOTS_INTERPRETATIONS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn individual<'a>(id: &'a ConceptId, body: &'a str) -> Individual<'a> {
        Individual { id: Some(id), body, sections: &[] }
    }

    #[test]
    fn roots_interpretation_substituted() {
        let set = TemplateSet::builtin(TemplatePreset::Roots);
        let list: Vec<String> = ROOTS_INTERPRETATIONS.iter().map(|s| s.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut saw_plant = false;
        for _ in 0..50 {
            let p = render_init_prompt(&set.init, "Global game jam theme", Some(&list), &mut rng).unwrap();
            assert!(!has_unresolved_markers(&p.text));
            saw_plant |= p.text.contains("the part of a plant that is below the ground");
        }
        assert!(saw_plant);
    }

    #[test]
    fn interpretation_required_only_when_marker_present() {
        let roots = TemplateSet::builtin(TemplatePreset::Roots);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(render_init_prompt(&roots.init, "b", None, &mut rng), Err(RenderError::MissingInterpretationList));
        assert_eq!(render_init_prompt(&roots.init, "b", Some(&[]), &mut rng), Err(RenderError::MissingInterpretationList));

        let min = TemplateSet::builtin(TemplatePreset::Minimalist);
        let list = vec!["ignored".to_string()];
        let p = render_init_prompt(&min.init, "My brief.", Some(&list), &mut rng).unwrap();
        assert!(p.text.starts_with("My brief. Act as a game designer"));
        assert!(!p.text.contains("ignored"));
        assert_eq!(render_init_prompt(&min.init, "  ", None, &mut rng), Err(RenderError::EmptyBrief));
    }

    #[test]
    fn crossover_rules() {
        let set = TemplateSet::builtin(TemplatePreset::Minimalist);
        let a = ConceptId::new("a");
        let b = ConceptId::new("b");
        let p = render_crossover_prompt(&set.crossover, "Brief.", individual(&a, "Body A"), individual(&b, "Body B")).unwrap();
        assert!(p.text.contains("EXAMPLE1: Body A"));
        assert!(p.text.contains("EXAMPLE2: Body B"));
        assert!(p.text.contains("In your response do not include any introduction or final comment."));
        assert!(p.warnings.is_empty());
        assert_eq!(
            render_crossover_prompt(&set.crossover, "Brief.", individual(&a, "x"), individual(&a, "y")),
            Err(RenderError::IdenticalParents)
        );
        let p = render_crossover_prompt(&set.crossover, "", individual(&a, "x"), individual(&b, "y")).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert!(!has_unresolved_markers(&p.text));
    }

    #[test]
    fn mutation_rules() {
        let set = TemplateSet::builtin(TemplatePreset::Minimalist);
        let id = ConceptId::new("x");
        let focus = vec!["the level design".to_string(), "the player's input".to_string()];
        let p = render_mutation_prompt(&set.mutation, "Brief.", individual(&id, "Body"), "the player's input", &focus).unwrap();
        assert!(p.text.contains("by changing only the player's input."));
        assert!(!has_unresolved_markers(&p.text));
        assert_eq!(
            render_mutation_prompt(&set.mutation, "Brief.", individual(&id, "Body"), "the story", &focus),
            Err(RenderError::FocusNotInList("the story".into()))
        );
        assert!(matches!(
            render_mutation_prompt(&set.crossover, "Brief.", individual(&id, "Body"), "the level design", &focus),
            Err(RenderError::WrongTemplate { .. })
        ));
    }
}
