//! Structured parsing of free-text operator answers.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::template::SectionSpec;
use crate::domain::{capitalize, Section};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("response has {recognized} recognizable sections, need at least {required}")]
    MalformedResponse { recognized: usize, required: usize },
    #[error("section schema is empty")]
    EmptySchema,
}

const CLOSING_PHRASES: [&str; 10] = [
    "i hope",
    "hope you",
    "let me know",
    "enjoy",
    "feel free",
    "have fun",
    "happy gaming",
    "good luck",
    "i trust",
    "thank you",
];

fn numbering() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\(?(\d{1,2})\s*[\).:]\s*").expect("valid regex"))
}

/// Case-insensitive prefix strip on chars.
fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let mut it = s.char_indices();
    for p in prefix.chars() {
        let (_, c) = it.next()?;
        if !c.to_lowercase().eq(p.to_lowercase()) {
            return None;
        }
    }
    Some(match it.next() {
        Some((i, _)) => &s[i..],
        None => "",
    })
}

fn aliases(spec: &SectionSpec) -> Vec<String> {
    let mut out = vec![spec.label.to_lowercase()];
    if let Some(stripped) = spec.label.to_lowercase().strip_prefix("the ") {
        out.push(stripped.to_string());
    }
    out.extend(spec.aliases.iter().map(|a| a.to_lowercase()));
    out
}

/// After a matched label: optional parenthetical, then a separator or end of line.
fn after_label(rest: &str) -> Option<&str> {
    let mut rest = rest.trim_start();
    if rest.starts_with('(') {
        let close = rest.find(')')?;
        rest = rest[close + 1..].trim_start();
    }
    if rest.is_empty() {
        return Some("");
    }
    for sep in [':', '-', '\u{2013}', '\u{2014}'] {
        if let Some(r) = rest.strip_prefix(sep) {
            return Some(r.trim());
        }
    }
    None
}

struct Header<'a> {
    index: usize,
    rest: &'a str,
}

struct Matcher {
    /// (alias, section index), longest alias first.
    aliases: Vec<(String, usize)>,
    len: usize,
}

impl Matcher {
    fn new(schema: &[SectionSpec]) -> Self {
        let mut aliases: Vec<(String, usize)> =
            schema.iter().enumerate().flat_map(|(i, s)| aliases(s).into_iter().map(move |a| (a, i))).collect();
        aliases.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.1.cmp(&b.1)));
        Self { aliases, len: schema.len() }
    }

    fn header<'a>(&self, cleaned: &'a str, next_index: usize) -> Option<Header<'a>> {
        let (number, unnumbered) = match numbering().captures(cleaned) {
            Some(c) => (c[1].parse::<usize>().ok(), &cleaned[c[0].len()..]),
            None => (None, cleaned),
        };
        let candidate = unnumbered.trim_start_matches(['*', '_', ' ']);
        let candidate = strip_prefix_ci(candidate, "the ").unwrap_or(candidate);
        for (alias, index) in &self.aliases {
            if let Some(rest) = strip_prefix_ci(candidate, alias).and_then(after_label) {
                return Some(Header { index: *index, rest });
            }
        }
        // A bare numbered line stands in for the next expected section.
        match number {
            Some(n) if n >= 1 && n - 1 == next_index && n <= self.len => Some(Header { index: n - 1, rest: unnumbered.trim() }),
            _ => None,
        }
    }
}

fn clean_line(line: &str) -> String {
    let s = line.replace("**", "").replace("__", "");
    s.trim().trim_start_matches(['#', '>', '-', '\u{2022}', '*']).trim().to_string()
}

fn is_closing(paragraph: &str) -> bool {
    let p = paragraph.trim().to_lowercase();
    CLOSING_PHRASES.iter().any(|c| p.starts_with(c))
}

fn tidy(lines: &[String]) -> String {
    let joined = lines.join("\n");
    let mut paragraphs: Vec<&str> = joined.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).collect();
    paragraphs.dedup();
    paragraphs.join("\n\n")
}

/// Splits `raw` into the schema's sections.
///
/// Headers may be numbered (`1)`, `1.`), bold (`**Label**:`), markdown
/// headings, or plain `Label:` lines. Text before the first header and
/// closing pleasantries after the last section are dropped.
pub fn parse_concept(raw: &str, schema: &[SectionSpec]) -> Result<Vec<Section>, ParseError> {
    if schema.is_empty() {
        return Err(ParseError::EmptySchema);
    }
    let matcher = Matcher::new(schema);
    let mut bodies: Vec<Option<Vec<String>>> = vec![None; schema.len()];
    let mut current: Option<usize> = None;
    let mut next_index = 0usize;

    for line in raw.replace("\r\n", "\n").lines() {
        let cleaned = clean_line(line);
        if let Some(h) = matcher.header(&cleaned, next_index) {
            current = Some(h.index);
            next_index = h.index + 1;
            let slot = bodies[h.index].get_or_insert_with(Vec::new);
            if !h.rest.is_empty() {
                slot.push(h.rest.to_string());
            }
            continue;
        }
        if let Some(i) = current {
            let slot = bodies[i].get_or_insert_with(Vec::new);
            if cleaned.is_empty() {
                slot.push(String::new());
            } else {
                slot.push(line.trim().replace("**", ""));
            }
        }
    }

    // Drop trailing closing paragraphs from whichever section came last.
    if let Some(last) = current {
        if let Some(lines) = bodies[last].as_mut() {
            loop {
                let text = lines.join("\n");
                let Some(split) = text.trim_end().rfind("\n\n") else { break };
                if is_closing(&text[split..]) {
                    let keep = text[..split].lines().count();
                    lines.truncate(keep);
                } else {
                    break;
                }
            }
        }
    }

    let sections: Vec<Section> = schema
        .iter()
        .zip(bodies)
        .map(|(spec, lines)| Section::new(spec.label.clone(), tidy(&lines.unwrap_or_default()), spec.char_limit))
        .collect();
    let recognized = sections.iter().filter(|s| !s.text.is_empty()).count();
    let required = schema.len().div_ceil(2);
    if recognized < required {
        return Err(ParseError::MalformedResponse { recognized, required });
    }
    Ok(sections)
}

/// Formats sections the way the mock backend answers: numbered `N) Label: text` blocks.
pub fn format_response(sections: &[Section]) -> String {
    sections
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}) {}: {}", i + 1, capitalize(&s.label), s.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TemplatePreset;
    use crate::operators::template::TemplateSet;

    fn schema() -> Vec<SectionSpec> {
        TemplateSet::builtin(TemplatePreset::Minimalist).schema().to_vec()
    }

    #[test]
    fn numbered_and_bold_variants() {
        let raw = "Sure, here is your game!\n\n1) Name of the game: Blink\n2. **Game concept**: Press to blink.\n\
                   **Game resources:** One pixel.\n## Level design\nRooms get darker.\nLevel design stays short.\n\
                   5) Game instructions - Press space.\n\nI hope you enjoy this game!";
        let s = parse_concept(raw, &schema()).unwrap();
        assert_eq!(s[0].text, "Blink");
        assert_eq!(s[1].text, "Press to blink.");
        assert_eq!(s[2].text, "One pixel.");
        assert_eq!(s[3].text, "Rooms get darker.\nLevel design stays short.");
        assert_eq!(s[4].text, "Press space.");
        assert_eq!(s[1].char_limit, Some(1000));
    }

    #[test]
    fn bare_numbers_fill_next_section() {
        let raw = "1) Pixel Run\n2) game concept: run.\n3) resources: none\n4) Level design: linear\n5) Press a key";
        let s = parse_concept(raw, &schema()).unwrap();
        assert_eq!(s[0].text, "Pixel Run");
        assert_eq!(s[4].text, "Press a key");
    }

    #[test]
    fn labels_without_bodies_are_malformed() {
        let raw = "Name of the game:\nGame concept:\nGame resources:\nLevel design:\nGame instructions:";
        assert_eq!(
            parse_concept(raw, &schema()),
            Err(ParseError::MalformedResponse { recognized: 0, required: 3 })
        );
        assert_eq!(parse_concept("hello", &[]), Err(ParseError::EmptySchema));
    }

    #[test]
    fn partial_answers_accepted_at_half() {
        let raw = "Name of the game: A\nGame concept: B\nLevel design: C";
        let s = parse_concept(raw, &schema()).unwrap();
        assert_eq!(s[2].text, "");
        let raw = "Name of the game: A\nGame concept: B";
        assert!(parse_concept(raw, &schema()).is_err());
    }

    #[test]
    fn format_round_trip() {
        let sections: Vec<Section> = schema()
            .iter()
            .enumerate()
            .map(|(i, spec)| Section::new(spec.label.clone(), format!("text number {i}"), spec.char_limit))
            .collect();
        assert_eq!(parse_concept(&format_response(&sections), &schema()).unwrap(), sections);
    }
}
