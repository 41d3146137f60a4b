//! Non-correctness quality signals: output-schema conformance, style
//! substring flags, word counts, and latency summaries.
//!
//! The response schema is UTF-8 XML with root `response`, a required
//! `answer` text child, a required `idk` child whose content is the literal
//! `true` or `false`, and zero or more integer `citation` children.

use std::collections::BTreeMap;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::dataset::{test_set_index, RunRecord, TestExample};
use crate::error::{Error, Result};

/// Default trigger substrings, matched case-insensitively.
pub const DEFAULT_TRIGGERS: [(&str, &str); 3] = [
    ("according_to", "according to"),
    ("mention_knowledge", "the knowledge"),
    ("mention_sources", "the sources"),
];

/// Style rule set; the trigger list is configurable via a rules file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRules {
    pub triggers: Vec<TriggerRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub name: String,
    pub substring: String,
}

impl Default for StyleRules {
    fn default() -> Self {
        StyleRules {
            triggers: DEFAULT_TRIGGERS
                .iter()
                .map(|(name, sub)| TriggerRule {
                    name: (*name).into(),
                    substring: (*sub).into(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleFlags {
    pub according_to: bool,
    pub mention_knowledge: bool,
    pub mention_sources: bool,
    pub poor_formatting: bool,
    pub bad_style: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub model: String,
    pub test_set: String,
    pub pct_bad_style: f64,
    pub pct_according_to: f64,
    pub pct_mention_knowledge: f64,
    pub pct_mention_sources: f64,
    pub pct_poor_formatting: f64,
    pub median_words: usize,
    pub median_response_time: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceResult {
    pub well_formed: bool,
    pub required_tags_present: bool,
    pub idk_flag_parseable: bool,
    pub pass: bool,
}

/// Case-insensitive trigger-substring flags over an answer text.
/// `poor_formatting` fires on markup fragments left inside prose.
pub fn style_flags_with_rules(answer_text: &str, rules: &StyleRules) -> StyleFlags {
    let lower = answer_text.to_lowercase();
    let hit = |name: &str| {
        rules
            .triggers
            .iter()
            .any(|t| t.name == name && lower.contains(&t.substring.to_lowercase()))
    };
    let according_to = hit("according_to");
    let mention_knowledge = hit("mention_knowledge");
    let mention_sources = hit("mention_sources");
    let poor_formatting = has_markup_fragments(answer_text);
    StyleFlags {
        according_to,
        mention_knowledge,
        mention_sources,
        poor_formatting,
        bad_style: according_to || mention_knowledge || mention_sources || poor_formatting,
    }
}

pub fn style_flags(answer_text: &str) -> StyleFlags {
    style_flags_with_rules(answer_text, &StyleRules::default())
}

/// Leftover markup inside what should be plain prose: any XML-ish tag or a
/// stray angle-bracket run.
fn has_markup_fragments(text: &str) -> bool {
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '<' {
            let rest = &text[i + 1..];
            let mut seen_name = false;
            for rc in rest.chars() {
                match rc {
                    '/' if !seen_name => continue,
                    c if c.is_ascii_alphabetic() => {
                        seen_name = true;
                    }
                    '>' => return seen_name,
                    c if seen_name && (c.is_ascii_alphanumeric() || "-_ =\"'".contains(c)) => {}
                    _ => break,
                }
            }
        }
    }
    false
}

/// Whitespace-delimited token count.
pub fn word_count(answer_text: &str) -> usize {
    answer_text.split_whitespace().count()
}

/// Check a raw model output against the response schema.
pub fn check_schema(raw_output: &str) -> ConformanceResult {
    let parsed = parse_response(raw_output);
    let (well_formed, required_tags_present, idk_flag_parseable) = match parsed {
        Err(_) => (false, false, false),
        Ok(doc) => {
            let tags = doc.answer.is_some() && doc.idk_raw.is_some();
            let idk_ok = matches!(doc.idk_raw.as_deref(), Some("true") | Some("false"))
                && doc.citations_ok;
            (true, tags, idk_ok)
        }
    };
    ConformanceResult {
        well_formed,
        required_tags_present,
        idk_flag_parseable,
        pass: well_formed && required_tags_present && idk_flag_parseable,
    }
}

/// Parsed response document.
#[derive(Debug, Default)]
pub struct ResponseDoc {
    pub answer: Option<String>,
    pub idk_raw: Option<String>,
    pub citations: Vec<i64>,
    citations_ok: bool,
}

impl ResponseDoc {
    pub fn idk(&self) -> Option<bool> {
        match self.idk_raw.as_deref() {
            Some("true") => Some(true),
            Some("false") => Some(false),
            _ => None,
        }
    }
}

/// Parse a `response` document, failing on malformed XML or a wrong root.
pub fn parse_response(raw: &str) -> Result<ResponseDoc> {
    let mut reader = Reader::from_str(raw.trim());
    reader.config_mut().trim_text(true);
    let mut doc = ResponseDoc {
        citations_ok: true,
        ..Default::default()
    };
    let mut path: Vec<String> = Vec::new();
    let mut text = String::new();
    let mut saw_root = false;
    loop {
        match reader.read_event() {
            Err(e) => return Err(Error::Validation(format!("malformed XML: {e}"))),
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if path.is_empty() {
                    if name != "response" {
                        return Err(Error::Validation(format!(
                            "root element must be 'response', got '{name}'"
                        )));
                    }
                    saw_root = true;
                }
                path.push(name);
                text.clear();
            }
            Ok(Event::Text(t)) => {
                text.push_str(&t.unescape().map_err(|e| {
                    Error::Validation(format!("malformed XML text: {e}"))
                })?);
            }
            Ok(Event::End(_)) => {
                let name = path.pop().unwrap_or_default();
                match (path.len(), name.as_str()) {
                    (1, "answer") => doc.answer = Some(text.trim().to_string()),
                    (1, "idk") => doc.idk_raw = Some(text.trim().to_string()),
                    (1, "citation") => match text.trim().parse::<i64>() {
                        Ok(v) => doc.citations.push(v),
                        Err(_) => doc.citations_ok = false,
                    },
                    _ => {}
                }
                text.clear();
            }
            Ok(Event::Empty(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if path.len() == 1 && (name == "answer" || name == "idk") {
                    // empty required element: present but valueless
                    if name == "answer" {
                        doc.answer = Some(String::new());
                    } else {
                        doc.idk_raw = Some(String::new());
                    }
                }
            }
            Ok(_) => {}
        }
    }
    if !saw_root {
        return Err(Error::Validation("no response element found".into()));
    }
    if !path.is_empty() {
        return Err(Error::Validation(format!(
            "unclosed element '{}'",
            path.last().unwrap()
        )));
    }
    Ok(doc)
}

/// Lower median: for even n, the smaller of the two central values.
pub fn lower_median<T: PartialOrd + Copy>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Percentages, median word count, and median latency for one model on one
/// test set.
pub fn summarize_style(
    runs: &[RunRecord],
    examples: &[TestExample],
    model: &str,
    test_set: &str,
    rules: &StyleRules,
) -> Result<StyleSummary> {
    let sets = test_set_index(examples);
    let in_scope: Vec<&RunRecord> = runs
        .iter()
        .filter(|r| {
            r.model == model && sets.get(&r.example_id).map(String::as_str) == Some(test_set)
        })
        .collect();
    if in_scope.is_empty() {
        return Err(Error::EmptyData(format!(
            "no runs for model {model} on test set {test_set}"
        )));
    }
    let n = in_scope.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut words = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for r in &in_scope {
        let f = style_flags_with_rules(&r.answer_text, rules);
        for (key, hit) in [
            ("bad_style", f.bad_style),
            ("according_to", f.according_to),
            ("mention_knowledge", f.mention_knowledge),
            ("mention_sources", f.mention_sources),
            ("poor_formatting", f.poor_formatting),
        ] {
            if hit {
                *counts.entry(key).or_default() += 1;
            }
        }
        words.push(word_count(&r.answer_text));
        times.push(r.response_time_s);
    }
    let pct = |key: &str| 100.0 * counts.get(key).copied().unwrap_or(0) as f64 / n as f64;
    Ok(StyleSummary {
        model: model.to_string(),
        test_set: test_set.to_string(),
        pct_bad_style: pct("bad_style"),
        pct_according_to: pct("according_to"),
        pct_mention_knowledge: pct("mention_knowledge"),
        pct_mention_sources: pct("mention_sources"),
        pct_poor_formatting: pct("poor_formatting"),
        median_words: lower_median(&words).unwrap(),
        median_response_time: lower_median(&times).unwrap(),
        n,
    })
}
