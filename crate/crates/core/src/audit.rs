//! Syntax and semantics checks for generated events.
//!
//! Admissible content is learned from real data as a set of triples: for
//! every `(table, column)` either the observed numeric range or the set of
//! subword units seen in its contents. Generated events are checked against
//! it and summarized as ratios of correct events, unique events and samples.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::decimal::parse_decimal;
use crate::serializer::{normalize_text, textualize_cell, NameLexicon, ReconstructedEvent, SerializeError, StructuralDefect, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("cannot build triples from an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

/// Admissible content of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ContentRule {
    Numeric { min: f64, max: f64 },
    Subwords { units: BTreeSet<String> },
}

/// Casefolded table name -> casefolded column name -> rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripleSet {
    pub tables: BTreeMap<String, BTreeMap<String, ContentRule>>,
}

impl TripleSet {
    pub fn rule(&self, table: &str, column: &str) -> Option<&ContentRule> {
        self.tables.get(table)?.get(column)
    }

    /// Name lexicon for segmenting streams without token-type labels.
    pub fn lexicon(&self) -> NameLexicon {
        NameLexicon::new(
            self.tables
                .iter()
                .map(|(t, cols)| (t.as_str(), cols.keys().map(String::as_str))),
        )
    }
}

fn compact(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn units(text: &str, vocab: &Vocabulary) -> Vec<String> {
    let tokens = vocab.tokenize(text);
    vocab.units_of(&tokens).into_iter().map(String::from).collect()
}

/// A column is numeric when every observed content is a decimal literal
/// (after removing the per-character spacing); otherwise its rule is the
/// union of the subword units of its contents.
pub fn build_triples(real: &Corpus, vocab: &Vocabulary) -> Result<TripleSet, AuditError> {
    if real.event_count() == 0 {
        return Err(AuditError::EmptyCorpus);
    }
    let mut observed: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for event in real.events() {
        let table = observed.entry(normalize_text(&event.table)).or_default();
        for (column, cell) in &event.columns {
            let text = textualize_cell(cell, &real.definitions)?;
            table.entry(normalize_text(column)).or_default().push(text);
        }
    }
    let mut triples = TripleSet::default();
    for (table, columns) in observed {
        let rules = triples.tables.entry(table).or_default();
        for (column, contents) in columns {
            let numbers: Option<Vec<f64>> = contents.iter().map(|c| parse_decimal(&compact(c))).collect();
            let rule = match numbers {
                Some(ns) if !ns.is_empty() => ContentRule::Numeric {
                    min: ns.iter().copied().fold(f64::INFINITY, f64::min),
                    max: ns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
                _ => ContentRule::Subwords {
                    units: contents.iter().flat_map(|c| units(c, vocab).into_iter()).collect(),
                },
            };
            rules.insert(column, rule);
        }
    }
    Ok(triples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuditDefect {
    NotTableFirst,
    UnpairedColumn,
    UnknownTableColumn,
    NumericOutOfRange,
    UnknownSubword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventVerdict {
    pub defect: Option<AuditDefect>,
}

impl EventVerdict {
    pub fn is_correct(&self) -> bool {
        self.defect.is_none()
    }
}

/// First violated check: structure, then table/column names, then content.
/// An event with a table name but no column pairs counts as unpaired.
pub fn check_event(event: &ReconstructedEvent, triples: &TripleSet, vocab: &Vocabulary) -> EventVerdict {
    EventVerdict {
        defect: first_defect(event, triples, vocab),
    }
}

fn first_defect(event: &ReconstructedEvent, triples: &TripleSet, vocab: &Vocabulary) -> Option<AuditDefect> {
    match event.defect {
        Some(StructuralDefect::NotTableFirst) => return Some(AuditDefect::NotTableFirst),
        Some(StructuralDefect::UnpairedColumn) => return Some(AuditDefect::UnpairedColumn),
        None => {}
    }
    let Some(table) = &event.table else {
        return Some(AuditDefect::NotTableFirst);
    };
    if event.columns.is_empty() {
        return Some(AuditDefect::UnpairedColumn);
    }
    let Some(columns) = triples.tables.get(table) else {
        return Some(AuditDefect::UnknownTableColumn);
    };
    let mut rules = Vec::with_capacity(event.columns.len());
    for (column, content) in &event.columns {
        match columns.get(column) {
            Some(rule) => rules.push((rule, content)),
            None => return Some(AuditDefect::UnknownTableColumn),
        }
    }
    for (rule, content) in rules {
        match rule {
            ContentRule::Numeric { min, max } => match parse_decimal(&compact(content)) {
                Some(v) if *min <= v && v <= *max => {}
                _ => return Some(AuditDefect::NumericOutOfRange),
            },
            ContentRule::Subwords { units: allowed } => {
                if units(content, vocab).iter().any(|u| !allowed.contains(u)) {
                    return Some(AuditDefect::UnknownSubword);
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Correct events over all events.
    pub rce: Option<f64>,
    /// Correct distinct events over distinct events.
    pub rue: Option<f64>,
    /// Samples whose events are all correct over all samples.
    pub rcs: Option<f64>,
    pub events: usize,
    pub correct_events: usize,
    pub unique_events: usize,
    pub correct_unique_events: usize,
    pub samples: usize,
    pub correct_samples: usize,
    pub defects: BTreeMap<AuditDefect, usize>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Scores generated samples. Events are deduplicated on their full
/// reconstruction (table, column pairs and time gap). A sample without any
/// event is counted incorrect.
pub fn score(samples: &[Vec<ReconstructedEvent>], triples: &TripleSet, vocab: &Vocabulary) -> AuditReport {
    let mut report = AuditReport {
        samples: samples.len(),
        ..AuditReport::default()
    };
    let mut unique: BTreeMap<&ReconstructedEvent, Option<AuditDefect>> = BTreeMap::new();
    for sample in samples {
        let mut all_correct = !sample.is_empty();
        for event in sample {
            let defect = *unique
                .entry(event)
                .or_insert_with(|| check_event(event, triples, vocab).defect);
            report.events += 1;
            match defect {
                None => report.correct_events += 1,
                Some(d) => {
                    all_correct = false;
                    *report.defects.entry(d).or_default() += 1;
                }
            }
        }
        report.correct_samples += usize::from(all_correct);
    }
    report.unique_events = unique.len();
    report.correct_unique_events = unique.values().filter(|d| d.is_none()).count();
    report.rce = ratio(report.correct_events, report.events);
    report.rue = ratio(report.correct_unique_events, report.unique_events);
    report.rcs = ratio(report.correct_samples, report.samples);
    report
}
