use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::stream::{Layout, TokenStream};
use super::vocab::{Vocabulary, PAD};
use super::{normalize_text, TokenType};

/// Structural defects found while parsing an event back out of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StructuralDefect {
    /// The event does not open with a table name.
    NotTableFirst,
    /// A column name without content, or content without a column name.
    UnpairedColumn,
}

/// Event text recovered from tokens: casefolded table name, column/content
/// pairs and the time-gap bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReconstructedEvent {
    pub table: Option<String>,
    pub columns: Vec<(String, String)>,
    pub timegap: Option<usize>,
    pub defect: Option<StructuralDefect>,
}

impl ReconstructedEvent {
    fn flag(&mut self, defect: StructuralDefect) {
        self.defect.get_or_insert(defect);
    }
}

/// Known table and column names, used to segment streams that carry no
/// token-type labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameLexicon {
    tables: BTreeMap<Vec<String>, BTreeSet<Vec<String>>>,
    all_columns: BTreeSet<Vec<String>>,
}

fn words(text: &str) -> Vec<String> {
    normalize_text(text).split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

impl NameLexicon {
    pub fn new<'a, I, C>(tables: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, C)>,
        C: IntoIterator<Item = &'a str>,
    {
        let mut lex = NameLexicon::default();
        for (table, columns) in tables {
            let entry = lex.tables.entry(words(table)).or_default();
            for c in columns {
                let w = words(c);
                entry.insert(w.clone());
                lex.all_columns.insert(w);
            }
        }
        lex
    }

    fn longest_match<'s>(names: impl Iterator<Item = &'s Vec<String>>, at: &[String]) -> Option<&'s Vec<String>> {
        names
            .filter(|n| !n.is_empty() && at.starts_with(n))
            .max_by_key(|n| n.len())
    }

    fn columns_of(&self, table: Option<&Vec<String>>) -> &BTreeSet<Vec<String>> {
        table.and_then(|t| self.tables.get(t)).unwrap_or(&self.all_columns)
    }
}

/// Splits a stream into events and parses each back into text.
///
/// Labeled streams are segmented by their token-type channel. Unlabeled
/// streams are split at time-gap tokens (or rows) and segmented by matching
/// known names from `lexicon`; without a lexicon every unlabeled event is
/// reported as [`StructuralDefect::NotTableFirst`].
pub fn detokenize_events(
    stream: &TokenStream,
    vocab: &Vocabulary,
    lexicon: Option<&NameLexicon>,
) -> Vec<ReconstructedEvent> {
    event_spans(stream, vocab)
        .into_iter()
        .map(|span| match &stream.types {
            Some(types) => parse_labeled(&stream.tokens[span.clone()], &types[span], vocab),
            None => parse_unlabeled(&stream.tokens[span], vocab, lexicon),
        })
        .collect()
}

fn event_spans(stream: &TokenStream, vocab: &Vocabulary) -> Vec<core::ops::Range<usize>> {
    let non_empty = |r: &core::ops::Range<usize>| stream.tokens[r.clone()].iter().any(|&t| t != PAD);
    match stream.layout {
        Layout::Hierarchical { .. } => stream.rows().filter(non_empty).collect(),
        Layout::Flattened { .. } if !stream.event_bounds.is_empty() => {
            stream.event_bounds.iter().map(|&(s, e)| s..e).filter(non_empty).collect()
        }
        Layout::Flattened { tokens } => {
            let mut spans = Vec::new();
            let mut start = 0;
            for (i, &t) in stream.tokens.iter().enumerate() {
                if vocab.timegap_bucket(t).is_some() {
                    spans.push(start..i + 1);
                    start = i + 1;
                }
            }
            spans.push(start..tokens);
            spans.into_iter().filter(non_empty).collect()
        }
    }
}

fn parse_labeled(tokens: &[u32], types: &[TokenType], vocab: &Vocabulary) -> ReconstructedEvent {
    let mut event = ReconstructedEvent::default();
    let mut segments: Vec<(TokenType, Vec<u32>)> = Vec::new();
    for (&t, &kind) in tokens.iter().zip(types) {
        match kind {
            TokenType::Pad | TokenType::Start | TokenType::End => continue,
            TokenType::TimeGap => {
                event.timegap = vocab.timegap_bucket(t);
                continue;
            }
            _ => {}
        }
        match segments.last_mut() {
            Some((k, seg)) if *k == kind => seg.push(t),
            _ => segments.push((kind, alloc::vec![t])),
        }
    }

    let mut rest = segments.as_slice();
    match rest.first() {
        Some((TokenType::TableName, seg)) => {
            event.table = Some(vocab.decode(seg));
            rest = &rest[1..];
        }
        _ => event.flag(StructuralDefect::NotTableFirst),
    }

    let mut pending: Option<String> = None;
    for (kind, seg) in rest {
        let text = vocab.decode(seg);
        match kind {
            TokenType::ColumnName => {
                if pending.replace(text).is_some() {
                    event.flag(StructuralDefect::UnpairedColumn);
                }
            }
            TokenType::ColumnValue => match pending.take() {
                Some(column) => event.columns.push((column, text)),
                None => event.flag(StructuralDefect::UnpairedColumn),
            },
            _ => event.flag(StructuralDefect::UnpairedColumn),
        }
    }
    if pending.is_some() {
        event.flag(StructuralDefect::UnpairedColumn);
    }
    event
}

fn parse_unlabeled(tokens: &[u32], vocab: &Vocabulary, lexicon: Option<&NameLexicon>) -> ReconstructedEvent {
    let mut event = ReconstructedEvent::default();
    let mut body = Vec::new();
    for &t in tokens {
        if let Some(bucket) = vocab.timegap_bucket(t) {
            event.timegap = Some(bucket);
        } else if t != PAD {
            body.push(t);
        }
    }
    let text = vocab.decode(&body);
    let ws: Vec<String> = text.split(' ').filter(|w| !w.is_empty()).map(String::from).collect();

    let Some(lexicon) = lexicon else {
        event.flag(StructuralDefect::NotTableFirst);
        return event;
    };

    let mut at = 0;
    let table = NameLexicon::longest_match(lexicon.tables.keys(), &ws);
    match table {
        Some(name) => {
            event.table = Some(name.join(" "));
            at = name.len();
        }
        None if NameLexicon::longest_match(lexicon.all_columns.iter(), &ws).is_some() => {
            event.flag(StructuralDefect::NotTableFirst);
        }
        None if !ws.is_empty() => {
            event.table = Some(ws[0].clone());
            at = 1;
        }
        None => event.flag(StructuralDefect::NotTableFirst),
    }

    let columns = lexicon.columns_of(table);
    while at < ws.len() {
        let name_len = NameLexicon::longest_match(columns.iter(), &ws[at..]).map_or(1, |n| n.len());
        let column = ws[at..at + name_len].join(" ");
        at += name_len;
        let content_start = at;
        while at < ws.len() && NameLexicon::longest_match(columns.iter(), &ws[at..]).is_none() {
            at += 1;
        }
        if at == content_start {
            event.flag(StructuralDefect::UnpairedColumn);
            continue;
        }
        event.columns.push((column, ws[content_start..at].join(" ")));
    }
    event
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CellValue, EventRecord, PatientRecord};
    use crate::serializer::{build_hierarchical, flatten, textualize_cell, SerializerConfig};
    use alloc::string::ToString;
    use alloc::vec;

    fn defs() -> BTreeMap<String, String> {
        [("51385".to_string(), "Atypical Lymphocytes".to_string())].into()
    }

    fn event() -> EventRecord {
        EventRecord::new("labevents", 3600)
            .with("itemid", CellValue::Itemized("51385".into()))
            .with("value", CellValue::Numeric("7.4".into()))
            .with("valueuom", CellValue::Text("mg/dL".into()))
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build(9, ["labevents itemid atypical lymphocytes value valueuom mg/dl"], 1)
    }

    fn cfg() -> SerializerConfig {
        SerializerConfig {
            n_events: 4,
            tokens_per_event: 32,
            n_tokens: 64,
            ..SerializerConfig::default()
        }
    }

    fn patient(events: Vec<EventRecord>) -> PatientRecord {
        PatientRecord {
            id: "p".into(),
            events,
            labels: BTreeMap::new(),
        }
    }

    fn expected(e: &EventRecord) -> (Option<String>, Vec<(String, String)>) {
        let cols = e
            .columns
            .iter()
            .map(|(c, v)| (normalize_text(c), textualize_cell(v, &defs()).unwrap()))
            .collect();
        (Some(normalize_text(&e.table)), cols)
    }

    #[test]
    fn labeled_roundtrip() {
        let v = vocab();
        let h = build_hierarchical(&patient(vec![event(), event()]), &v, &defs(), &cfg()).unwrap();
        for stream in [h.clone(), flatten(&h, 64).unwrap()] {
            let events = detokenize_events(&stream, &v, None);
            assert_eq!(events.len(), 2);
            for e in &events {
                assert_eq!((e.table.clone(), e.columns.clone()), expected(&event()));
                assert_eq!(e.defect, None);
            }
            assert_eq!(events[0].timegap, Some(0));
        }
    }

    #[test]
    fn unlabeled_roundtrip_with_lexicon() {
        let v = vocab();
        let h = build_hierarchical(&patient(vec![event(), event()]), &v, &defs(), &cfg()).unwrap();
        let mut f = flatten(&h, 64).unwrap();
        f.types = None;
        f.places = None;
        f.event_bounds.clear();
        let lex = NameLexicon::new([("labevents", ["itemid", "value", "valueuom"])]);
        let events = detokenize_events(&f, &v, Some(&lex));
        assert_eq!(events.len(), 2);
        for e in &events {
            assert_eq!((e.table.clone(), e.columns.clone()), expected(&event()));
            assert_eq!(e.defect, None);
        }
    }

    #[test]
    fn column_first_is_flagged() {
        let v = vocab();
        let h = build_hierarchical(&patient(vec![event()]), &v, &defs(), &cfg()).unwrap();
        let row: Vec<usize> = (0..32).collect();
        let mut tokens: Vec<u32> = row.iter().map(|&i| h.tokens[i]).collect();
        let mut types: Vec<TokenType> = row.iter().map(|&i| h.types.as_ref().unwrap()[i]).collect();
        // drop the table-name token
        tokens.remove(0);
        types.remove(0);
        tokens.push(PAD);
        types.push(TokenType::Pad);
        let stream = TokenStream {
            layout: Layout::Flattened { tokens: 32 },
            tokens,
            types: Some(types),
            places: None,
            event_bounds: Vec::new(),
        };
        let events = detokenize_events(&stream, &v, None);
        assert_eq!(events[0].defect, Some(StructuralDefect::NotTableFirst));

        let mut unlabeled = stream.clone();
        unlabeled.types = None;
        let lex = NameLexicon::new([("labevents", ["itemid", "value", "valueuom"])]);
        let events = detokenize_events(&unlabeled, &v, Some(&lex));
        assert_eq!(events[0].defect, Some(StructuralDefect::NotTableFirst));
    }

    #[test]
    fn truncated_event_is_prefix_and_flags_missing_content() {
        let v = vocab();
        let numeric = EventRecord::new("labevents", 0).with("value", CellValue::Numeric("12.5".into()));
        // labevents itemid atypical lymphocytes value 7 . 4 valueuom mg/dl [TG]
        // labevents value 1 2 . 5 [TG]
        for (e, width, unpaired) in [(event(), 8, false), (event(), 4, false), (event(), 2, true), (numeric, 4, false)] {
            let c = SerializerConfig {
                tokens_per_event: width,
                ..cfg()
            };
            let h = build_hierarchical(&patient(vec![e.clone()]), &v, &defs(), &c).unwrap();
            let full = build_hierarchical(&patient(vec![e]), &v, &defs(), &cfg()).unwrap();
            let got = detokenize_events(&h, &v, None).remove(0);
            let want = detokenize_events(&full, &v, None).remove(0);
            assert_eq!(got.table, want.table);
            assert!(got.columns.len() <= want.columns.len());
            for (g, w) in got.columns.iter().zip(&want.columns) {
                assert_eq!(g.0, w.0);
                assert!(w.1.starts_with(&g.1), "{} vs {}", g.1, w.1);
            }
            assert_eq!(got.defect.is_some(), unpaired, "width {width}");
            assert_eq!(got.timegap, None);
        }
    }

    #[test]
    fn without_lexicon_unlabeled_events_are_defective() {
        let v = vocab();
        let mut h = build_hierarchical(&patient(vec![event()]), &v, &defs(), &cfg()).unwrap();
        h.types = None;
        let events = detokenize_events(&h, &v, None);
        assert_eq!(events[0].defect, Some(StructuralDefect::NotTableFirst));
    }
}
