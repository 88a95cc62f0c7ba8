use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD};
use super::{digit_places, normalize_text, quantize_timegap, textualize_cell, DigitPlace, SerializeError, SerializerConfig, TokenType};
use crate::corpus::{CellValue, DefinitionTable, EventRecord, PatientRecord};

/// Token ids of one event with their parallel label channels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerializedEvent {
    pub tokens: Vec<u32>,
    pub types: Vec<TokenType>,
    pub places: Vec<DigitPlace>,
}

impl SerializedEvent {
    fn push(&mut self, token: u32, kind: TokenType, place: DigitPlace) {
        self.tokens.push(token);
        self.types.push(kind);
        self.places.push(place);
    }

    fn push_text(&mut self, vocab: &Vocabulary, text: &str, kind: TokenType) {
        for t in vocab.tokenize(text) {
            self.push(t, kind, DigitPlace::NonDigit);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Serializes one event as table name, then each column name followed by its
/// value, then the time-gap token. `prev_timestamp` is the previous event's
/// timestamp; `None` yields a zero gap.
pub fn serialize_event(
    event: &EventRecord,
    prev_timestamp: Option<u64>,
    vocab: &Vocabulary,
    definitions: &DefinitionTable,
    config: &SerializerConfig,
) -> Result<SerializedEvent, SerializeError> {
    if event.columns.is_empty() {
        return Err(SerializeError::EmptyEvent(event.table.clone()));
    }
    let mut out = SerializedEvent::default();
    out.push_text(vocab, &normalize_text(&event.table), TokenType::TableName);
    for (column, cell) in &event.columns {
        out.push_text(vocab, &normalize_text(column), TokenType::ColumnName);
        match cell {
            CellValue::Numeric(v) => {
                let compact: alloc::string::String = v.chars().filter(|c| !c.is_whitespace()).collect();
                for (c, place) in compact.chars().zip(digit_places(&compact)) {
                    // single-character words always yield exactly one token
                    let token = vocab.tokenize(&c.to_string())[0];
                    out.push(token, TokenType::ColumnValue, place);
                }
            }
            _ => {
                let text = textualize_cell(cell, definitions)?;
                out.push_text(vocab, &text, TokenType::ColumnValue);
            }
        }
    }
    let delta = prev_timestamp.map_or(0, |p| event.timestamp as i64 - p as i64);
    let bucket = quantize_timegap(delta, &config.timegap_minutes)?;
    let token = vocab
        .timegap_token(bucket)
        .ok_or_else(|| SerializeError::InvalidVocabulary(alloc::format!("no token for time-gap bucket {bucket}")))?;
    out.push(token, TokenType::TimeGap, DigitPlace::NonDigit);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layout {
    /// `events × tokens_per_event` grid, row-major.
    Hierarchical { events: usize, tokens_per_event: usize },
    Flattened { tokens: usize },
}

impl Layout {
    pub fn len(&self) -> usize {
        match *self {
            Layout::Hierarchical {
                events,
                tokens_per_event,
            } => events * tokens_per_event,
            Layout::Flattened { tokens } => tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Token ids plus optional label channels. Generated streams may carry no
/// labels; real streams always carry both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub layout: Layout,
    pub tokens: Vec<u32>,
    pub types: Option<Vec<TokenType>>,
    pub places: Option<Vec<DigitPlace>>,
    /// Half-open token ranges of each event (flattened streams only).
    pub event_bounds: Vec<(usize, usize)>,
}

impl TokenStream {
    /// Unlabeled stream, e.g. decoded model output.
    pub fn unlabeled(layout: Layout, tokens: Vec<u32>) -> Result<Self, SerializeError> {
        let stream = TokenStream {
            layout,
            tokens,
            types: None,
            places: None,
            event_bounds: Vec::new(),
        };
        stream.check()?;
        Ok(stream)
    }

    pub fn check(&self) -> Result<(), SerializeError> {
        let n = self.layout.len();
        let channels_ok = self.tokens.len() == n
            && self.types.as_ref().is_none_or(|t| t.len() == n)
            && self.places.as_ref().is_none_or(|p| p.len() == n)
            && self.event_bounds.iter().all(|&(s, e)| s <= e && e <= n);
        if channels_ok {
            Ok(())
        } else {
            Err(SerializeError::ShapeMismatch)
        }
    }

    /// Rows of a hierarchical stream, or the whole sequence as one row.
    pub fn rows(&self) -> impl Iterator<Item = core::ops::Range<usize>> + '_ {
        let (rows, width) = match self.layout {
            Layout::Hierarchical {
                events,
                tokens_per_event,
            } => (events, tokens_per_event),
            Layout::Flattened { tokens } => (1, tokens),
        };
        (0..rows).map(move |r| r * width..(r + 1) * width)
    }

    pub fn payload_len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != PAD).count()
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(self.layout, Layout::Hierarchical { .. })
    }
}

/// One row per event, right-padded or truncated to `tokens_per_event`; the
/// earliest `n_events` events are kept.
pub fn build_hierarchical(
    patient: &PatientRecord,
    vocab: &Vocabulary,
    definitions: &DefinitionTable,
    config: &SerializerConfig,
) -> Result<TokenStream, SerializeError> {
    config.validate()?;
    if patient.events.is_empty() {
        return Err(SerializeError::EmptyPatient(patient.id.clone()));
    }
    let width = config.tokens_per_event;
    let size = config.n_events * width;
    let mut tokens = vec![PAD; size];
    let mut types = vec![TokenType::Pad; size];
    let mut places = vec![DigitPlace::NonDigit; size];

    let mut prev = None;
    for (row, event) in patient.events.iter().take(config.n_events).enumerate() {
        let ser = serialize_event(event, prev, vocab, definitions, config)?;
        prev = Some(event.timestamp);
        let keep = ser.len().min(width);
        let at = row * width;
        tokens[at..at + keep].copy_from_slice(&ser.tokens[..keep]);
        types[at..at + keep].copy_from_slice(&ser.types[..keep]);
        places[at..at + keep].copy_from_slice(&ser.places[..keep]);
    }

    Ok(TokenStream {
        layout: Layout::Hierarchical {
            events: config.n_events,
            tokens_per_event: width,
        },
        tokens,
        types: Some(types),
        places: Some(places),
        event_bounds: Vec::new(),
    })
}

/// Concatenates the non-pad tokens of each row in order, records event
/// boundaries and pads (or truncates) to `n_tokens`.
pub fn flatten(hier: &TokenStream, n_tokens: usize) -> Result<TokenStream, SerializeError> {
    if !hier.is_hierarchical() {
        return Err(SerializeError::NotHierarchical);
    }
    hier.check()?;
    let mut tokens = Vec::with_capacity(n_tokens);
    let mut types = hier.types.as_ref().map(|_| Vec::with_capacity(n_tokens));
    let mut places = hier.places.as_ref().map(|_| Vec::with_capacity(n_tokens));
    let mut bounds = Vec::new();

    'rows: for row in hier.rows() {
        let start = tokens.len();
        for i in row {
            if hier.tokens[i] == PAD {
                continue;
            }
            if tokens.len() == n_tokens {
                if tokens.len() > start {
                    bounds.push((start, tokens.len()));
                }
                break 'rows;
            }
            tokens.push(hier.tokens[i]);
            if let (Some(out), Some(src)) = (types.as_mut(), hier.types.as_ref()) {
                out.push(src[i]);
            }
            if let (Some(out), Some(src)) = (places.as_mut(), hier.places.as_ref()) {
                out.push(src[i]);
            }
        }
        if tokens.len() > start {
            bounds.push((start, tokens.len()));
        }
    }

    tokens.resize(n_tokens, PAD);
    if let Some(t) = types.as_mut() {
        t.resize(n_tokens, TokenType::Pad);
    }
    if let Some(p) = places.as_mut() {
        p.resize(n_tokens, DigitPlace::NonDigit);
    }
    Ok(TokenStream {
        layout: Layout::Flattened { tokens: n_tokens },
        tokens,
        types,
        places,
        event_bounds: bounds,
    })
}

pub fn build_flattened(
    patient: &PatientRecord,
    vocab: &Vocabulary,
    definitions: &DefinitionTable,
    config: &SerializerConfig,
) -> Result<TokenStream, SerializeError> {
    flatten(&build_hierarchical(patient, vocab, definitions, config)?, config.n_tokens)
}
