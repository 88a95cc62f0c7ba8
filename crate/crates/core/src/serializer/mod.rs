//! Text serialization of patient event streams.
//!
//! Each event becomes `table ⊕ (column ⊕ value)* ⊕ timegap`, where values are
//! textualized (itemized codes through the definition table, numerics spaced
//! per character) and tokenized against a subword [`Vocabulary`]. Every token
//! carries a [`TokenType`] and a [`DigitPlace`] label.

mod detok;
mod stream;
mod vocab;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CellValue, Corpus, DefinitionTable, EventRecord};

pub use detok::{detokenize_events, NameLexicon, ReconstructedEvent, StructuralDefect};
pub use stream::{build_flattened, build_hierarchical, flatten, serialize_event, Layout, SerializedEvent, TokenStream};
pub use vocab::{timegap_unit, Vocabulary, CONTINUATION, END, PAD, START, UNK};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("itemized code `{0}` is missing from the definition table")]
    UnknownCode(String),
    #[error("event in table `{0}` has no columns")]
    EmptyEvent(String),
    #[error("negative time gap of {0} seconds")]
    NegativeGap(i64),
    #[error("patient `{0}` has no events")]
    EmptyPatient(String),
    #[error("invalid serializer config: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("expected a hierarchical token stream")]
    NotHierarchical,
    #[error("token stream channels do not match its layout")]
    ShapeMismatch,
}

/// Structural role of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenType {
    Pad,
    Start,
    End,
    TableName,
    ColumnName,
    ColumnValue,
    TimeGap,
}

impl TokenType {
    pub const ALL: [TokenType; 7] = [
        TokenType::Pad,
        TokenType::Start,
        TokenType::End,
        TokenType::TableName,
        TokenType::ColumnName,
        TokenType::ColumnValue,
        TokenType::TimeGap,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }
}

/// Power-of-ten position of a digit token relative to the decimal point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DigitPlace {
    NonDigit,
    DecimalPoint,
    /// 0 = units, 1 = tens, -1 = tenths.
    Place(i32),
}

impl DigitPlace {
    /// Compact non-negative id: non-digit 0, decimal point 1, then places
    /// interleaved as 0, -1, 1, -2, 2, ... from id 2.
    pub fn id(self) -> u32 {
        match self {
            DigitPlace::NonDigit => 0,
            DigitPlace::DecimalPoint => 1,
            DigitPlace::Place(k) if k >= 0 => 2 + 2 * k as u32,
            DigitPlace::Place(k) => 1 + 2 * k.unsigned_abs(),
        }
    }

    pub fn from_id(id: u32) -> Self {
        match id {
            0 => DigitPlace::NonDigit,
            1 => DigitPlace::DecimalPoint,
            even if even % 2 == 0 => DigitPlace::Place(((even - 2) / 2) as i32),
            odd => DigitPlace::Place(-(((odd - 1) / 2) as i32)),
        }
    }
}

/// Digit-place label of every character of a numeric literal.
pub fn digit_places(numeric: &str) -> Vec<DigitPlace> {
    let point = numeric.find('.').unwrap_or(numeric.len());
    let int_digits = numeric[..point].bytes().filter(u8::is_ascii_digit).count() as i32;
    let mut seen_int = 0;
    let mut seen_frac = 0;
    numeric
        .char_indices()
        .map(|(i, c)| match c {
            '.' => DigitPlace::DecimalPoint,
            d if d.is_ascii_digit() && i < point => {
                seen_int += 1;
                DigitPlace::Place(int_digits - seen_int)
            }
            d if d.is_ascii_digit() => {
                seen_frac += 1;
                DigitPlace::Place(-seen_frac)
            }
            _ => DigitPlace::NonDigit,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializerConfig {
    /// Rows of the hierarchical grid.
    pub n_events: usize,
    /// Columns of the hierarchical grid.
    pub tokens_per_event: usize,
    /// Length of the flattened stream.
    pub n_tokens: usize,
    /// Ascending bucket boundaries in minutes; `k` boundaries give `k + 1`
    /// time-gap tokens.
    pub timegap_minutes: Vec<u32>,
}

impl Default for SerializerConfig {
    fn default() -> Self {
        SerializerConfig {
            n_events: 256,
            tokens_per_event: 128,
            n_tokens: 8192,
            timegap_minutes: vec![1, 5, 15, 30, 60, 120, 360, 720],
        }
    }
}

impl SerializerConfig {
    pub fn validate(&self) -> Result<(), SerializeError> {
        for (name, v) in [
            ("n_events", self.n_events),
            ("tokens_per_event", self.tokens_per_event),
            ("n_tokens", self.n_tokens),
        ] {
            if !v.is_power_of_two() {
                return Err(SerializeError::InvalidConfig(alloc::format!(
                    "{name} = {v} is not a power of two"
                )));
            }
        }
        if self.timegap_minutes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SerializeError::InvalidConfig(
                "time-gap boundaries must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn timegap_tokens(&self) -> usize {
        self.timegap_minutes.len() + 1
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// Cell to text: itemized codes become their casefolded description,
/// numerics are spelled one character per word, text is casefolded.
pub fn textualize_cell(cell: &CellValue, definitions: &DefinitionTable) -> Result<String, SerializeError> {
    match cell {
        CellValue::Itemized(code) => definitions
            .get(code)
            .map(|d| normalize_text(d))
            .ok_or_else(|| SerializeError::UnknownCode(code.clone())),
        CellValue::Numeric(v) => {
            let mut out = String::with_capacity(v.len() * 2);
            for c in v.chars().filter(|c| !c.is_whitespace()) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push(c);
            }
            Ok(out)
        }
        CellValue::Text(t) => Ok(normalize_text(t)),
    }
}

/// Index of the half-open bucket `[b_i, b_{i+1})` holding the gap; the first
/// bucket starts at zero and the last is unbounded.
pub fn quantize_timegap(delta_seconds: i64, boundaries_minutes: &[u32]) -> Result<usize, SerializeError> {
    if delta_seconds < 0 {
        return Err(SerializeError::NegativeGap(delta_seconds));
    }
    let delta = delta_seconds as u64;
    Ok(boundaries_minutes
        .iter()
        .take_while(|&&b| delta >= u64::from(b) * 60)
        .count())
}

/// Vocabulary over every table name, column name and textualized cell of
/// the corpus.
pub fn corpus_vocabulary(corpus: &Corpus, config: &SerializerConfig, min_count: usize) -> Result<Vocabulary, SerializeError> {
    let mut texts = Vec::new();
    for event in corpus.events() {
        texts.push(normalize_text(&event.table));
        for (column, cell) in &event.columns {
            texts.push(normalize_text(column));
            texts.push(textualize_cell(cell, &corpus.definitions)?);
        }
    }
    Ok(Vocabulary::build(
        config.timegap_tokens(),
        texts.iter().map(String::as_str),
        min_count,
    ))
}

/// What detokenizing an untruncated serialization of `event` must give back.
pub fn reference_event(
    event: &EventRecord,
    prev_timestamp: Option<u64>,
    definitions: &DefinitionTable,
    config: &SerializerConfig,
) -> Result<ReconstructedEvent, SerializeError> {
    let columns = event
        .columns
        .iter()
        .map(|(c, cell)| Ok((normalize_text(c), textualize_cell(cell, definitions)?)))
        .collect::<Result<Vec<_>, SerializeError>>()?;
    let delta = prev_timestamp.map_or(0, |p| event.timestamp as i64 - p as i64);
    Ok(ReconstructedEvent {
        table: Some(normalize_text(&event.table)),
        columns,
        timegap: Some(quantize_timegap(delta, &config.timegap_minutes)?),
        defect: None,
    })
}
