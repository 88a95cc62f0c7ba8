//! JSON, JSON-lines, CSV and vocabulary files.

use std::path::Path;

use ehrcomp_core::serializer::{DigitPlace, Layout, TokenStream, TokenType, Vocabulary};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fsio::{read_to_string, write_atomic};
use crate::IoError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| IoError::format(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    toml::from_str(&read_to_string(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| IoError::format(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| IoError::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::format(path, e))?;
    write_atomic(path, &bytes)
}

/// One unit per line, in id order.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), IoError> {
    let mut text = vocab.units().join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, IoError> {
    let units: Vec<String> = read_to_string(path)?.lines().map(String::from).collect();
    let timegaps = units
        .iter()
        .skip(4)
        .enumerate()
        .take_while(|(i, u)| **u == ehrcomp_core::serializer::timegap_unit(*i))
        .count();
    Vocabulary::from_units(timegaps, units).map_err(|e| IoError::format(path, e))
}

/// A token stream as stored on one JSON line; label channels hold ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub patient_id: String,
    pub layout: Layout,
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub places: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub event_bounds: Vec<(usize, usize)>,
}

impl StreamRecord {
    pub fn new(patient_id: &str, stream: &TokenStream) -> Self {
        StreamRecord {
            patient_id: patient_id.to_string(),
            layout: stream.layout,
            tokens: stream.tokens.clone(),
            types: stream.types.as_ref().map(|t| t.iter().map(|k| k.id()).collect()),
            places: stream.places.as_ref().map(|p| p.iter().map(|d| d.id()).collect()),
            event_bounds: stream.event_bounds.clone(),
        }
    }

    pub fn to_stream(&self) -> Result<TokenStream, String> {
        let types = match &self.types {
            Some(ids) => Some(
                ids.iter()
                    .map(|&i| TokenType::from_id(i).ok_or_else(|| format!("unknown token type id {i}")))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let stream = TokenStream {
            layout: self.layout,
            tokens: self.tokens.clone(),
            types,
            places: self.places.as_ref().map(|p| p.iter().map(|&i| DigitPlace::from_id(i)).collect()),
            event_bounds: self.event_bounds.clone(),
        };
        stream.check().map_err(|e| e.to_string())?;
        Ok(stream)
    }
}

pub fn write_streams(path: &Path, records: &[StreamRecord]) -> Result<(), IoError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| IoError::format(path, e))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_streams(path: &Path) -> Result<Vec<(String, TokenStream)>, IoError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let at = |m: String| IoError::format(path, format!("line {}: {m}", i + 1));
        let rec: StreamRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let stream = rec.to_stream().map_err(at)?;
        out.push((rec.patient_id, stream));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_file_roundtrip() {
        let v = Vocabulary::build(9, ["atypical lymphocytes", "normal saline"], 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        write_vocab(&p, &v).unwrap();
        assert_eq!(read_vocab(&p).unwrap(), v);
    }

    #[test]
    fn stream_lines_roundtrip() {
        let stream = TokenStream {
            layout: Layout::Flattened { tokens: 4 },
            tokens: vec![20, 21, 4, 0],
            types: Some(vec![TokenType::TableName, TokenType::ColumnValue, TokenType::TimeGap, TokenType::Pad]),
            places: Some(vec![DigitPlace::NonDigit, DigitPlace::Place(-2), DigitPlace::NonDigit, DigitPlace::NonDigit]),
            event_bounds: vec![(0, 3)],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write_streams(&p, &[StreamRecord::new("p1", &stream)]).unwrap();
        assert_eq!(read_streams(&p).unwrap(), vec![("p1".to_string(), stream)]);
    }

    #[test]
    fn bad_stream_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        std::fs::write(
            &p,
            "{\"patient_id\":\"a\",\"layout\":{\"kind\":\"flattened\",\"tokens\":2},\"tokens\":[1,2]}\n{\"patient_id\":\"b\",\"layout\":{\"kind\":\"flattened\",\"tokens\":2},\"tokens\":[1]}\n",
        )
        .unwrap();
        let err = read_streams(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
