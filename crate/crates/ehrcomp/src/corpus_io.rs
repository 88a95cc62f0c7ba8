//! Corpus directories.
//!
//! ```text
//! schema.toml        tables and their typed columns
//! definitions.csv    code,description
//! patients.csv       patient_id
//! labels.csv         patient_id,task,label
//! <table>.csv        patient_id,timestamp_seconds,<columns...>
//! ```
//!
//! An empty cell means the column is absent from that event.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ehrcomp_core::corpus::{
    apply_cohort_filter, CellValue, ColumnKind, Corpus, DefinitionTable, EventRecord, PatientRecord, Schema,
    DEFAULT_WINDOW_HOURS, MIN_COHORT_EVENTS,
};
use ehrcomp_core::is_decimal;
use serde::Serialize;

use crate::fsio::{read_to_string, write_atomic};
use crate::IoError;

pub const SCHEMA_FILE: &str = "schema.toml";
pub const DEFINITIONS_FILE: &str = "definitions.csv";
pub const PATIENTS_FILE: &str = "patients.csv";
pub const LABELS_FILE: &str = "labels.csv";

const ID: &str = "patient_id";
const TIME: &str = "timestamp_seconds";

fn table_file(dir: &Path, table: &str) -> Result<PathBuf, IoError> {
    let safe = !table.is_empty()
        && table
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !safe {
        return Err(IoError::format(
            dir.join(SCHEMA_FILE),
            format!("table name `{table}` is not usable as a file name"),
        ));
    }
    Ok(dir.join(format!("{table}.csv")))
}

fn csv_bytes<I, R>(path: &Path, header: &[&str], rows: I) -> Result<Vec<u8>, IoError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| IoError::format(path, e);
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| IoError::format(path, e))
}

/// Writes the corpus and returns the paths written.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, bytes: Vec<u8>| -> Result<(), IoError> {
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };

    let schema_path = dir.join(SCHEMA_FILE);
    let schema = toml::to_string(&corpus.schema).map_err(|e| IoError::format(&schema_path, e))?;
    put(schema_path, schema.into_bytes())?;

    let p = dir.join(DEFINITIONS_FILE);
    let rows = corpus.definitions.iter().map(|(c, d)| [c.as_str(), d.as_str()]);
    put(p.clone(), csv_bytes(&p, &["code", "description"], rows)?)?;

    let p = dir.join(PATIENTS_FILE);
    let rows = corpus.patients.iter().map(|pt| [pt.id.as_str()]);
    put(p.clone(), csv_bytes(&p, &[ID], rows)?)?;

    let p = dir.join(LABELS_FILE);
    let rows = corpus
        .patients
        .iter()
        .flat_map(|pt| pt.labels.iter().map(move |(t, l)| [pt.id.as_str(), t.as_str(), l.as_str()]));
    put(p.clone(), csv_bytes(&p, &[ID, "task", "label"], rows)?)?;

    for table in &corpus.schema.tables {
        let p = table_file(dir, &table.name)?;
        let mut header = vec![ID, TIME];
        header.extend(table.columns.iter().map(|c| c.name.as_str()));
        let mut rows: Vec<Vec<String>> = Vec::new();
        for patient in &corpus.patients {
            for event in patient.events.iter().filter(|e| e.table == table.name) {
                let mut row = vec![patient.id.clone(), event.timestamp.to_string()];
                for column in &table.columns {
                    let cell = event.columns.iter().find(|(c, _)| *c == column.name);
                    row.push(cell.map(|(_, v)| v.raw().to_string()).unwrap_or_default());
                }
                rows.push(row);
            }
        }
        put(p.clone(), csv_bytes(&p, &header, rows)?)?;
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadOptions {
    pub min_events: usize,
    pub window_seconds: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_events: MIN_COHORT_EVENTS,
            window_seconds: u64::from(DEFAULT_WINDOW_HOURS) * 3600,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub patients_read: usize,
    pub events_read: usize,
    pub patients_kept: usize,
    pub events_kept: usize,
    pub events_per_table: BTreeMap<String, usize>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IoError> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::io(path, io),
        other => IoError::format(path, format!("{other:?}")),
    })
}

fn records(path: &Path, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, IoError> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| IoError::format(path, e))?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(IoError::format(path, format!("expected header {expected:?}, found {got:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::format(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn cell_error(path: &Path, line: u64, column: &str, message: impl ToString) -> IoError {
    IoError::Cell {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.to_string(),
    }
}

/// Reads a corpus directory, orders each patient's events by time (ties by
/// schema table order, then file order) and applies the cohort rules.
pub fn load_corpus(dir: &Path, options: &LoadOptions) -> Result<(Corpus, LoadStats), IoError> {
    let schema_path = dir.join(SCHEMA_FILE);
    let schema: Schema =
        toml::from_str(&read_to_string(&schema_path)?).map_err(|e| IoError::format(&schema_path, e))?;

    let mut definitions = DefinitionTable::new();
    let p = dir.join(DEFINITIONS_FILE);
    for (line, rec) in records(&p, &["code", "description"])? {
        if definitions.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
            return Err(cell_error(&p, line, "code", format!("duplicate code `{}`", &rec[0])));
        }
    }

    let p = dir.join(PATIENTS_FILE);
    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in records(&p, &[ID])? {
        let id = rec[0].to_string();
        if id.is_empty() || index.insert(id.clone(), patients.len()).is_some() {
            return Err(cell_error(&p, line, ID, format!("empty or duplicate patient id `{id}`")));
        }
        patients.push(PatientRecord {
            id,
            events: Vec::new(),
            labels: BTreeMap::new(),
        });
    }

    let p = dir.join(LABELS_FILE);
    if p.exists() {
        for (line, rec) in records(&p, &[ID, "task", "label"])? {
            let i = *index
                .get(&rec[0])
                .ok_or_else(|| cell_error(&p, line, ID, format!("unknown patient `{}`", &rec[0])))?;
            patients[i].labels.insert(rec[1].to_string(), rec[2].to_string());
        }
    }

    let mut stats = LoadStats {
        patients_read: patients.len(),
        ..LoadStats::default()
    };
    let mut staged: Vec<Vec<(u64, usize, EventRecord)>> = vec![Vec::new(); patients.len()];
    for (position, table) in schema.tables.iter().enumerate() {
        let p = table_file(dir, &table.name)?;
        let mut header = vec![ID, TIME];
        header.extend(table.columns.iter().map(|c| c.name.as_str()));
        let rows = records(&p, &header)?;
        stats.events_per_table.insert(table.name.clone(), rows.len());
        for (line, rec) in rows {
            let i = *index
                .get(&rec[0])
                .ok_or_else(|| cell_error(&p, line, ID, format!("unknown patient `{}`", &rec[0])))?;
            let timestamp: u64 = rec[1]
                .parse()
                .map_err(|_| cell_error(&p, line, TIME, format!("`{}` is not a whole number of seconds", &rec[1])))?;
            let mut event = EventRecord::new(table.name.clone(), timestamp);
            for (column, raw) in table.columns.iter().zip(rec.iter().skip(2)) {
                if raw.is_empty() {
                    continue;
                }
                let cell = match column.kind {
                    ColumnKind::Numeric if !is_decimal(raw) => {
                        return Err(cell_error(&p, line, &column.name, format!("`{raw}` is not a plain decimal")))
                    }
                    ColumnKind::Numeric => CellValue::Numeric(raw.to_string()),
                    ColumnKind::Itemized if !definitions.contains_key(raw) => {
                        return Err(cell_error(&p, line, &column.name, format!("code `{raw}` has no definition")))
                    }
                    ColumnKind::Itemized => CellValue::Itemized(raw.to_string()),
                    ColumnKind::Text => CellValue::Text(raw.to_string()),
                };
                event.columns.push((column.name.clone(), cell));
            }
            if event.columns.is_empty() {
                return Err(cell_error(&p, line, TIME, "event has no values"));
            }
            staged[i].push((timestamp, position, event));
            stats.events_read += 1;
        }
    }

    for (patient, mut events) in patients.iter_mut().zip(staged) {
        events.sort_by_key(|(t, pos, _)| (*t, *pos));
        patient.events = events.into_iter().map(|(_, _, e)| e).collect();
    }
    apply_cohort_filter(&mut patients, options.min_events, options.window_seconds);
    stats.patients_kept = patients.len();
    stats.events_kept = patients.iter().map(|p| p.events.len()).sum();

    let corpus = Corpus {
        patients,
        definitions,
        schema,
    };
    corpus.validate()?;
    Ok((corpus, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ehrcomp_core::corpus::{generate_corpus, GeneratorConfig};
    use std::fs;

    #[test]
    fn write_then_load_is_identity() {
        let corpus = generate_corpus(&GeneratorConfig::three_tables(3, 25)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let (loaded, stats) = load_corpus(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded, corpus);
        assert_eq!(stats.events_kept, corpus.event_count());
    }

    #[test]
    fn errors_name_line_and_column() {
        let corpus = generate_corpus(&GeneratorConfig::three_tables(3, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let lab = dir.path().join("labevents.csv");
        let text = fs::read_to_string(&lab).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let header: Vec<&str> = lines[0].split(',').collect();
        let value_col = header.iter().position(|h| *h == "value").unwrap();
        let mut cells: Vec<String> = lines[2].split(',').map(String::from).collect();
        cells[value_col] = "1e5".into();
        lines[2] = cells.join(",");
        fs::write(&lab, lines.join("\n") + "\n").unwrap();
        let err = load_corpus(dir.path(), &LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`value`"), "{err}");
    }

    #[test]
    fn cohort_rules_apply_on_load() {
        let corpus = generate_corpus(&GeneratorConfig::three_tables(8, 10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let strict = LoadOptions {
            min_events: 1000,
            ..LoadOptions::default()
        };
        let (loaded, stats) = load_corpus(dir.path(), &strict).unwrap();
        assert!(loaded.patients.is_empty());
        assert_eq!(stats.patients_read, 10);
    }

    #[test]
    fn unknown_patient_is_reported() {
        let corpus = generate_corpus(&GeneratorConfig::three_tables(3, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        fs::write(dir.path().join(PATIENTS_FILE), "patient_id\np00000\n").unwrap();
        let err = load_corpus(dir.path(), &LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains("unknown patient"), "{err}");
    }
}
