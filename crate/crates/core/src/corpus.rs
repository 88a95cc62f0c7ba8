//! Clinical event records, the seeded synthetic corpus generator and cohort
//! splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decimal::{format_scaled, is_decimal};

/// Patients with fewer events than this are excluded from a cohort.
pub const MIN_COHORT_EVENTS: usize = 5;

/// Default observation window: the first 12 hours after admission.
pub const DEFAULT_WINDOW_HOURS: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("event has an empty table name")]
    EmptyTableName,
    #[error("event in table `{0}` has no columns")]
    EmptyEvent(String),
    #[error("numeric cell `{value}` in {table}.{column} is not a plain decimal")]
    NotDecimal {
        table: String,
        column: String,
        value: String,
    },
    #[error("itemized code `{code}` in {table}.{column} is missing from the definition table")]
    UnknownCode {
        table: String,
        column: String,
        code: String,
    },
    #[error("events of patient `{0}` are not in chronological order")]
    Unsorted(String),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("patient `{patient}` has no label for task `{task}`")]
    MissingLabel { patient: String, task: String },
}

/// Declared kind of a column; decides how its cells are textualized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Text,
    Itemized,
}

/// One table cell. Numeric cells keep their source spelling so that
/// serialization is exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellValue {
    Numeric(String),
    Text(String),
    Itemized(String),
}

impl CellValue {
    pub fn kind(&self) -> ColumnKind {
        match self {
            CellValue::Numeric(_) => ColumnKind::Numeric,
            CellValue::Text(_) => ColumnKind::Text,
            CellValue::Itemized(_) => ColumnKind::Itemized,
        }
    }

    pub fn raw(&self) -> &str {
        match self {
            CellValue::Numeric(s) | CellValue::Text(s) | CellValue::Itemized(s) => s,
        }
    }
}

/// One row of one table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub table: String,
    pub columns: Vec<(String, CellValue)>,
    /// Seconds since admission.
    pub timestamp: u64,
}

impl EventRecord {
    pub fn new(table: impl Into<String>, timestamp: u64) -> Self {
        EventRecord {
            table: table.into(),
            columns: Vec::new(),
            timestamp,
        }
    }

    pub fn with(mut self, column: impl Into<String>, cell: CellValue) -> Self {
        self.columns.push((column.into(), cell));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub events: Vec<EventRecord>,
    /// Task name to label value.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

/// Itemized code to free-text description.
pub type DefinitionTable = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<TableSchema>,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub patients: Vec<PatientRecord>,
    pub definitions: DefinitionTable,
    pub schema: Schema,
}

impl Corpus {
    pub fn event_count(&self) -> usize {
        self.patients.iter().map(|p| p.events.len()).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.patients.iter().flat_map(|p| p.events.iter())
    }

    /// Checks record-level invariants: non-empty events, decimal numerics,
    /// resolvable itemized codes and chronological order.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for patient in &self.patients {
            if patient
                .events
                .windows(2)
                .any(|w| w[0].timestamp > w[1].timestamp)
            {
                return Err(CorpusError::Unsorted(patient.id.clone()));
            }
            for event in &patient.events {
                validate_event(event, &self.definitions)?;
            }
        }
        Ok(())
    }

    /// Keeps a copy of the corpus restricted to the given patients.
    fn with_patients(&self, patients: Vec<PatientRecord>) -> Corpus {
        Corpus {
            patients,
            definitions: self.definitions.clone(),
            schema: self.schema.clone(),
        }
    }
}

pub fn validate_event(event: &EventRecord, definitions: &DefinitionTable) -> Result<(), CorpusError> {
    if event.table.is_empty() {
        return Err(CorpusError::EmptyTableName);
    }
    if event.columns.is_empty() {
        return Err(CorpusError::EmptyEvent(event.table.clone()));
    }
    for (column, cell) in &event.columns {
        match cell {
            CellValue::Numeric(v) if !is_decimal(v) => {
                return Err(CorpusError::NotDecimal {
                    table: event.table.clone(),
                    column: column.clone(),
                    value: v.clone(),
                })
            }
            CellValue::Itemized(code) if !definitions.contains_key(code) => {
                return Err(CorpusError::UnknownCode {
                    table: event.table.clone(),
                    column: column.clone(),
                    code: code.clone(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Drops events at or beyond the observation window, then drops patients left
/// with fewer than `min_events` events.
pub fn apply_cohort_filter(patients: &mut Vec<PatientRecord>, min_events: usize, window_seconds: u64) {
    for p in patients.iter_mut() {
        p.events.retain(|e| e.timestamp < window_seconds);
    }
    patients.retain(|p| p.events.len() >= min_events);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCode {
    pub code: String,
    pub description: String,
}

/// Value distribution of one generated column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueSpec {
    /// Uniform over the decimals representable with `decimals` places in
    /// `[min, max]`.
    Numeric { min: f64, max: f64, decimals: u32 },
    Text { choices: Vec<String> },
    Itemized { codes: Vec<ItemCode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub values: ValueSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    /// Relative frequency of this table among generated events.
    #[serde(default = "one")]
    pub weight: u32,
    pub columns: Vec<ColumnSpec>,
}

fn one() -> u32 {
    1
}

fn default_window() -> u32 {
    DEFAULT_WINDOW_HOURS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub events_per_patient: CountRange,
    #[serde(default = "default_window")]
    pub observation_window_hours: u32,
    /// Binary placeholder tasks; each patient gets a "0"/"1" label per task.
    #[serde(default)]
    pub tasks: Vec<String>,
    pub tables: Vec<TableSpec>,
}

impl GeneratorConfig {
    /// Lab, prescription and infusion tables with itemized, numeric and text
    /// columns.
    pub fn three_tables(seed: u64, n_patients: usize) -> Self {
        let codes = |pairs: &[(&str, &str)]| ValueSpec::Itemized {
            codes: pairs
                .iter()
                .map(|(c, d)| ItemCode {
                    code: c.to_string(),
                    description: d.to_string(),
                })
                .collect(),
        };
        let text = |xs: &[&str]| ValueSpec::Text {
            choices: xs.iter().map(|s| s.to_string()).collect(),
        };
        let col = |name: &str, values: ValueSpec| ColumnSpec {
            name: name.to_string(),
            values,
        };
        GeneratorConfig {
            seed,
            n_patients,
            events_per_patient: CountRange { min: 5, max: 40 },
            observation_window_hours: DEFAULT_WINDOW_HOURS,
            tasks: vec!["mortality".to_string(), "los3".to_string()],
            tables: vec![
                TableSpec {
                    name: "labevents".to_string(),
                    weight: 3,
                    columns: vec![
                        col(
                            "itemid",
                            codes(&[
                                ("51385", "Atypical Lymphocytes"),
                                ("50912", "Creatinine"),
                                ("50971", "Potassium"),
                                ("51222", "Hemoglobin"),
                            ]),
                        ),
                        col(
                            "value",
                            ValueSpec::Numeric {
                                min: 0.5,
                                max: 15.9,
                                decimals: 1,
                            },
                        ),
                        col("valueuom", text(&["mg/dL", "mEq/L", "g/dL", "%"])),
                        col("flag", text(&["normal", "abnormal"])),
                    ],
                },
                TableSpec {
                    name: "prescriptions".to_string(),
                    weight: 2,
                    columns: vec![
                        col(
                            "drug",
                            text(&["Normal Saline", "Heparin Sodium", "Furosemide", "Insulin Regular"]),
                        ),
                        col(
                            "dose_val_rx",
                            ValueSpec::Numeric {
                                min: 1.0,
                                max: 500.0,
                                decimals: 0,
                            },
                        ),
                        col("dose_unit_rx", text(&["mg", "mL", "UNIT"])),
                        col("route", text(&["IV", "PO", "SC"])),
                    ],
                },
                TableSpec {
                    name: "inputevents".to_string(),
                    weight: 2,
                    columns: vec![
                        col(
                            "itemid",
                            codes(&[
                                ("225158", "NaCl 0.9%"),
                                ("220949", "Dextrose 5%"),
                                ("221906", "Norepinephrine"),
                            ]),
                        ),
                        col(
                            "amount",
                            ValueSpec::Numeric {
                                min: 0.01,
                                max: 999.99,
                                decimals: 2,
                            },
                        ),
                        col(
                            "rate",
                            ValueSpec::Numeric {
                                min: 0.1,
                                max: 250.0,
                                decimals: 1,
                            },
                        ),
                        col("amountuom", text(&["mL", "mg", "mcg"])),
                    ],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidConfig(msg));
        if self.tables.is_empty() {
            return bad("no tables declared".into());
        }
        let range = self.events_per_patient;
        if range.min > range.max {
            return bad(format!("events_per_patient min {} exceeds max {}", range.min, range.max));
        }
        if range.min < MIN_COHORT_EVENTS {
            return bad(format!(
                "events_per_patient min {} is below the cohort minimum of {MIN_COHORT_EVENTS}",
                range.min
            ));
        }
        if self.observation_window_hours == 0 {
            return bad("observation window must be at least one hour".into());
        }
        if self.tables.iter().all(|t| t.weight == 0) {
            return bad("all table weights are zero".into());
        }
        for table in &self.tables {
            if table.name.trim().is_empty() {
                return bad("table with empty name".into());
            }
            if table.columns.is_empty() {
                return bad(format!("table `{}` declares no columns", table.name));
            }
            for column in &table.columns {
                let at = || format!("{}.{}", table.name, column.name);
                match &column.values {
                    ValueSpec::Numeric { min, max, decimals } => {
                        if !(min.is_finite() && max.is_finite()) {
                            return bad(format!("{}: non-finite range", at()));
                        }
                        if *decimals > 6 {
                            return bad(format!("{}: at most 6 decimals supported", at()));
                        }
                        let (lo, hi) = scaled_bounds(*min, *max, *decimals);
                        if min > max || lo > hi {
                            return bad(format!("{}: empty numeric range [{min}, {max}]", at()));
                        }
                    }
                    ValueSpec::Text { choices } => {
                        if choices.is_empty() || choices.iter().any(|c| c.trim().is_empty()) {
                            return bad(format!("{}: text choices must be non-empty", at()));
                        }
                    }
                    ValueSpec::Itemized { codes } => {
                        if codes.is_empty() || codes.iter().any(|c| c.description.trim().is_empty()) {
                            return bad(format!("{}: itemized codes need descriptions", at()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn window_seconds(&self) -> u64 {
        u64::from(self.observation_window_hours) * 3600
    }

    pub fn schema(&self) -> Schema {
        Schema {
            tables: self
                .tables
                .iter()
                .map(|t| TableSchema {
                    name: t.name.clone(),
                    columns: t
                        .columns
                        .iter()
                        .map(|c| ColumnSchema {
                            name: c.name.clone(),
                            kind: match c.values {
                                ValueSpec::Numeric { .. } => ColumnKind::Numeric,
                                ValueSpec::Text { .. } => ColumnKind::Text,
                                ValueSpec::Itemized { .. } => ColumnKind::Itemized,
                            },
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Integer bounds of `[min, max]` scaled by `10^decimals`. Products within
/// 1e-6 of an integer snap to it so that e.g. 3.1 stays representable.
fn scaled_bounds(min: f64, max: f64, decimals: u32) -> (i64, i64) {
    let pow = (0..decimals).fold(1.0, |acc, _| acc * 10.0);
    (ceil_snap(min * pow), floor_snap(max * pow))
}

fn nearest(x: f64) -> i64 {
    if x >= 0.0 {
        (x + 0.5) as i64
    } else {
        (x - 0.5) as i64
    }
}

fn ceil_snap(x: f64) -> i64 {
    let r = nearest(x);
    if (x - r as f64).abs() < 1e-6 {
        return r;
    }
    let t = x as i64;
    if (t as f64) < x {
        t + 1
    } else {
        t
    }
}

fn floor_snap(x: f64) -> i64 {
    let r = nearest(x);
    if (x - r as f64).abs() < 1e-6 {
        return r;
    }
    let t = x as i64;
    if (t as f64) > x {
        t - 1
    } else {
        t
    }
}

/// Generates a corpus as a pure function of `config`.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let window = config.window_seconds();
    let total_weight: u32 = config.tables.iter().map(|t| t.weight).sum();

    let mut definitions = DefinitionTable::new();
    for table in &config.tables {
        for column in &table.columns {
            if let ValueSpec::Itemized { codes } = &column.values {
                for c in codes {
                    definitions.insert(c.code.clone(), c.description.clone());
                }
            }
        }
    }

    let mut patients = Vec::with_capacity(config.n_patients);
    for index in 0..config.n_patients {
        let n_events = rng.gen_range(config.events_per_patient.min..=config.events_per_patient.max);
        let mut timestamps: Vec<u64> = (0..n_events).map(|_| rng.gen_range(0..window)).collect();
        timestamps.sort_unstable();

        let mut events = Vec::with_capacity(n_events);
        for timestamp in timestamps {
            let mut pick = rng.gen_range(0..total_weight);
            let (position, table) = config
                .tables
                .iter()
                .enumerate()
                .find(|(_, t)| {
                    if pick < t.weight {
                        true
                    } else {
                        pick -= t.weight;
                        false
                    }
                })
                .expect("weighted pick within total");
            let columns = table
                .columns
                .iter()
                .map(|c| (c.name.clone(), draw_cell(&c.values, &mut rng)))
                .collect();
            events.push((
                position,
                EventRecord {
                    table: table.name.clone(),
                    columns,
                    timestamp,
                },
            ));
        }
        // equal timestamps are ordered by table, matching how stored corpora load
        events.sort_by_key(|(position, e)| (e.timestamp, *position));
        let events = events.into_iter().map(|(_, e)| e).collect();

        let labels = config
            .tasks
            .iter()
            .map(|task| (task.clone(), if rng.gen_bool(0.5) { "1" } else { "0" }.to_string()))
            .collect();
        patients.push(PatientRecord {
            id: format!("p{index:05}"),
            events,
            labels,
        });
    }

    Ok(Corpus {
        patients,
        definitions,
        schema: config.schema(),
    })
}

fn draw_cell(spec: &ValueSpec, rng: &mut ChaCha8Rng) -> CellValue {
    match spec {
        ValueSpec::Numeric { min, max, decimals } => {
            let (lo, hi) = scaled_bounds(*min, *max, *decimals);
            CellValue::Numeric(format_scaled(rng.gen_range(lo..=hi), *decimals))
        }
        ValueSpec::Text { choices } => CellValue::Text(choices[rng.gen_range(0..choices.len())].clone()),
        ValueSpec::Itemized { codes } => CellValue::Itemized(codes[rng.gen_range(0..codes.len())].code.clone()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSplit {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

/// Partitions patients into train/valid/test. Group sizes use largest
/// remainders, so each split is within one patient of its exact share; with
/// `stratify_on` the rule is applied per label value.
pub fn split_cohort(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
    stratify_on: Option<&str>,
) -> Result<CohortSplit, CorpusError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CorpusError::InvalidRatios(format!("{r:?} must be non-negative")));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(format!("{r:?} must sum to 1")));
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.patients.iter().enumerate() {
        let key = match stratify_on {
            None => "",
            Some(task) => p.labels.get(task).map(String::as_str).ok_or_else(|| CorpusError::MissingLabel {
                patient: p.id.clone(),
                task: task.to_string(),
            })?,
        };
        groups.entry(key).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned = [Vec::new(), Vec::new(), Vec::new()];
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let sizes = largest_remainder(members.len(), &r);
        let mut rest = members.as_slice();
        for (slot, size) in assigned.iter_mut().zip(sizes) {
            let (head, tail) = rest.split_at(size);
            slot.extend_from_slice(head);
            rest = tail;
        }
    }

    let [train, valid, test] = assigned.map(|mut idx| {
        idx.sort_unstable();
        corpus.with_patients(idx.into_iter().map(|i| corpus.patients[i].clone()).collect())
    });
    Ok(CohortSplit { train, valid, test })
}

fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| floor_snap(x).max(0) as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}
