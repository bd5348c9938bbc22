//! CSV ingestion for real tabular datasets.
//!
//! A JSON schema assigns each column a role (continuous, categorical,
//! sensitive, label), names the values that map the sensitive column to
//! `{-1, +1}`, gives the anomaly predicate on the label column, and fixes
//! the split sizes. Loading validates the header, drops rows with missing
//! values, maps the sensitive column, and evaluates the predicate.
//! Splitting subsamples normals and anomalies with a seeded generator,
//! freezes min-max statistics and category vocabularies on the training
//! rows, and encodes both splits with those frozen parameters so nothing
//! leaks from the test split into preprocessing.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SeededRng;
use crate::scm::{Dataset, Sample};

/// Errors from schema validation, CSV parsing, and split sizing.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema is invalid: {reason}")]
    InvalidSchema { reason: String },
    #[error("csv header is missing schema columns {missing:?}")]
    HeaderMismatch { missing: Vec<String> },
    #[error("row {row}, column {column}: cannot read {value:?} as a finite number")]
    MalformedNumber { row: usize, column: String, value: String },
    #[error("row {row}: sensitive value {value:?} is not in the schema mapping")]
    UnknownSensitiveValue { row: usize, value: String },
    #[error("not enough {class} rows: requested {requested}, available {available}")]
    Insufficient { class: &'static str, requested: usize, available: usize },
    #[error("canonical csv, row {row}: {reason}")]
    MalformedCanonical { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Role a raw column plays during ingestion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Sensitive,
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Raw string values mapped to +1 and -1 respectively. Values in neither
/// list are rejected, so the lists must cover the column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitiveValues {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

/// Predicate on the raw label value that marks a row anomalous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPredicate {
    Equals(String),
    OneOf(Vec<String>),
}

impl LabelPredicate {
    fn matches(&self, value: &str) -> bool {
        match self {
            LabelPredicate::Equals(target) => value == target,
            LabelPredicate::OneOf(targets) => targets.iter().any(|t| t == value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRule {
    pub column: String,
    #[serde(flatten)]
    pub predicate: LabelPredicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train_normals: usize,
    pub test_normals: usize,
    pub test_anomalies: usize,
}

/// Everything needed to turn one raw CSV layout into model-ready splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub sensitive_values: SensitiveValues,
    pub anomaly: AnomalyRule,
    pub splits: SplitSizes,
    /// Raw cell contents treated as missing; the whole row is dropped.
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
}

fn default_missing_markers() -> Vec<String> {
    vec![String::new(), "?".to_string()]
}

impl DatasetSchema {
    /// Reads and validates a schema JSON file.
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        let schema: DatasetSchema = serde_json::from_str(&fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: String| Err(DatasetError::InvalidSchema { reason });
        let count = |kind| self.columns.iter().filter(|c| c.kind == kind).count();
        if count(ColumnKind::Sensitive) != 1 {
            return invalid(format!("need exactly one sensitive column, got {}", count(ColumnKind::Sensitive)));
        }
        if count(ColumnKind::Label) != 1 {
            return invalid(format!("need exactly one label column, got {}", count(ColumnKind::Label)));
        }
        if self.feature_columns().next().is_none() {
            return invalid("no continuous or categorical feature columns".to_string());
        }
        let mut names = BTreeSet::new();
        for column in &self.columns {
            if !names.insert(column.name.as_str()) {
                return invalid(format!("duplicate column {:?}", column.name));
            }
        }
        if self.anomaly.column != self.label_column().name {
            return invalid(format!(
                "anomaly rule targets {:?} but the label column is {:?}",
                self.anomaly.column,
                self.label_column().name
            ));
        }
        Ok(())
    }

    fn single(&self, kind: ColumnKind) -> &ColumnSpec {
        self.columns.iter().find(|c| c.kind == kind).expect("validated schema")
    }

    fn label_column(&self) -> &ColumnSpec {
        self.single(ColumnKind::Label)
    }

    fn sensitive_column(&self) -> &ColumnSpec {
        self.single(ColumnKind::Sensitive)
    }

    fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Continuous | ColumnKind::Categorical))
    }
}

/// One validated row: mapped sensitive value, anomaly flag, and the
/// feature cells in schema order.
#[derive(Clone, Debug, PartialEq)]
struct RawRow {
    s: f64,
    y: u8,
    cells: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq)]
enum Cell {
    Number(f64),
    Text(String),
}

/// A loaded CSV: surviving rows plus a count of rows dropped for missing
/// values.
#[derive(Clone, Debug)]
pub struct RawTable {
    rows: Vec<RawRow>,
    pub dropped_missing: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn normal_count(&self) -> usize {
        self.rows.iter().filter(|r| r.y == 0).count()
    }

    pub fn anomaly_count(&self) -> usize {
        self.rows.len() - self.normal_count()
    }
}

/// Parses a raw CSV against the schema. Rows containing a missing marker
/// in any schema column are dropped and counted; unparseable numbers and
/// unmapped sensitive values are hard errors naming the cell.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable, DatasetError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| position(&c.name).is_none())
        .map(|c| c.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::HeaderMismatch { missing });
    }
    let slots: Vec<usize> =
        schema.columns.iter().map(|c| position(&c.name).expect("checked above")).collect();
    let sensitive_slot = position(&schema.sensitive_column().name).expect("checked above");
    let label_slot = position(&schema.label_column().name).expect("checked above");

    let mut rows = Vec::new();
    let mut dropped_missing = 0;
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let row = index + 1;
        if slots.iter().any(|&slot| schema.missing_markers.iter().any(|m| m == &record[slot])) {
            dropped_missing += 1;
            continue;
        }
        let raw_s = &record[sensitive_slot];
        let s = if schema.sensitive_values.positive.iter().any(|v| v == raw_s) {
            1.0
        } else if schema.sensitive_values.negative.iter().any(|v| v == raw_s) {
            -1.0
        } else {
            return Err(DatasetError::UnknownSensitiveValue { row, value: raw_s.to_string() });
        };
        let y = u8::from(schema.anomaly.predicate.matches(&record[label_slot]));
        let mut cells = Vec::new();
        for column in schema.feature_columns() {
            let value = &record[position(&column.name).expect("checked above")];
            cells.push(match column.kind {
                ColumnKind::Continuous => {
                    let parsed: f64 = value.parse().map_err(|_| DatasetError::MalformedNumber {
                        row,
                        column: column.name.clone(),
                        value: value.to_string(),
                    })?;
                    if !parsed.is_finite() {
                        return Err(DatasetError::MalformedNumber {
                            row,
                            column: column.name.clone(),
                            value: value.to_string(),
                        });
                    }
                    Cell::Number(parsed)
                }
                ColumnKind::Categorical => Cell::Text(value.to_string()),
                ColumnKind::Sensitive | ColumnKind::Label => unreachable!("not a feature column"),
            });
        }
        rows.push(RawRow { s, y, cells });
    }
    debug!("loaded {} rows from {:?}, dropped {} for missing values", rows.len(), path, dropped_missing);
    Ok(RawTable { rows, dropped_missing })
}

/// Frozen preprocessing parameters. Fitting happens on training rows
/// only; encoding with the same parameters is a pure function of the raw
/// cells, so train and test share one feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    features: Vec<FeatureEncoder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FeatureEncoder {
    /// Maps to (v - min) / (max - min); a constant column maps to 0.
    MinMax { column: String, min: f64, max: f64 },
    /// One binary column per vocabulary entry, vocabulary sorted.
    /// Values outside the vocabulary encode as all zeros.
    OneHot { column: String, vocab: Vec<String> },
}

impl Encoder {
    fn fit(schema: &DatasetSchema, rows: &[&RawRow]) -> Encoder {
        let features = schema
            .feature_columns()
            .enumerate()
            .map(|(slot, column)| match column.kind {
                ColumnKind::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for row in rows {
                        let Cell::Number(v) = row.cells[slot] else { unreachable!("typed at load") };
                        min = min.min(v);
                        max = max.max(v);
                    }
                    FeatureEncoder::MinMax { column: column.name.clone(), min, max }
                }
                ColumnKind::Categorical => {
                    let vocab: BTreeSet<String> = rows
                        .iter()
                        .map(|row| {
                            let Cell::Text(v) = &row.cells[slot] else { unreachable!("typed at load") };
                            v.clone()
                        })
                        .collect();
                    FeatureEncoder::OneHot {
                        column: column.name.clone(),
                        vocab: vocab.into_iter().collect(),
                    }
                }
                ColumnKind::Sensitive | ColumnKind::Label => unreachable!("not a feature column"),
            })
            .collect();
        Encoder { features }
    }

    /// Width of the encoded feature vector.
    pub fn width(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                FeatureEncoder::MinMax { .. } => 1,
                FeatureEncoder::OneHot { vocab, .. } => vocab.len(),
            })
            .sum()
    }

    /// One name per encoded column, `column=value` for one-hot slots.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for feature in &self.features {
            match feature {
                FeatureEncoder::MinMax { column, .. } => names.push(column.clone()),
                FeatureEncoder::OneHot { column, vocab } => {
                    names.extend(vocab.iter().map(|v| format!("{column}={v}")));
                }
            }
        }
        names
    }

    /// Encodes every row of the table with the frozen parameters.
    pub fn encode(&self, table: &RawTable) -> Dataset {
        self.encode_rows(table.rows.iter())
    }

    fn encode_rows<'a>(&self, rows: impl Iterator<Item = &'a RawRow>) -> Dataset {
        let mut unknown: BTreeSet<(String, String)> = BTreeSet::new();
        let samples: Vec<Sample> = rows
            .map(|row| Sample {
                s: row.s,
                x: self.encode_cells(&row.cells, &mut unknown),
                u: None,
                y: Some(row.y),
            })
            .collect();
        for (column, value) in unknown {
            warn!("column {column}: category {value:?} was unseen in training, encoded as all zeros");
        }
        Dataset::new(samples, self.width())
    }

    fn encode_cells(&self, cells: &[Cell], unknown: &mut BTreeSet<(String, String)>) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.width());
        for (feature, cell) in self.features.iter().zip(cells) {
            match (feature, cell) {
                (FeatureEncoder::MinMax { min, max, .. }, Cell::Number(v)) => {
                    x.push(if max > min { (v - min) / (max - min) } else { 0.0 });
                }
                (FeatureEncoder::OneHot { column, vocab }, Cell::Text(v)) => {
                    let hot = vocab.binary_search(v).ok();
                    if hot.is_none() {
                        unknown.insert((column.clone(), v.clone()));
                    }
                    x.extend((0..vocab.len()).map(|i| f64::from(hot == Some(i))));
                }
                _ => unreachable!("cells are typed at load time"),
            }
        }
        x
    }
}

/// Encoded splits plus the encoder that produced them, kept for
/// round-tripping and for naming learned-graph nodes.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub encoder: Encoder,
}

/// Stratified subsample at the schema's split sizes: the training split
/// draws normals only, the test split appends anomalies after its
/// normals, and the two never share a row. Preprocessing statistics come
/// from the training rows alone.
pub fn make_splits(
    table: &RawTable,
    schema: &DatasetSchema,
    rng: &mut SeededRng,
) -> Result<Splits, DatasetError> {
    let mut normals: Vec<usize> = Vec::new();
    let mut anomalies: Vec<usize> = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        if row.y == 0 {
            normals.push(i);
        } else {
            anomalies.push(i);
        }
    }
    let sizes = &schema.splits;
    let need_normals = sizes.train_normals + sizes.test_normals;
    if normals.len() < need_normals {
        return Err(DatasetError::Insufficient {
            class: "normal",
            requested: need_normals,
            available: normals.len(),
        });
    }
    if anomalies.len() < sizes.test_anomalies {
        return Err(DatasetError::Insufficient {
            class: "anomaly",
            requested: sizes.test_anomalies,
            available: anomalies.len(),
        });
    }
    rng.shuffle(&mut normals);
    rng.shuffle(&mut anomalies);

    let pick = |indices: &[usize]| indices.iter().map(|&i| &table.rows[i]).collect::<Vec<_>>();
    let train_rows = pick(&normals[..sizes.train_normals]);
    let mut test_rows = pick(&normals[sizes.train_normals..need_normals]);
    test_rows.extend(pick(&anomalies[..sizes.test_anomalies]));

    let encoder = Encoder::fit(schema, &train_rows);
    let train = encoder.encode_rows(train_rows.into_iter());
    let test = encoder.encode_rows(test_rows.into_iter());
    Ok(Splits { train, test, encoder })
}

/// Writes the canonical processed CSV: `id, s, x_0..x_{m-1}, y`, plus a
/// `cf_of` column linking counterfactual rows to their factual row index
/// when given. A missing label writes as an empty field. The metadata
/// string, when given, lands in a leading `#` comment line that readers
/// of the format skip.
pub fn write_canonical_csv(
    path: &Path,
    data: &Dataset,
    cf_of: Option<&[usize]>,
    meta: Option<&str>,
) -> Result<(), DatasetError> {
    if let Some(links) = cf_of {
        assert_eq!(links.len(), data.len(), "one cf_of link per row");
    }
    let mut file = fs::File::create(path)?;
    if let Some(meta) = meta {
        use std::io::Write;
        writeln!(file, "# {meta}")?;
    }
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "s".to_string()];
    header.extend((0..data.m()).map(|j| format!("x_{j}")));
    header.push("y".to_string());
    if cf_of.is_some() {
        header.push("cf_of".to_string());
    }
    writer.write_record(&header)?;
    for (id, sample) in data.samples().iter().enumerate() {
        let mut record = vec![id.to_string(), sample.s.to_string()];
        record.extend(sample.x.iter().map(f64::to_string));
        record.push(sample.y.map(|y| y.to_string()).unwrap_or_default());
        if let Some(links) = cf_of {
            record.push(links[id].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a canonical CSV back into a [`Dataset`]. Leading `#` comment
/// lines and a trailing `cf_of` column are tolerated and ignored;
/// exogenous noise is not part of the format, so loaded samples carry
/// none.
pub fn read_canonical_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let bad_header = |reason: String| DatasetError::MalformedCanonical { row: 0, reason };
    let mut fields = headers.iter();
    if fields.next() != Some("id") || fields.next() != Some("s") {
        return Err(bad_header("expected columns id, s first".to_string()));
    }
    let mut m = 0;
    for field in fields.by_ref() {
        if field == "y" {
            break;
        }
        if field != format!("x_{m}") {
            return Err(bad_header(format!("expected column x_{m}, found {field:?}")));
        }
        m += 1;
    }
    match fields.next() {
        None | Some("cf_of") => {}
        Some(extra) => return Err(bad_header(format!("unexpected trailing column {extra:?}"))),
    }

    let mut samples = Vec::new();
    let mut label_presence: Option<bool> = None;
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let row = index + 1;
        let expect_len = headers.len();
        if record.len() != expect_len {
            return Err(DatasetError::MalformedCanonical {
                row,
                reason: format!("expected {expect_len} fields, found {}", record.len()),
            });
        }
        let number = |slot: usize, column: &str| -> Result<f64, DatasetError> {
            record[slot].parse().map_err(|_| DatasetError::MalformedNumber {
                row,
                column: column.to_string(),
                value: record[slot].to_string(),
            })
        };
        let s = number(1, "s")?;
        let x = (0..m).map(|j| number(2 + j, &format!("x_{j}"))).collect::<Result<_, _>>()?;
        let raw_y = &record[2 + m];
        let y = match raw_y {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(DatasetError::MalformedCanonical {
                    row,
                    reason: format!("label must be empty, 0, or 1, found {other:?}"),
                })
            }
        };
        if *label_presence.get_or_insert(y.is_some()) != y.is_some() {
            return Err(DatasetError::MalformedCanonical {
                row,
                reason: "labels must be present on every row or on none".to_string(),
            });
        }
        samples.push(Sample { s, x, u: None, y });
    }
    Ok(Dataset::new(samples, m))
}
