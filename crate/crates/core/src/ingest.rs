//! Comma-separated dataset files.
//!
//! A file has a header row; the schema names which column instantiates the
//! origin relation, which holds the label, and which hold features. Other
//! columns (for instance alternative origin types) are ignored. Data rows are
//! numbered from 1; row 0 is the header.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{OriginDataset, OriginId, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub origin_column: String,
    pub label_column: String,
    /// Explicit feature columns, in order.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    /// Used when `feature_columns` is empty: every column whose name starts
    /// with this prefix, in header order.
    #[serde(default)]
    pub feature_prefix: Option<String>,
    #[serde(default)]
    pub length_column: Option<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            origin_column: "origin".into(),
            label_column: "label".into(),
            feature_columns: Vec::new(),
            feature_prefix: Some("f".into()),
            length_column: Some("length".into()),
        }
    }
}

fn ingest_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Ingest {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

pub fn load_delimited(path: &Path, schema: &DatasetSchema) -> Result<OriginDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| ingest_err(0, "", format!("cannot open {}: {e}", path.display())))?;
    load_delimited_from_reader(file, schema)
}

pub fn load_delimited_from_reader<R: Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<OriginDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ingest_err(0, "", format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(ingest_err(0, "", "empty file"));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest_err(0, name, "missing column"))
    };
    let origin_col = find(&schema.origin_column)?;
    let label_col = find(&schema.label_column)?;
    let length_col = match &schema.length_column {
        Some(name) => headers.iter().position(|h| h == name),
        None => None,
    };
    let feature_cols: Vec<usize> = if !schema.feature_columns.is_empty() {
        schema
            .feature_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?
    } else if let Some(prefix) = &schema.feature_prefix {
        headers
            .iter()
            .enumerate()
            .filter(|(i, h)| {
                h.starts_with(prefix.as_str())
                    && *i != origin_col
                    && *i != label_col
                    && Some(*i) != length_col
            })
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    if feature_cols.is_empty() {
        return Err(ingest_err(0, "", "schema selects no feature columns"));
    }

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| ingest_err(row, "", e.to_string()))?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let origin = OriginId::new(cell(origin_col))
            .map_err(|_| ingest_err(row, &headers[origin_col], "empty origin id"))?;
        let label = parse_f64(cell(label_col), row, &headers[label_col])?;
        let features = feature_cols
            .iter()
            .map(|&c| parse_f64(cell(c), row, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        let length = match length_col {
            Some(c) => Some(cell(c).parse::<u32>().map_err(|_| {
                ingest_err(row, &headers[c], format!("'{}' is not a length", cell(c)))
            })?),
            None => None,
        };
        samples.push(Sample {
            id: samples.len(),
            features,
            label,
            origin,
            length,
        });
    }
    if samples.is_empty() {
        return Err(ingest_err(1, "", "file has a header but no data rows"));
    }
    OriginDataset::new(samples, feature_cols.len())
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ingest_err(row, column, format!("'{cell}' is not a finite number"))),
    }
}

/// Write a dataset with columns `origin,label[,length],f0..f{w-1}`. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_delimited<W: Write>(dataset: &OriginDataset, writer: W) -> Result<()> {
    let with_length = dataset.samples().iter().all(|s| s.length.is_some()) && !dataset.is_empty();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["origin".to_string(), "label".to_string()];
    if with_length {
        header.push("length".into());
    }
    header.extend((0..dataset.feature_width()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for s in dataset.samples() {
        let mut rec = vec![s.origin.to_string(), s.label.to_string()];
        if with_length {
            rec.push(s.length.unwrap_or_default().to_string());
        }
        rec.extend(s.features.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_delimited_file(dataset: &OriginDataset, path: &Path) -> Result<()> {
    write_delimited(dataset, std::fs::File::create(path)?)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
