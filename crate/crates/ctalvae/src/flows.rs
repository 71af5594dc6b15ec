//! CSV files: flow records, sequence labels and anomaly scores.
//!
//! Rows are numbered like a spreadsheet: the header is row 1 and the first
//! record row 2.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ctalvae_core::{FeatureSchema, FlowRecord, Label, Sequence};

use crate::error::{io_err, AppError, Result};

pub const TS: &str = "ts";
pub const SRC: &str = "src_ip";
pub const DST: &str = "dst_ip";

struct Layout {
    ts: usize,
    src: usize,
    dst: usize,
    features: Vec<usize>,
}

fn layout(header: &csv::StringRecord) -> Result<(Layout, FeatureSchema)> {
    let find = |name: &'static str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(AppError::MissingColumn(name))
    };
    let (ts, src, dst) = (find(TS)?, find(SRC)?, find(DST)?);
    let features: Vec<usize> = (0..header.len()).filter(|i| ![ts, src, dst].contains(i)).collect();
    let names = features.iter().map(|&i| header[i].trim().to_string()).collect();
    let schema = FeatureSchema::new(names)?;
    Ok((Layout { ts, src, dst, features }, schema))
}

fn number(cell: &str, column: &str, row: u64) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| AppError::Csv {
        row,
        message: format!("column `{column}`: cannot parse {cell:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(AppError::Csv {
            row,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(v)
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source)
}

fn csv_row(e: &csv::Error, fallback: u64) -> u64 {
    e.position().map_or(fallback, |p| p.line())
}

/// Reads a flow CSV, taking the schema from its header.
pub fn read_flows<R: Read>(source: R) -> Result<(FeatureSchema, Vec<FlowRecord>)> {
    let mut rdr = reader(source);
    let header = rdr.headers().map_err(|e| AppError::Csv {
        row: 1,
        message: e.to_string(),
    })?;
    let (lay, schema) = layout(header)?;
    let names = schema.names().to_vec();
    let mut flows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| AppError::Csv {
            row: csv_row(&e, row),
            message: e.to_string(),
        })?;
        if rec.len() != lay.features.len() + 3 {
            return Err(AppError::Csv {
                row,
                message: format!("expected {} fields, found {}", lay.features.len() + 3, rec.len()),
            });
        }
        let features = lay
            .features
            .iter()
            .zip(&names)
            .map(|(&c, name)| number(&rec[c], name, row))
            .collect::<Result<Vec<_>>>()?;
        flows.push(FlowRecord::new(number(&rec[lay.ts], TS, row)?, &rec[lay.src], &rec[lay.dst], features));
    }
    Ok((schema, flows))
}

/// Reads a flow CSV whose feature columns must equal `schema`.
pub fn parse_flows<R: Read>(source: R, schema: &FeatureSchema) -> Result<Vec<FlowRecord>> {
    let (found, flows) = read_flows(source)?;
    if found.dim() != schema.dim() {
        return Err(ctalvae_core::Error::DimensionMismatch {
            context: "flow feature columns",
            expected: schema.dim(),
            actual: found.dim(),
        }
        .into());
    }
    if found.names() != schema.names() {
        return Err(AppError::Csv {
            row: 1,
            message: format!("feature columns {:?} differ from schema {:?}", found.names(), schema.names()),
        });
    }
    Ok(flows)
}

pub fn load_flows(path: &Path) -> Result<(FeatureSchema, Vec<FlowRecord>)> {
    read_flows(File::open(path).map_err(io_err(path))?)
}

fn csv_write_err(e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => AppError::Io {
            path: Default::default(),
            source,
        },
        other => AppError::Csv {
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_flows<W: Write>(sink: W, schema: &FeatureSchema, flows: &[FlowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![TS.to_string(), SRC.to_string(), DST.to_string()];
    header.extend(schema.names().iter().cloned());
    w.write_record(&header).map_err(csv_write_err)?;
    for f in flows {
        let mut row = vec![f.ts.to_string(), f.src.clone(), f.dst.clone()];
        row.extend(f.features.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_write_err)?;
    }
    w.flush().map_err(io_err(""))?;
    Ok(())
}

pub fn save_flows(path: &Path, schema: &FeatureSchema, flows: &[FlowRecord]) -> Result<()> {
    write_flows(File::create(path).map_err(io_err(path))?, schema, flows).map_err(|e| with_path(e, path))
}

fn with_path(e: AppError, path: &Path) -> AppError {
    match e {
        AppError::Io { source, .. } => AppError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Ground truth of one sequence, joinable with scores on
/// `(receiver, start_ts)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelRow {
    pub receiver: String,
    pub start_ts: f64,
    pub label: Label,
}

/// Anomaly score of one sequence.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreRow {
    pub receiver: String,
    pub start_ts: f64,
    pub score: f64,
}

impl ScoreRow {
    pub fn from_sequences(sequences: &[Sequence], scores: &[f64]) -> Vec<ScoreRow> {
        sequences
            .iter()
            .zip(scores)
            .map(|(s, &score)| ScoreRow {
                receiver: s.receiver.clone(),
                start_ts: s.start_ts,
                score,
            })
            .collect()
    }
}

pub fn save_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| with_path(csv_write_err(e), path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn load_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = reader(file);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| AppError::Csv {
                row: csv_row(&e, i as u64 + 2),
                message: e.to_string(),
            })
        })
        .collect()
}
