//! On-disk formats.
//!
//! * Datasets: JSON lines. Line 1 is a [`DatasetHeader`]; every further line
//!   is one [`DatasetRecord`].
//! * Metrics and control results: pretty JSON wrapped in an [`Envelope`].
//! * Tables: CSV whose first line is a `#` comment carrying the schema,
//!   version and the resolved run configuration.
//! * Checkpoints: the binary container of [`graybox::blackbox::checkpoint`].

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use graybox::blackbox::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
use graybox::{DatasetRecord, ModelParameters, RngSeed, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const DATASET_SCHEMA: &str = "graybox.dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub sim: SimConfig,
    pub seed: RngSeed,
    pub count: usize,
    pub config: RunConfig,
}

/// Common wrapper for JSON outputs; `config` is the resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub version: u32,
    pub config: RunConfig,
    pub coupling: f64,
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(schema: &str, config: &RunConfig, coupling: f64, body: T) -> Self {
        Envelope { schema: schema.into(), version: SCHEMA_VERSION, config: config.resolved(), coupling, body }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn json_line<T: Serialize>(path: &Path, value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| CliError::format(path, e))
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, records: &[DatasetRecord]) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "{}", json_line(path, header)?).map_err(io)?;
    for r in records {
        writeln!(w, "{}", json_line(path, r)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> CliResult<(DatasetHeader, Vec<DatasetRecord>)> {
    let mut lines = open(path)?.lines();
    let first = lines
        .next()
        .ok_or_else(|| CliError::format(path, "empty dataset file"))?
        .map_err(|e| CliError::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| CliError::format(path, e))?;
    if header.schema != DATASET_SCHEMA || header.version != SCHEMA_VERSION {
        return Err(CliError::format(path, format!("unsupported schema {} v{}", header.schema, header.version)));
    }
    let mut records = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let record = serde_json::from_str(&line).map_err(|e| CliError::format(path, format!("line {}: {e}", n + 2)))?;
        records.push(record);
    }
    if records.len() != header.count {
        return Err(CliError::format(path, format!("header promises {} records, found {}", header.count, records.len())));
    }
    Ok((header, records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::format(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::format(path, e))
}

/// CSV with a leading `# schema=… version=… config=…` comment line.
pub fn write_csv(path: &Path, schema: &str, config: &RunConfig, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut body = csv::Writer::from_writer(Vec::new());
    body.write_record(header).map_err(|e| CliError::format(path, e))?;
    for row in rows {
        body.write_record(row).map_err(|e| CliError::format(path, e))?;
    }
    let body = body.into_inner().map_err(|e| CliError::format(path, e))?;
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "# schema={schema} version={SCHEMA_VERSION} config={}", json_line(path, &config.resolved())?).map_err(io)?;
    w.write_all(&body).map_err(io)?;
    w.flush().map_err(io)
}

/// Header and rows of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(open(path)?);
    let header = reader.headers().map_err(|e| CliError::format(path, e))?.iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::format(path, e))?;
    Ok((header, rows))
}

pub fn save_checkpoint(path: &Path, params: &ModelParameters, metadata: serde_json::Value) -> CliResult<()> {
    let mut w = create(path)?;
    write_checkpoint(&mut w, params, metadata)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> CliResult<(ModelParameters, CheckpointHeader)> {
    Ok(read_checkpoint(open(path)?)?)
}
