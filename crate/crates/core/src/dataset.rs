//! JSON Lines persistence for segment and labeled-query datasets.
//!
//! A dataset directory holds three files:
//!
//! * `manifest.json` – `{"schema_version": 1, ...}` header sidecar,
//! * `segments.jsonl` – one [`TrajectorySegment`] per line,
//! * `shq.jsonl` – one [`SentimentHighlightedQuery`] per line.
//!
//! The manifest is checked before any record is read, so an unsupported
//! version never produces a partial load.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{SentimentHighlightedQuery, TrajectorySegment};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const SHQ_FILE: &str = "shq.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported schema version {found} in {path} (supported: {supported})")]
    Version { path: PathBuf, found: u32, supported: u32 },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("malformed record at {path} line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub segments_file: String,
    pub shq_file: String,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            segments_file: SEGMENTS_FILE.to_string(),
            shq_file: SHQ_FILE.to_string(),
        }
    }
}

/// In-memory segment pool and labeled-query set.
///
/// Mutation goes through `&mut self`; callers sharing a store across threads
/// wrap it in a single lock so there is exactly one writer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStore {
    pub segments: Vec<TrajectorySegment>,
    pub labeled: Vec<SentimentHighlightedQuery>,
    pub root: Option<PathBuf>,
}

impl DatasetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_segments(&mut self, segments: impl IntoIterator<Item = TrajectorySegment>) {
        self.segments.extend(segments);
    }

    pub fn add_labeled(&mut self, shq: SentimentHighlightedQuery) {
        self.labeled.push(shq);
    }

    /// Record equality, ignoring `root`.
    pub fn same_records(&self, other: &DatasetStore) -> bool {
        self.segments == other.segments && self.labeled == other.labeled
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&Manifest::default()).expect("manifest serializes");
    fs::write(&path, body + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Manifest { path: path.clone(), message: e.to_string() })?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DatasetError::Manifest { path: path.clone(), message: "missing schema_version".into() })?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(DatasetError::Version { path, found: found as u32, supported: SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| DatasetError::Manifest { path, message: e.to_string() })
}

/// Writes `manifest.json`, `segments.jsonl` and `shq.jsonl` into `dir`.
pub fn save_dataset(store: &DatasetStore, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    write_manifest(dir)?;
    write_jsonl(&dir.join(SEGMENTS_FILE), &store.segments)?;
    write_jsonl(&dir.join(SHQ_FILE), &store.labeled)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetStore, DatasetError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let segments = read_jsonl(&dir.join(&manifest.segments_file))?;
    let labeled = read_jsonl(&dir.join(&manifest.shq_file))?;
    Ok(DatasetStore { segments, labeled, root: Some(dir.to_path_buf()) })
}

/// Appends one labeled query to `dir/shq.jsonl`, creating the manifest if the
/// directory is new.
pub fn append_shq(dir: impl AsRef<Path>, shq: &SentimentHighlightedQuery) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    if !dir.join(MANIFEST_FILE).exists() {
        write_manifest(dir)?;
    }
    let path = dir.join(SHQ_FILE);
    let mut line = serde_json::to_vec(shq).map_err(|e| DatasetError::Malformed {
        path: path.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    file.write_all(&line).map_err(io_err(&path))
}

/// Number of records in `dir/shq.jsonl` (zero when absent).
pub fn count_shq(dir: impl AsRef<Path>) -> Result<usize, DatasetError> {
    let path = dir.as_ref().join(SHQ_FILE);
    if !path.exists() {
        return Ok(0);
    }
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        if !line.map_err(io_err(&path))?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}
