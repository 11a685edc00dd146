//! Append-only triplet log.
//!
//! One JSON object per LF-terminated line:
//! `{"seq":1,"session_id":"…","ts":"…","i":1,"j":2,"y":2.5}`.
//! Records are stored canonically (`i < j`), `seq` is gapless from 1, and
//! every append is synced to disk before it is acknowledged. The log is the
//! only persisted state; posteriors are rebuilt by replay.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PriorSpec;
use crate::inference::{InferenceError, Posterior, Triplet};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("triplet log I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt triplet log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("triplet ({i}, {j}) is not in canonical i < j orientation")]
    NonCanonical { i: usize, j: usize },
    #[error(transparent)]
    Invalid(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub seq: u64,
    pub session_id: String,
    pub ts: DateTime<Utc>,
    pub i: usize,
    pub j: usize,
    pub y: f64,
}

impl TripletRecord {
    pub fn triplet(&self) -> Triplet {
        Triplet { i: self.i, j: self.j, y: self.y }
    }
}

/// Anything that can durably accept canonical triplets.
pub trait TripletStore: Send {
    fn append(&mut self, session_id: &str, triplet: &Triplet) -> Result<TripletRecord, StoreError>;
}

/// Contents of a log file as read back from disk.
#[derive(Debug, Clone, Default)]
pub struct LoadedLog {
    pub records: Vec<TripletRecord>,
    /// The last line was incomplete and has been skipped.
    pub torn_tail: bool,
    /// Byte length of the valid prefix.
    valid_len: u64,
    /// The valid prefix ends without a line feed.
    missing_newline: bool,
}

impl LoadedLog {
    pub fn triplets(&self) -> Vec<Triplet> {
        self.records.iter().map(TripletRecord::triplet).collect()
    }
}

/// Reads every record in `seq` order. A missing file reads as empty.
pub fn load_all(path: impl AsRef<Path>) -> Result<LoadedLog, StoreError> {
    let bytes = match std::fs::read(path.as_ref()) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(LoadedLog::default()),
        Err(e) => return Err(e.into()),
    };
    parse_log(&bytes)
}

fn parse_log(bytes: &[u8]) -> Result<LoadedLog, StoreError> {
    let mut out = LoadedLog::default();
    let mut offset = 0usize;
    let mut lines = bytes.split_inclusive(|&b| b == b'\n').enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let last = lines.peek().is_none();
        let line_no = idx + 1;
        let terminated = raw.ends_with(b"\n");
        let body = if terminated { &raw[..raw.len() - 1] } else { raw };
        let parsed = std::str::from_utf8(body)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<TripletRecord>(s).map_err(|e| e.to_string()))
            .and_then(|r| check_record(&r, out.records.len() as u64 + 1).map(|()| r));
        match parsed {
            Ok(record) => {
                out.records.push(record);
                offset += raw.len();
                out.missing_newline = !terminated;
            }
            Err(reason) if last => {
                tracing::warn!(line = line_no, %reason, "skipping torn trailing line in triplet log");
                out.torn_tail = true;
            }
            Err(reason) => return Err(StoreError::Corrupt { line: line_no, reason }),
        }
    }
    out.valid_len = offset as u64;
    Ok(out)
}

fn check_record(r: &TripletRecord, expected_seq: u64) -> Result<(), String> {
    if r.seq != expected_seq {
        return Err(format!("expected seq {expected_seq}, found {}", r.seq));
    }
    if r.i >= r.j {
        return Err(format!("non-canonical pair ({}, {})", r.i, r.j));
    }
    Triplet::new(r.i, r.j, r.y).map(|_| ()).map_err(|e| e.to_string())
}

/// Batch posterior over everything in the log at `path`.
pub fn rebuild_posterior(path: impl AsRef<Path>, prior: &PriorSpec) -> Result<Posterior, StoreError> {
    let log = load_all(path)?;
    Ok(Posterior::from_dataset(&log.triplets(), prior)?)
}

/// Writer half of a triplet log file. There must be at most one per file.
#[derive(Debug)]
pub struct TripletLog {
    path: PathBuf,
    file: File,
    len: u64,
    next_seq: u64,
}

impl TripletLog {
    /// Opens (or creates) the log, dropping a torn trailing line so that
    /// new appends start on a clean line. Returns the records already
    /// present.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, LoadedLog), StoreError> {
        let path = path.into();
        let loaded = load_all(&path)?;
        let mut file = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&path)?;
        let mut len = file.metadata()?.len();
        if loaded.torn_tail {
            file.set_len(loaded.valid_len)?;
            len = loaded.valid_len;
        }
        if loaded.missing_newline {
            use std::io::Seek;
            file.seek(io::SeekFrom::Start(len))?;
            file.write_all(b"\n")?;
            len += 1;
        }
        file.sync_all()?;
        let log = Self { path, file, len, next_seq: loaded.records.len() as u64 + 1 };
        Ok((log, loaded))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 1
    }

    fn write_line(&mut self, line: &[u8]) -> io::Result<()> {
        use std::io::Seek;
        self.file.seek(io::SeekFrom::Start(self.len))?;
        self.file.write_all(line)?;
        self.file.flush()?;
        self.file.sync_data()
    }
}

impl TripletStore for TripletLog {
    fn append(&mut self, session_id: &str, triplet: &Triplet) -> Result<TripletRecord, StoreError> {
        let record = make_record(self.next_seq, session_id, triplet)?;
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        if let Err(e) = self.write_line(&line) {
            // Roll back any partial line so the file stays replayable.
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        self.next_seq += 1;
        Ok(record)
    }
}

/// Volatile store for simulations and tests.
#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    pub records: Vec<TripletRecord>,
}

impl TripletStore for MemoryLog {
    fn append(&mut self, session_id: &str, triplet: &Triplet) -> Result<TripletRecord, StoreError> {
        let record = make_record(self.records.len() as u64 + 1, session_id, triplet)?;
        self.records.push(record.clone());
        Ok(record)
    }
}

fn make_record(seq: u64, session_id: &str, t: &Triplet) -> Result<TripletRecord, StoreError> {
    if t.i >= t.j {
        return Err(StoreError::NonCanonical { i: t.i, j: t.j });
    }
    Triplet::new(t.i, t.j, t.y)?;
    Ok(TripletRecord {
        seq,
        session_id: session_id.to_owned(),
        ts: Utc::now(),
        i: t.i,
        j: t.j,
        y: t.y,
    })
}
