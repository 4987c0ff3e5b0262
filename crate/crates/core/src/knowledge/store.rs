//! On-disk record stream for the knowledge base.
//!
//! Layout: the magic bytes `WRKB`, then frames of `len:u32be` followed by
//! one canonically encoded record. The first frame is the [`KbHeader`].

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{self, HASH_FUNCTION};
use crate::model::{EntryId, KnowledgeEntry};

use super::{KbConfig, KbError};

pub const STORE_FORMAT: &str = "warroom-kb/1";
const MAGIC: &[u8; 4] = b"WRKB";

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct KbHeader {
    pub format: String,
    pub hash_function: String,
    pub capacity: usize,
    pub lambda: f64,
    pub tau_prom: f64,
}

impl KbHeader {
    pub fn new(config: KbConfig) -> Self {
        KbHeader {
            format: STORE_FORMAT.into(),
            hash_function: HASH_FUNCTION.into(),
            capacity: config.capacity,
            lambda: config.lambda,
            tau_prom: config.tau_prom,
        }
    }

    pub fn config(&self) -> KbConfig {
        KbConfig { capacity: self.capacity, lambda: self.lambda, tau_prom: self.tau_prom }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KbRecord {
    Entry { entry: KnowledgeEntry, round: u64, batch: u64 },
    Tombstone { id: EntryId, round: u64, batch: u64 },
    Refresh { id: EntryId, score: f64, last_read_at: u64, round: u64, batch: u64 },
    Round { clock: u64 },
}

fn io(e: std::io::Error) -> KbError {
    KbError::Io(e.to_string())
}

#[derive(Debug)]
pub struct KbFile {
    out: BufWriter<File>,
}

impl KbFile {
    pub fn create(path: &Path, header: &KbHeader) -> Result<Self, KbError> {
        let file = OpenOptions::new().write(true).create_new(true).open(path).map_err(io)?;
        let mut f = KbFile { out: BufWriter::new(file) };
        f.out.write_all(MAGIC).map_err(io)?;
        f.frame(header)?;
        Ok(f)
    }

    pub fn append(path: &Path) -> Result<Self, KbError> {
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(KbFile { out: BufWriter::new(file) })
    }

    fn frame<T: Serialize>(&mut self, value: &T) -> Result<(), KbError> {
        let bytes = canonical::to_bytes(value)?;
        let len = u32::try_from(bytes.len()).map_err(|_| KbError::Io("record exceeds 4 GiB".into()))?;
        self.out.write_all(&len.to_be_bytes()).map_err(io)?;
        self.out.write_all(&bytes).map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn write(&mut self, rec: &KbRecord) -> Result<(), KbError> {
        self.frame(rec)
    }
}

/// Reads header and records from a store file.
pub fn read_store(path: &Path) -> Result<(KbHeader, Vec<KbRecord>), KbError> {
    let mut raw = Vec::new();
    File::open(path).map_err(io)?.read_to_end(&mut raw).map_err(io)?;
    if raw.len() < 4 || &raw[..4] != MAGIC {
        return Err(KbError::Corrupt { index: 0, reason: "missing store magic".into() });
    }
    let mut pos = 4;
    let mut frames = Vec::new();
    while pos < raw.len() {
        let index = frames.len();
        let corrupt = |reason: String| KbError::Corrupt { index, reason };
        if raw.len() - pos < 4 {
            return Err(corrupt("truncated frame length".into()));
        }
        let len = u32::from_be_bytes(raw[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        let body = raw.get(pos..pos + len).ok_or_else(|| corrupt("truncated frame".into()))?;
        pos += len;
        frames.push(canonical::from_bytes(body).map_err(|e| corrupt(e.to_string()))?);
    }
    let mut frames = frames.into_iter();
    let header: KbHeader = frames
        .next()
        .ok_or_else(|| KbError::Corrupt { index: 0, reason: "missing header".into() })
        .and_then(|v| serde_json::from_value(v).map_err(|e| KbError::Corrupt { index: 0, reason: e.to_string() }))?;
    if header.format != STORE_FORMAT {
        return Err(KbError::Corrupt { index: 0, reason: format!("unsupported format {}", header.format) });
    }
    let records = frames
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| KbError::Corrupt { index: i + 1, reason: e.to_string() }))
        .collect::<Result<Vec<KbRecord>, _>>()?;
    Ok((header, records))
}
