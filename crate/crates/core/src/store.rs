//! Activation dumps and sample pools on disk.
//!
//! Two dump encodings are supported:
//!
//! * **JSONL**: a first line `{"manifest":{...}}` followed by one
//!   record object per line.
//! * **Packed**: magic `ACTSCDMP`, version byte `0x01`, then little-endian
//!   `u32 neuron_count`, `u32 record_count`, and per record: `u16` id length +
//!   UTF-8 id, `i8` difficulty (`-1` = absent), `u16` gold length + UTF-8
//!   (`0` = absent), `neuron_count` × `f32`.
//!
//! Activations are held as `f32` exactly as dumped; all downstream
//! arithmetic widens to `f64`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::AnswerSample;

pub const PACKED_MAGIC: &[u8; 8] = b"ACTSCDMP";
pub const PACKED_VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: packed record {index}: {message}")]
    Packed {
        path: PathBuf,
        index: usize,
        message: String,
    },
    #[error("record `{problem_id}`: expected {expected} activations, found {found}")]
    DimensionMismatch {
        problem_id: String,
        expected: usize,
        found: usize,
    },
    #[error("record `{problem_id}`: non-finite activation at index {index}")]
    NonFinite { problem_id: String, index: usize },
    #[error("record `{problem_id}`: difficulty {value} is outside 1..=5")]
    Difficulty { problem_id: String, value: i64 },
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
    #[error("problem `{0}` has an empty sample list")]
    EmptySamples(String),
    #[error("manifest declares {declared} records but the payload holds {actual}")]
    RecordCount { declared: usize, actual: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("string field too long for packed format in record `{0}`")]
    FieldTooLong(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Jsonl,
    Packed,
}

impl FromStr for DumpFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(DumpFormat::Jsonl),
            "packed" => Ok(DumpFormat::Packed),
            other => Err(format!("unknown dump format `{other}` (expected jsonl|packed)")),
        }
    }
}

impl DumpFormat {
    /// Guesses from the extension: `.bin`/`.dmp`/`.packed` are packed, the rest JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "dmp" | "packed") => DumpFormat::Packed,
            _ => DumpFormat::Jsonl,
        }
    }
}

/// One problem's final-input-token FFN activation vector and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub problem_id: String,
    #[serde(default)]
    pub difficulty: Option<u8>,
    #[serde(default)]
    pub gold_answer: Option<String>,
    pub activations: Vec<f32>,
}

impl ActivationRecord {
    pub fn new(problem_id: impl Into<String>, difficulty: Option<u8>, activations: Vec<f32>) -> Self {
        Self {
            problem_id: problem_id.into(),
            difficulty,
            gold_answer: None,
            activations,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_answer = Some(gold.into());
        self
    }

    pub fn validate(&self, neuron_count: usize) -> Result<()> {
        if self.activations.len() != neuron_count {
            return Err(StoreError::DimensionMismatch {
                problem_id: self.problem_id.clone(),
                expected: neuron_count,
                found: self.activations.len(),
            });
        }
        if let Some(index) = self.activations.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                problem_id: self.problem_id.clone(),
                index,
            });
        }
        if let Some(d) = self.difficulty {
            if !(1..=5).contains(&d) {
                return Err(StoreError::Difficulty {
                    problem_id: self.problem_id.clone(),
                    value: d as i64,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub neuron_count: usize,
    pub record_count: usize,
    #[serde(default)]
    pub source_model: String,
    #[serde(default)]
    pub layer_spec: String,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, neuron_count: usize, record_count: usize) -> Self {
        Self {
            name: name.into(),
            neuron_count,
            record_count,
            source_model: String::new(),
            layer_spec: String::new(),
        }
    }
}

/// A manifest together with its validated records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<ActivationRecord>,
}

impl Dataset {
    /// Builds a dataset, filling `record_count` from the records and validating them.
    pub fn new(mut manifest: DatasetManifest, records: Vec<ActivationRecord>) -> Result<Self> {
        manifest.record_count = records.len();
        validate_dataset(&manifest, &records)?;
        Ok(Self { manifest, records })
    }

    pub fn neuron_count(&self) -> usize {
        self.manifest.neuron_count
    }
}

/// Checks every dataset-level and record-level invariant.
pub fn validate_dataset(manifest: &DatasetManifest, records: &[ActivationRecord]) -> Result<()> {
    if manifest.neuron_count == 0 {
        return Err(StoreError::Manifest("neuron_count must be positive".into()));
    }
    if manifest.record_count != records.len() {
        return Err(StoreError::RecordCount {
            declared: manifest.record_count,
            actual: records.len(),
        });
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        r.validate(manifest.neuron_count)?;
        if !seen.insert(r.problem_id.as_str()) {
            return Err(StoreError::DuplicateId(r.problem_id.clone()));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ManifestLine {
    manifest: DatasetManifest,
}

#[derive(Serialize)]
struct ManifestLineRef<'a> {
    manifest: &'a DatasetManifest,
}

// Difficulty is parsed wide so that out-of-range labels produce a
// diagnostic naming the record instead of a bare serde error.
#[derive(Deserialize)]
struct RawRecord {
    problem_id: String,
    #[serde(default)]
    difficulty: Option<i64>,
    #[serde(default)]
    gold_answer: Option<String>,
    activations: Vec<f64>,
}

pub fn load_dataset(path: &Path, format: DumpFormat) -> Result<Dataset> {
    match format {
        DumpFormat::Jsonl => load_jsonl(path),
        DumpFormat::Packed => load_packed(path),
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: DumpFormat) -> Result<()> {
    validate_dataset(&dataset.manifest, &dataset.records)?;
    match format {
        DumpFormat::Jsonl => save_jsonl(dataset, path),
        DumpFormat::Packed => save_packed(dataset, path),
    }
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let parse = |line: usize, message: String| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut manifest: Option<DatasetManifest> = None;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if manifest.is_none() {
            let m: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| parse(lineno, format!("expected manifest line: {e}")))?;
            if m.manifest.neuron_count == 0 {
                return Err(StoreError::Manifest("neuron_count must be positive".into()));
            }
            manifest = Some(m.manifest);
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse(lineno, e.to_string()))?;
        let difficulty = match raw.difficulty {
            None => None,
            Some(d) if (1..=5).contains(&d) => Some(d as u8),
            Some(value) => {
                return Err(StoreError::Difficulty {
                    problem_id: raw.problem_id,
                    value,
                })
            }
        };
        let record = ActivationRecord {
            activations: raw.activations.iter().map(|&v| v as f32).collect(),
            problem_id: raw.problem_id,
            difficulty,
            gold_answer: raw.gold_answer,
        };
        if let Some(index) = raw.activations.iter().position(|v| !(*v as f32).is_finite()) {
            return Err(StoreError::NonFinite {
                problem_id: record.problem_id,
                index,
            });
        }
        let m = manifest.as_ref().expect("manifest parsed above");
        record.validate(m.neuron_count)?;
        records.push(record);
    }
    let manifest = manifest.ok_or_else(|| parse(1, "missing manifest line".into()))?;
    validate_dataset(&manifest, &records)?;
    Ok(Dataset { manifest, records })
}

fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_json_line(&mut w, &ManifestLineRef { manifest: &dataset.manifest }, path)?;
    for r in &dataset.records {
        write_json_line(&mut w, r, path)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| io_err(path)(e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))
}

fn load_packed(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let mut cur = Cursor::new(&bytes, path);

    let magic = cur.take(8, 0)?;
    if magic != PACKED_MAGIC {
        return Err(StoreError::Manifest("bad magic bytes, expected ACTSCDMP".into()));
    }
    let version = cur.take(1, 0)?[0];
    if version != PACKED_VERSION {
        return Err(StoreError::Manifest(format!("unsupported packed version {version}")));
    }
    let neuron_count = cur.u32(0)? as usize;
    let record_count = cur.u32(0)? as usize;
    if neuron_count == 0 {
        return Err(StoreError::Manifest("neuron_count must be positive".into()));
    }

    let mut records = Vec::with_capacity(record_count.min(1 << 20));
    for index in 0..record_count {
        let id_len = cur.u16(index)? as usize;
        let problem_id = cur.utf8(id_len, index)?;
        let difficulty = match cur.take(1, index)?[0] as i8 {
            -1 => None,
            d @ 1..=5 => Some(d as u8),
            value => {
                return Err(StoreError::Difficulty {
                    problem_id,
                    value: value as i64,
                })
            }
        };
        let gold_len = cur.u16(index)? as usize;
        let gold_answer = if gold_len == 0 {
            None
        } else {
            Some(cur.utf8(gold_len, index)?)
        };
        let raw = cur.take(neuron_count * 4, index)?;
        let activations = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let record = ActivationRecord {
            problem_id,
            difficulty,
            gold_answer,
            activations,
        };
        record.validate(neuron_count)?;
        records.push(record);
    }
    if cur.remaining() != 0 {
        return Err(StoreError::Packed {
            path: path.to_path_buf(),
            index: record_count,
            message: format!("{} trailing bytes after last record", cur.remaining()),
        });
    }

    // The packed header carries only the two counts.
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let manifest = DatasetManifest::new(name, neuron_count, record_count);
    validate_dataset(&manifest, &records)?;
    Ok(Dataset { manifest, records })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, index: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(StoreError::Packed {
                path: self.path.to_path_buf(),
                index,
                message: format!("truncated: wanted {n} bytes, {} left", self.remaining()),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, index: usize) -> Result<u16> {
        let b = self.take(2, index)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, index: usize) -> Result<u32> {
        let b = self.take(4, index)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize, index: usize) -> Result<String> {
        let path = self.path;
        let b = self.take(n, index)?;
        String::from_utf8(b.to_vec()).map_err(|e| StoreError::Packed {
            path: path.to_path_buf(),
            index,
            message: format!("invalid UTF-8: {e}"),
        })
    }
}

fn save_packed(dataset: &Dataset, path: &Path) -> Result<()> {
    let m = &dataset.manifest;
    let too_long = |id: &str| StoreError::FieldTooLong(id.to_string());
    let mut buf = Vec::with_capacity(17 + dataset.records.len() * (m.neuron_count * 4 + 16));
    buf.extend_from_slice(PACKED_MAGIC);
    buf.push(PACKED_VERSION);
    let nc = u32::try_from(m.neuron_count).map_err(|_| StoreError::Manifest("neuron_count exceeds u32".into()))?;
    let rc = u32::try_from(dataset.records.len()).map_err(|_| StoreError::Manifest("record_count exceeds u32".into()))?;
    buf.extend_from_slice(&nc.to_le_bytes());
    buf.extend_from_slice(&rc.to_le_bytes());
    for r in &dataset.records {
        let id_len = u16::try_from(r.problem_id.len()).map_err(|_| too_long(&r.problem_id))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(r.problem_id.as_bytes());
        buf.push(r.difficulty.map(|d| d as i8).unwrap_or(-1) as u8);
        let gold = r.gold_answer.as_deref().unwrap_or("");
        let gold_len = u16::try_from(gold.len()).map_err(|_| too_long(&r.problem_id))?;
        buf.extend_from_slice(&gold_len.to_le_bytes());
        buf.extend_from_slice(gold.as_bytes());
        for v in &r.activations {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Pre-generated samples for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub problem_id: String,
    pub gold_answer: String,
    pub samples: Vec<AnswerSample>,
}

/// Replay backing store, keyed by problem id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplePool {
    pub entries: BTreeMap<String, PoolEntry>,
}

impl SamplePool {
    pub fn from_entries(entries: impl IntoIterator<Item = PoolEntry>) -> Result<Self> {
        let mut pool = SamplePool::default();
        for e in entries {
            pool.insert(e)?;
        }
        Ok(pool)
    }

    pub fn insert(&mut self, entry: PoolEntry) -> Result<()> {
        if entry.samples.is_empty() {
            return Err(StoreError::EmptySamples(entry.problem_id));
        }
        if self.entries.contains_key(&entry.problem_id) {
            return Err(StoreError::DuplicateId(entry.problem_id));
        }
        self.entries.insert(entry.problem_id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, problem_id: &str) -> Option<&PoolEntry> {
        self.entries.get(problem_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a JSONL pool: one `{"problem_id","gold_answer","samples":[...]}` per line.
pub fn load_sample_pool(path: &Path) -> Result<SamplePool> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut pool = SamplePool::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PoolEntry = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pool.insert(entry)?;
    }
    Ok(pool)
}

pub fn save_sample_pool(pool: &SamplePool, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for entry in pool.entries.values() {
        write_json_line(&mut w, entry, path)?;
    }
    w.flush().map_err(io_err(path))
}
