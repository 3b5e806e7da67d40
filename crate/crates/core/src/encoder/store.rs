use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Encoder;
use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::prompts::RenderedPrompt;

pub const STORE_FORMAT: &str = "lgp-embed";
pub const STORE_VERSION: u32 = 1;

/// First line of an embedding export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub m: usize,
    pub encoder: String,
}

impl StoreHeader {
    pub fn new(d: usize, m: usize, encoder: impl Into<String>) -> Self {
        StoreHeader {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            d,
            m,
            encoder: encoder.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    h: Vec<Vec<f32>>,
}

/// Precomputed mask-slot hidden states keyed by prompt key.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    header: StoreHeader,
    records: HashMap<String, Mat>,
}

impl EmbeddingStore {
    pub fn new(header: StoreHeader) -> Self {
        EmbeddingStore {
            header,
            records: HashMap::new(),
        }
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.records.contains_key(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, h: Mat) -> Result<()> {
        if h.shape() != (self.header.m, self.header.d) {
            return Err(Error::Format(format!(
                "record must be {}x{}, got {}x{}",
                self.header.m,
                self.header.d,
                h.rows(),
                h.cols()
            )));
        }
        self.records.insert(key.into(), h);
        Ok(())
    }

    pub fn lookup(&self, key: &str) -> Result<&Mat> {
        self.records.get(key).ok_or_else(|| Error::LookupMiss {
            key: key.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let header: StoreHeader = loop {
            match lines.next() {
                None => return Err(Error::Format(format!("{}: missing header", path.display()))),
                Some((_, Err(e))) => return Err(Error::io(path, e)),
                Some((_, Ok(line))) if line.trim().is_empty() => continue,
                Some((n, Ok(line))) => {
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        path: path.into(),
                        line: n + 1,
                        message: format!("bad header: {e}"),
                    })?
                }
            }
        };
        if header.format != STORE_FORMAT || header.version != STORE_VERSION {
            return Err(Error::Format(format!(
                "expected {STORE_FORMAT} v{STORE_VERSION}, found {} v{}",
                header.format, header.version
            )));
        }
        if header.d == 0 || header.m == 0 {
            return Err(Error::Format("header d and m must be positive".into()));
        }

        let mut store = EmbeddingStore::new(header);
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: n + 1,
                message: e.to_string(),
            })?;
            let (m, d) = (store.header.m, store.header.d);
            if record.h.len() != m || record.h.iter().any(|row| row.len() != d) {
                return Err(Error::Format(format!(
                    "{}:{}: record {} is not {m}x{d}",
                    path.display(),
                    n + 1,
                    record.key
                )));
            }
            let values: Vec<f64> = record.h.iter().flatten().map(|&v| f64::from(v)).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "{}:{}: non-finite value in record {}",
                    path.display(),
                    n + 1,
                    record.key
                )));
            }
            store.records.insert(record.key, Mat::from_vec(m, d, values)?);
        }
        Ok(store)
    }

    /// Writes the store with records sorted by key.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n").map_err(io)?;
        let mut keys: Vec<&String> = self.records.keys().collect();
        keys.sort();
        for key in keys {
            let h = &self.records[key];
            let record = Record {
                key: key.clone(),
                h: h.iter_rows()
                    .map(|row| row.iter().map(|&v| v as f32).collect())
                    .collect(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

impl Encoder for EmbeddingStore {
    fn dim(&self) -> usize {
        self.header.d
    }

    fn mask_count(&self) -> usize {
        self.header.m
    }

    fn encode(&self, prompt: &RenderedPrompt) -> Result<Mat> {
        if prompt.mask_count() != self.header.m {
            return Err(Error::Shape(format!(
                "prompt has {} mask slots, store holds m={}",
                prompt.mask_count(),
                self.header.m
            )));
        }
        self.lookup(&prompt.key).cloned()
    }
}
