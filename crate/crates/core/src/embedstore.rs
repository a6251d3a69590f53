//! TPRB token-embedding stores and instance-vector aggregation.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TPRB" | u32 version = 1 | u32 dim | u64 sentence_count
//! per sentence: u32 id_len | id (UTF-8) | u32 token_count | token_count * dim f32
//! u32 CRC32 (IEEE) of every byte between the header and this trailer
//! ```
//!
//! An optional sidecar `<store>.meta.json` carries free-form encoder
//! metadata (encoder id, layer); the engine never interprets it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};

use memmap2::Mmap;

use crate::corpus::{Corpus, TaskDataset, TaskKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TPRB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

enum Backing {
    Mapped(Mmap),
    Owned(Vec<u8>),
}

impl Deref for Backing {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        match self {
            Backing::Mapped(m) => m,
            Backing::Owned(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    offset: usize,
    tokens: usize,
}

/// Read-only per-sentence token matrices.
pub struct EmbeddingStore {
    dim: usize,
    bytes: Backing,
    ids: Vec<String>,
    index: HashMap<String, Entry>,
    metadata: Option<serde_json::Value>,
}

/// Cloning copies the bytes into memory, also for mapped stores.
impl Clone for EmbeddingStore {
    fn clone(&self) -> Self {
        EmbeddingStore {
            dim: self.dim,
            bytes: Backing::Owned(self.as_bytes().to_vec()),
            ids: self.ids.clone(),
            index: self.index.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

impl std::fmt::Debug for EmbeddingStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingStore")
            .field("dim", &self.dim)
            .field("sentences", &self.ids.len())
            .finish()
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::Format("truncated payload".into()))
}

impl EmbeddingStore {
    /// Memory-maps a TPRB file and validates header, layout and checksum.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        // SAFETY: the mapping is read-only and the file is not modified
        // while the store is alive.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        let mut store = Self::parse(Backing::Mapped(map))?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            store.metadata = Some(serde_json::from_str(&text)?);
        }
        Ok(store)
    }

    /// Parses a store from an in-memory TPRB image.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::parse(Backing::Owned(bytes))
    }

    fn parse(bytes: Backing) -> Result<Self> {
        let b: &[u8] = &bytes;
        if b.len() < HEADER_LEN + 4 {
            return Err(Error::Format("truncated header".into()));
        }
        if &b[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a TPRB store".into()));
        }
        let version = read_u32(b, 4)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported TPRB version {version}")));
        }
        let dim = read_u32(b, 8)? as usize;
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        let count = u64::from_le_bytes(b[12..20].try_into().unwrap()) as usize;
        let body_end = b.len() - 4;
        let stored_crc = read_u32(b, body_end)?;
        if crc32fast::hash(&b[HEADER_LEN..body_end]) != stored_crc {
            return Err(Error::Format("payload checksum mismatch".into()));
        }

        let mut ids = Vec::with_capacity(count);
        let mut index = HashMap::with_capacity(count);
        let mut at = HEADER_LEN;
        for _ in 0..count {
            let id_len = read_u32(b, at)? as usize;
            at += 4;
            let id = b
                .get(at..at + id_len)
                .ok_or_else(|| Error::Format("truncated payload".into()))?;
            let id = std::str::from_utf8(id)
                .map_err(|_| Error::Format("sentence id is not UTF-8".into()))?
                .to_string();
            at += id_len;
            let tokens = read_u32(b, at)? as usize;
            at += 4;
            let len = tokens * dim * 4;
            if at + len > body_end {
                return Err(Error::Format("truncated payload".into()));
            }
            if b[at..at + len]
                .chunks_exact(4)
                .any(|c| !f32::from_le_bytes(c.try_into().unwrap()).is_finite())
            {
                return Err(Error::Format(format!("non-finite value in sentence {id}")));
            }
            if index.insert(id.clone(), Entry { offset: at, tokens }).is_some() {
                return Err(Error::Duplicate(id));
            }
            ids.push(id);
            at += len;
        }
        if at != body_end {
            return Err(Error::Format("trailing bytes after last sentence".into()));
        }
        Ok(EmbeddingStore {
            dim,
            bytes,
            ids,
            index,
            metadata: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sentence ids in file order.
    pub fn sentence_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn token_count(&self, sentence_id: &str) -> Option<usize> {
        self.index.get(sentence_id).map(|e| e.tokens)
    }

    fn entry(&self, sentence_id: &str) -> Result<Entry> {
        self.index.get(sentence_id).copied().ok_or_else(|| Error::Unknown {
            kind: "sentence",
            id: sentence_id.to_string(),
        })
    }

    /// Decodes one token vector.
    pub fn token(&self, sentence_id: &str, token: usize) -> Result<Vec<f32>> {
        let e = self.entry(sentence_id)?;
        if token >= e.tokens {
            return Err(Error::InvalidInstance {
                id: sentence_id.to_string(),
                msg: format!("token {token} out of range ({} tokens)", e.tokens),
            });
        }
        let start = e.offset + token * self.dim * 4;
        Ok(decode(&self.bytes[start..start + self.dim * 4]))
    }

    /// Row-major `token_count x dim` matrix of one sentence.
    pub fn matrix(&self, sentence_id: &str) -> Result<Vec<f32>> {
        let e = self.entry(sentence_id)?;
        Ok(decode(&self.bytes[e.offset..e.offset + e.tokens * self.dim * 4]))
    }

    /// Checks that every corpus sentence has a matrix of matching height.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        for s in corpus.sentences() {
            let e = self.entry(&s.sentence_id)?;
            if e.tokens != s.tokens.len() {
                return Err(Error::Format(format!(
                    "sentence {} has {} tokens but {} embedding rows",
                    s.sentence_id,
                    s.tokens.len(),
                    e.tokens
                )));
            }
        }
        Ok(())
    }

    /// New in-memory store with `f` applied to every token vector.
    pub fn map_tokens<F>(&self, mut f: F) -> Result<EmbeddingStore>
    where
        F: FnMut(&[f32]) -> Vec<f32>,
    {
        let mut writer = StoreWriter::new(self.dim);
        for id in &self.ids {
            let m = self.matrix(id)?;
            let mut out = Vec::with_capacity(m.len());
            for row in m.chunks_exact(self.dim) {
                let mapped = f(row);
                if mapped.len() != self.dim {
                    return Err(Error::Dimension {
                        expected: self.dim,
                        got: mapped.len(),
                    });
                }
                out.extend(mapped);
            }
            writer.push(id, &out)?;
        }
        EmbeddingStore::from_bytes(writer.finish())
    }

    /// Raw TPRB image of this store.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn decode(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Incremental TPRB encoder.
#[derive(Debug)]
pub struct StoreWriter {
    dim: usize,
    count: u64,
    body: Vec<u8>,
}

impl StoreWriter {
    pub fn new(dim: usize) -> Self {
        StoreWriter {
            dim,
            count: 0,
            body: Vec::new(),
        }
    }

    /// Appends a sentence given its row-major `tokens x dim` matrix.
    pub fn push(&mut self, sentence_id: &str, matrix: &[f32]) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        if !matrix.len().is_multiple_of(self.dim) || matrix.is_empty() {
            return Err(Error::Format(format!(
                "sentence {sentence_id}: matrix length {} is not a positive multiple of dim {}",
                matrix.len(),
                self.dim
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value in sentence {sentence_id}")));
        }
        self.body
            .extend_from_slice(&(sentence_id.len() as u32).to_le_bytes());
        self.body.extend_from_slice(sentence_id.as_bytes());
        self.body
            .extend_from_slice(&((matrix.len() / self.dim) as u32).to_le_bytes());
        for v in matrix {
            self.body.extend_from_slice(&v.to_le_bytes());
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&crc32fast::hash(&self.body).to_le_bytes());
        out
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.finish()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceVector {
    pub instance_id: String,
    pub values: Vec<f32>,
}

/// Length of an instance vector for `task` over a `dim`-wide store.
pub fn instance_dim(task: TaskKind, dim: usize) -> usize {
    match task {
        TaskKind::Dep => 2 * dim,
        _ => dim,
    }
}

fn mean_of(store: &EmbeddingStore, sentence_id: &str, positions: &[usize], out: &mut Vec<f32>) -> Result<()> {
    let mut acc = vec![0f64; store.dim()];
    for &p in positions {
        for (a, v) in acc.iter_mut().zip(store.token(sentence_id, p)?) {
            *a += v as f64;
        }
    }
    let n = positions.len() as f64;
    out.extend(acc.into_iter().map(|a| (a / n) as f32));
    Ok(())
}

/// Aggregates the relevant token vectors of instance `idx`.
///
/// Single positions are copied, spans are averaged (accumulated in f64),
/// DEP concatenates the two slot vectors in stored order.
pub fn instance_vector(store: &EmbeddingStore, dataset: &TaskDataset, idx: usize) -> Result<InstanceVector> {
    let inst = &dataset.instances[idx];
    let mut values = Vec::with_capacity(instance_dim(inst.task, store.dim()));
    for slot in &inst.positions {
        mean_of(store, &inst.sentence_id, slot, &mut values)?;
    }
    Ok(InstanceVector {
        instance_id: inst.instance_id.clone(),
        values,
    })
}

/// Instance vectors of a whole dataset, one row per instance.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureTable {
    pub fn build(store: &EmbeddingStore, dataset: &TaskDataset) -> Result<Self> {
        let dim = instance_dim(dataset.task, store.dim());
        let mut values = Vec::with_capacity(dim * dataset.len());
        for i in 0..dataset.len() {
            values.extend(instance_vector(store, dataset, i)?.values);
        }
        Ok(FeatureTable { dim, values })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.dim
    }
}
