//! The in-house tool: a persistent, deduplicated store of every raw
//! tool-interaction record, chunked and embedding-indexed, with
//! brute-force cosine retrieval. Ingestion has set semantics keyed by the
//! content-derived record id, so accumulation is idempotent and the final
//! store is independent of ingest order.
//!
//! Layout on disk: an append-only record log (`records.jsonl`, one JSON
//! object per line) plus a compacted index file (`index.json`) with a
//! versioned header. The index is regenerable from the log, so a stale or
//! missing index only costs a re-embed.
//!
//! Chunk scoring is the hot loop at retrieval time; with the `parallel`
//! feature it runs on rayon and falls back to the identical sequential
//! computation without it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::{EmbeddingHandle, EmbeddingVector};
use crate::types::{record_id, RawKnowledgeRecord};

pub const RECORD_LOG_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "index.json";
const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("top_k must be >= 1")]
    InvalidTopK,
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("embedding failure: {0}")]
    Embedding(String),
    #[error("persistence error: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingParams {
    /// Whitespace tokens per chunk.
    pub chunk_size: usize,
    /// Tokens shared between consecutive chunks.
    pub overlap: usize,
}

impl Default for ChunkingParams {
    fn default() -> Self {
        ChunkingParams {
            chunk_size: 512,
            overlap: 64,
        }
    }
}

impl ChunkingParams {
    pub fn stride(&self) -> usize {
        debug_assert!(self.overlap < self.chunk_size);
        self.chunk_size - self.overlap
    }

    /// Chunks a record body into overlapping token windows. Windows start
    /// every `stride` tokens, so a text of `n` tokens yields
    /// ceil(n / stride) chunks.
    pub fn chunk_text(&self, content: &str) -> Vec<String> {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            return Vec::new();
        }
        let stride = self.stride();
        let mut chunks = Vec::new();
        let mut offset = 0;
        while offset < tokens.len() {
            let end = (offset + self.chunk_size).min(tokens.len());
            chunks.push(tokens[offset..end].join(" "));
            offset += stride;
        }
        chunks
    }

    /// Expected chunk count for a body, the oracle form of `chunk_text`.
    pub fn expected_chunks(&self, content: &str) -> usize {
        let n = content.split_whitespace().count();
        n.div_ceil(self.stride())
    }
}

/// One indexed window of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub record_id: String,
    /// Position of this window within its record.
    pub seq: u32,
    pub text: String,
    pub vector: EmbeddingVector,
}

fn chunk_id(record_id: &str, seq: u32, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"chunk/v1\x00");
    hasher.update(record_id.as_bytes());
    hasher.update(seq.to_le_bytes());
    hasher.update(b"\x00");
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Scores every chunk against the query vector, sequentially.
pub fn rank_chunks_seq(query: &EmbeddingVector, chunks: &[&Chunk]) -> Vec<f32> {
    chunks.iter().map(|c| query.cosine(&c.vector)).collect()
}

/// Parallel twin of [`rank_chunks_seq`]; per-chunk scores are computed
/// independently so the results are bit-identical.
#[cfg(feature = "parallel")]
pub fn rank_chunks_par(query: &EmbeddingVector, chunks: &[&Chunk]) -> Vec<f32> {
    use rayon::prelude::*;
    chunks.par_iter().map(|c| query.cosine(&c.vector)).collect()
}

fn rank_chunks(query: &EmbeddingVector, chunks: &[&Chunk]) -> Vec<f32> {
    #[cfg(feature = "parallel")]
    {
        rank_chunks_par(query, chunks)
    }
    #[cfg(not(feature = "parallel"))]
    {
        rank_chunks_seq(query, chunks)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbStats {
    pub records: usize,
    pub chunks: usize,
    pub pending_index: usize,
    pub by_source: BTreeMap<String, usize>,
}

/// Canonical content fingerprint for store-equality checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KbSnapshot {
    pub record_ids: Vec<String>,
    pub chunk_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    embedder: String,
    dim: usize,
    chunking: ChunkingParams,
    chunks: Vec<Chunk>,
}

pub struct KnowledgeBase {
    records: BTreeMap<String, RawKnowledgeRecord>,
    chunks: BTreeMap<String, Chunk>,
    pending: BTreeSet<String>,
    embedder: EmbeddingHandle,
    /// Identifier of the embedding scheme, written into index headers.
    embedder_id: String,
    params: ChunkingParams,
    log_path: Option<PathBuf>,
}

impl KnowledgeBase {
    pub fn new(embedder: EmbeddingHandle, embedder_id: impl Into<String>) -> Self {
        KnowledgeBase {
            records: BTreeMap::new(),
            chunks: BTreeMap::new(),
            pending: BTreeSet::new(),
            embedder,
            embedder_id: embedder_id.into(),
            params: ChunkingParams::default(),
            log_path: None,
        }
    }

    pub fn with_params(mut self, params: ChunkingParams) -> Self {
        self.params = params;
        self
    }

    /// Future ingests also append to this log file.
    pub fn attach_log(&mut self, path: PathBuf) {
        self.log_path = Some(path);
    }

    pub fn params(&self) -> ChunkingParams {
        self.params
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.records.contains_key(record_id)
    }

    pub fn record(&self, record_id: &str) -> Option<&RawKnowledgeRecord> {
        self.records.get(record_id)
    }

    pub fn record_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn stats(&self) -> KbStats {
        let mut by_source = BTreeMap::new();
        for record in self.records.values() {
            *by_source
                .entry(record.source.kind().to_string())
                .or_insert(0) += 1;
        }
        KbStats {
            records: self.records.len(),
            chunks: self.chunks.len(),
            pending_index: self.pending.len(),
            by_source,
        }
    }

    pub fn snapshot(&self) -> KbSnapshot {
        KbSnapshot {
            record_ids: self.records.keys().cloned().collect(),
            chunk_ids: self.chunks.keys().cloned().collect(),
        }
    }

    fn check_well_formed(record: &RawKnowledgeRecord) -> Result<(), KbError> {
        let expected = record_id(&record.source, &record.content);
        if record.record_id != expected {
            return Err(KbError::Malformed(format!(
                "record id {} does not match its content hash",
                record.record_id
            )));
        }
        Ok(())
    }

    fn build_chunks(&self, record: &RawKnowledgeRecord) -> Result<Vec<Chunk>, KbError> {
        let texts = self.params.chunk_text(&record.content);
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self
            .embedder
            .embed(&texts)
            .map_err(|e| KbError::Embedding(e.to_string()))?;
        Ok(texts
            .into_iter()
            .zip(vectors)
            .enumerate()
            .map(|(i, (text, vector))| Chunk {
                chunk_id: chunk_id(&record.record_id, i as u32, &text),
                record_id: record.record_id.clone(),
                seq: i as u32,
                text,
                vector,
            })
            .collect())
    }

    fn append_to_log(&self, records: &[&RawKnowledgeRecord]) -> Result<(), KbError> {
        let Some(path) = &self.log_path else {
            return Ok(());
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| KbError::Persist(format!("open {}: {e}", path.display())))?;
        for record in records {
            let line =
                serde_json::to_string(record).map_err(|e| KbError::Persist(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| KbError::Persist(e.to_string()))?;
        }
        Ok(())
    }

    /// Union-ingests records by id. New records are chunked and embedded;
    /// an embedding failure stores the record unindexed and queues it for
    /// re-indexing. Returns (new, duplicate) counts.
    pub fn ingest(&mut self, records: &[RawKnowledgeRecord]) -> Result<(usize, usize), KbError> {
        let mut fresh: Vec<&RawKnowledgeRecord> = Vec::new();
        let mut fresh_ids = BTreeSet::new();
        let mut dup = 0usize;
        for record in records {
            Self::check_well_formed(record)?;
            if self.records.contains_key(&record.record_id)
                || !fresh_ids.insert(record.record_id.clone())
            {
                dup += 1;
            } else {
                fresh.push(record);
            }
        }

        // Chunk + embed off the hot path; insertion below stays ordered.
        #[cfg(feature = "parallel")]
        let prepared: Vec<(usize, Result<Vec<Chunk>, KbError>)> = {
            use rayon::prelude::*;
            fresh
                .par_iter()
                .enumerate()
                .map(|(i, record)| (i, self.build_chunks(record)))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let prepared: Vec<(usize, Result<Vec<Chunk>, KbError>)> = fresh
            .iter()
            .enumerate()
            .map(|(i, record)| (i, self.build_chunks(record)))
            .collect();

        let mut chunk_sets: BTreeMap<usize, Result<Vec<Chunk>, KbError>> =
            prepared.into_iter().collect();
        self.append_to_log(&fresh)?;
        let new = fresh.len();
        for (i, record) in fresh.into_iter().enumerate() {
            match chunk_sets.remove(&i).expect("prepared for every record") {
                Ok(chunks) => {
                    for chunk in chunks {
                        self.chunks.insert(chunk.chunk_id.clone(), chunk);
                    }
                }
                Err(_) => {
                    self.pending.insert(record.record_id.clone());
                }
            }
            self.records
                .insert(record.record_id.clone(), record.clone());
        }
        Ok((new, dup))
    }

    /// Retries embedding for records whose indexing previously failed.
    pub fn reindex_pending(&mut self) -> Result<usize, KbError> {
        let pending: Vec<String> = self.pending.iter().cloned().collect();
        let mut indexed = 0;
        for id in pending {
            let Some(record) = self.records.get(&id).cloned() else {
                self.pending.remove(&id);
                continue;
            };
            if let Ok(chunks) = self.build_chunks(&record) {
                for chunk in chunks {
                    self.chunks.insert(chunk.chunk_id.clone(), chunk);
                }
                self.pending.remove(&id);
                indexed += 1;
            }
        }
        Ok(indexed)
    }

    /// Cosine-ranked top_k chunks for the query; ties break by chunk id.
    /// Unindexed (pending) records are skipped; an empty store yields an
    /// empty list.
    pub fn retrieve(&self, query: &str, top_k: usize) -> Result<Vec<(Chunk, f32)>, KbError> {
        if top_k == 0 {
            return Err(KbError::InvalidTopK);
        }
        if self.chunks.is_empty() {
            return Ok(Vec::new());
        }
        let query_vec = self
            .embedder
            .embed(&[query.to_string()])
            .map_err(|e| KbError::Embedding(e.to_string()))?
            .into_iter()
            .next()
            .expect("one vector per text");
        let chunk_refs: Vec<&Chunk> = self.chunks.values().collect();
        let scores = rank_chunks(&query_vec, &chunk_refs);
        let mut ranked: Vec<(usize, f32)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| chunk_refs[a.0].chunk_id.cmp(&chunk_refs[b.0].chunk_id))
        });
        Ok(ranked
            .into_iter()
            .take(top_k)
            .map(|(i, score)| (chunk_refs[i].clone(), score))
            .collect())
    }

    /// Writes the compacted record log and the versioned index file.
    pub fn save(&self, dir: &Path) -> Result<(), KbError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| KbError::Persist(format!("create {}: {e}", dir.display())))?;
        let log_path = dir.join(RECORD_LOG_FILE);
        let mut log = String::new();
        for record in self.records.values() {
            log.push_str(
                &serde_json::to_string(record).map_err(|e| KbError::Persist(e.to_string()))?,
            );
            log.push('\n');
        }
        std::fs::write(&log_path, log).map_err(|e| KbError::Persist(e.to_string()))?;

        let index = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            embedder: self.embedder_id.clone(),
            dim: self.embedder.dim(),
            chunking: self.params,
            chunks: self.chunks.values().cloned().collect(),
        };
        let body = serde_json::to_string(&index).map_err(|e| KbError::Persist(e.to_string()))?;
        std::fs::write(dir.join(INDEX_FILE), body).map_err(|e| KbError::Persist(e.to_string()))?;
        Ok(())
    }

    /// Loads a store from `dir`. A missing, stale, or incompatible index
    /// is rebuilt from the record log by re-embedding.
    pub fn load(
        dir: &Path,
        embedder: EmbeddingHandle,
        embedder_id: impl Into<String>,
        params: ChunkingParams,
    ) -> Result<Self, KbError> {
        let mut kb = KnowledgeBase::new(embedder, embedder_id).with_params(params);
        let log_path = dir.join(RECORD_LOG_FILE);
        let file = std::fs::File::open(&log_path)
            .map_err(|e| KbError::Persist(format!("open {}: {e}", log_path.display())))?;
        let mut records = Vec::new();
        for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| KbError::Persist(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: RawKnowledgeRecord = serde_json::from_str(&line).map_err(|e| {
                KbError::Persist(format!("{} line {}: {e}", log_path.display(), line_no + 1))
            })?;
            records.push(record);
        }

        let index_path = dir.join(INDEX_FILE);
        let reusable_index = std::fs::read_to_string(&index_path)
            .ok()
            .and_then(|raw| serde_json::from_str::<IndexFile>(&raw).ok())
            .filter(|index| {
                index.format_version == INDEX_FORMAT_VERSION
                    && index.embedder == kb.embedder_id
                    && index.dim == kb.embedder.dim()
                    && index.chunking == kb.params
            });

        match reusable_index {
            Some(index) => {
                for record in records {
                    Self::check_well_formed(&record)?;
                    kb.records.insert(record.record_id.clone(), record);
                }
                for chunk in index.chunks {
                    kb.chunks.insert(chunk.chunk_id.clone(), chunk);
                }
            }
            None => {
                kb.ingest(&records)?;
            }
        }
        Ok(kb)
    }
}

/// Shared handle: ingestion serializes on the write lock, retrieval reads
/// a consistent snapshot concurrently.
pub type KbHandle = Arc<RwLock<KnowledgeBase>>;

pub fn kb_handle(kb: KnowledgeBase) -> KbHandle {
    Arc::new(RwLock::new(kb))
}

/// Outcome of the warm-up stage: per-pass fetch sets plus ingest totals.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub passes: u32,
    pub simulations: usize,
    pub failures: usize,
    pub new_records: usize,
    pub dup_records: usize,
    pub per_pass_record_ids: Vec<BTreeSet<String>>,
    pub notes: Vec<String>,
}
