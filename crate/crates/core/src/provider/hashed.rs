//! Deterministic embedding fallback: hashed term-frequency vectors.
//! Tokens are lowercased alphanumeric runs, each hashed into one of 256
//! buckets with FNV-1a, counted, and L2-normalized. Pure and platform
//! independent, which makes retrieval tests exact and offline.

use super::{validate_embed_input, EmbeddingProvider, EmbeddingVector, ProviderError};

pub const HASHED_TF_DIM: usize = 256;

/// Identifier written into index-file headers so a store built with a
/// different embedder is rebuilt instead of silently mixed.
pub const HASHED_TF_ID: &str = "hashed-tf/fnv1a-256/v1";

#[derive(Debug, Default, Clone, Copy)]
pub struct HashedTfEmbedding;

impl HashedTfEmbedding {
    pub fn new() -> Self {
        HashedTfEmbedding
    }

    fn embed_one(text: &str) -> EmbeddingVector {
        let mut buckets = vec![0.0f32; HASHED_TF_DIM];
        for term in tokenize(text) {
            let bucket = (fnv1a(term.as_bytes()) as usize) % HASHED_TF_DIM;
            buckets[bucket] += 1.0;
        }
        let norm: f32 = buckets.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut buckets {
                *v /= norm;
            }
        }
        EmbeddingVector::new(buckets)
    }
}

impl EmbeddingProvider for HashedTfEmbedding {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embed_input(texts)?;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            Ok(texts.par_iter().map(|t| Self::embed_one(t)).collect())
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
        }
    }

    fn dim(&self) -> usize {
        HASHED_TF_DIM
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// 64-bit FNV-1a; hand-rolled because std's hasher is not stable across
/// releases and the index format depends on these bucket assignments.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in bytes {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
