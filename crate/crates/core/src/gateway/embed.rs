//! Embedding backends.

use crate::error::{Error, Result};
use crate::metrics::tokenize;
use crate::model::stable_hash64;

pub trait Embedder: Send + Sync {
    /// One vector per input text. Implementations should return unit-norm
    /// vectors; the gateway verifies norms and dimensions either way.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    fn dimension(&self) -> usize;
}

/// Default embedder dimension.
pub const HASH_EMBED_DIM: usize = 256;

/// Deterministic test embedder: a token-hash bag of words.
///
/// Construction: tokenize with the corpus tokenizer, bucket each token at
/// `stable_hash64(["embed", token]) mod dim` with weight 1 per occurrence,
/// then L2-normalize. A text with no tokens maps to the first basis vector.
/// Identical inputs always produce identical vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(HASH_EMBED_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Validation("embed called with no texts".into()));
        }
        Ok(texts
            .iter()
            .map(|text| {
                let mut v = vec![0.0f64; self.dim];
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    v[0] = 1.0;
                    return v;
                }
                for token in &tokens {
                    let idx = (stable_hash64(&["embed", token]) % self.dim as u64) as usize;
                    v[idx] += 1.0;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= norm;
                }
                v
            })
            .collect())
    }

    fn dimension(&self) -> usize {
        self.dim
    }
}
