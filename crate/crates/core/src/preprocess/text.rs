//! Transcript embeddings behind a frozen text-embedder contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEmbedding {
    pub vector: Vec<f64>,
    pub token_count: usize,
}

impl TranscriptEmbedding {
    pub fn new(vector: Vec<f64>, token_count: usize) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::shape(format!("[{EMBEDDING_DIM}]"), format!("[{}]", vector.len())));
        }
        Ok(TranscriptEmbedding { vector, token_count })
    }

    pub fn zero() -> Self {
        TranscriptEmbedding {
            vector: vec![0.0; EMBEDDING_DIM],
            token_count: 0,
        }
    }
}

/// Fixed (never trained) sentence embedder producing 1024-d mean-pooled vectors.
pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Result<TranscriptEmbedding>;
}

/// Deterministic stand-in: each lowercase whitespace token maps to a uniform
/// `[-1, 1]` vector seeded from its FNV-1a hash; the text is their mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder {
    pub seed: u64,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl HashEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
        (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<TranscriptEmbedding> {
        let mut sum = vec![0.0; EMBEDDING_DIM];
        let mut count = 0usize;
        for tok in text.split_whitespace() {
            let v = self.token_vector(&tok.to_lowercase());
            sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
            count += 1;
        }
        if count > 0 {
            sum.iter_mut().for_each(|s| *s /= count as f64);
        }
        TranscriptEmbedding::new(sum, count)
    }
}

/// Embeds a transcript. Blank text gives the zero vector without calling the
/// embedder; embedder errors carry the sample id.
pub fn embed_transcript(sample_id: &str, text: &str, embedder: &dyn TextEmbedder) -> Result<TranscriptEmbedding> {
    if text.trim().is_empty() {
        return Ok(TranscriptEmbedding::zero());
    }
    let emb = embedder.embed(text).map_err(|e| e.for_sample(sample_id))?;
    if emb.vector.len() != EMBEDDING_DIM {
        return Err(Error::shape(format!("[{EMBEDDING_DIM}]"), format!("[{}]", emb.vector.len())).for_sample(sample_id));
    }
    Ok(emb)
}
