use crate::error::{Error, Result};
use crate::rng::stable_hash;
use crate::text::tokenize;

use super::Encoder;

/// Signed feature hashing of unigrams and bigrams into `dim` buckets,
/// L2-normalized. Pure: identical output for identical input on every
/// platform.
#[derive(Clone, Debug)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }

    fn encode_one(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Encoder("text is empty after normalization".into()));
        }
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &str| {
            let h = stable_hash(feature.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        };
        for t in &tokens {
            add(t);
        }
        for w in tokens.windows(2) {
            add(&format!("{} {}", w[0], w[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Encoder("hashed features cancelled to zero".into()));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

impl Encoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("hashing-v1:dim={}:ngrams=1-2", self.dim)
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.encode_one(t)).collect()
    }
}
