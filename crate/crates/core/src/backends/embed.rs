//! Offline embedder: hashed token counts, L2-normalised.

use super::{BackendError, Embedder};

pub const DEFAULT_DIMENSION: usize = 256;

#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashedEmbedder { dimension }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lower-cased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for tok in tokens(text) {
            v[(fnv1a64(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            return Err(BackendError::EmptyText);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalised() {
        let e = HashedEmbedder::default();
        let a = e.embed("gradient boosting with target encoding").unwrap();
        assert_eq!(a, e.embed("gradient boosting with target encoding").unwrap());
        assert_eq!(a.len(), 256);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_is_rejected() {
        let e = HashedEmbedder::default();
        assert_eq!(e.embed(""), Err(BackendError::EmptyText));
        assert_eq!(e.embed("  ,;  "), Err(BackendError::EmptyText));
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
