use serde::{Deserialize, Serialize};

use super::TokenId;

/// Whitespace tokenizer hashing each token into a fixed number of buckets.
///
/// Bucket = FNV-1a-64 over the little-endian seed bytes followed by the
/// token's UTF-8 bytes, modulo `vocab_size`. No vocabulary file is needed
/// and the mapping is identical on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: u32,
    pub seed: u64,
}

impl Default for HashTokenizer {
    fn default() -> Self {
        HashTokenizer {
            vocab_size: 4096,
            seed: 0,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl HashTokenizer {
    pub fn new(vocab_size: u32, seed: u64) -> Self {
        assert!(vocab_size > 0, "vocabulary must be nonempty");
        HashTokenizer { vocab_size, seed }
    }

    pub fn token_id(&self, token: &str) -> TokenId {
        let mut h = FNV_OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        (h % u64::from(self.vocab_size)) as TokenId
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|t| self.token_id(t)).collect()
    }
}
