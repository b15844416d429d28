//! Text pipeline: tokenizer, vocabulary, id sequences and the character
//! n-gram hashing featurizer for textual input columns.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;

const SPECIALS: [&str; 4] = ["[pad]", "[start]", "[end]", "[unk]"];

/// Lowercase "basic english" tokenization: a fixed substitution list applied
/// in order, then whitespace split.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut s = text.to_lowercase();
    const RULES: [(&str, &str); 11] = [
        ("'", " ' "),
        ("\"", ""),
        (".", " . "),
        ("<br />", " "),
        (",", " , "),
        ("(", " ( "),
        (")", " ) "),
        ("!", " ! "),
        ("?", " ? "),
        (";", " "),
        (":", " "),
    ];
    for (from, to) in RULES {
        if s.contains(from) {
            s = s.replace(from, to);
        }
    }
    s.split_whitespace().map(str::to_owned).collect()
}

/// Token <-> id maps with fixed special ids [pad]=0, [start]=1, [end]=2,
/// [unk]=3.
#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocab {
    /// Build from training texts: the `max_size` most frequent tokens, ties
    /// broken lexicographically ascending, plus the four specials.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                if SPECIALS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Self::from_tokens_unchecked(id_to_token)
    }

    /// Rebuild from a serialized token list (checkpoint load).
    pub fn from_tokens(id_to_token: Vec<String>) -> Result<Vocab> {
        if id_to_token.len() < SPECIALS.len()
            || SPECIALS.iter().zip(&id_to_token).any(|(s, t)| s != t)
        {
            return Err(Error::Checkpoint(
                "vocabulary does not start with the reserved special tokens".to_string(),
            ));
        }
        let v = Self::from_tokens_unchecked(id_to_token);
        if v.token_to_id.len() != v.id_to_token.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".to_string()));
        }
        Ok(v)
    }

    fn from_tokens_unchecked(id_to_token: Vec<String>) -> Vocab {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// `[start] + ids + [end]`, with the token ids truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids = vec![START_ID];
        ids.extend(tokenize(text).iter().take(max_len).map(|t| self.id(t)));
        ids.push(END_ID);
        ids
    }

    /// Drop special ids and map the rest back to tokens.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id >= SPECIALS.len())
            .filter_map(|&id| self.token(id))
            .map(str::to_owned)
            .collect()
    }
}

/// Configuration of the hashing featurizer. N-grams are fixed at characters
/// 1 through 5.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HashConfig {
    pub dimension: usize,
    pub seed: u32,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            dimension: 128,
            seed: 0,
        }
    }
}

pub const NGRAM_MIN: usize = 1;
pub const NGRAM_MAX: usize = 5;

/// MurmurHash3 x86 32-bit.
pub fn murmur3_32(bytes: &[u8], seed: u32) -> u32 {
    const C1: u32 = 0xcc9e2d51;
    const C2: u32 = 0x1b873593;
    let mut h = seed;
    let mut chunks = bytes.chunks_exact(4);
    for c in &mut chunks {
        let mut k = u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h = (h ^ k).rotate_left(13).wrapping_mul(5).wrapping_add(0xe6546b64);
    }
    let rem = chunks.remainder();
    if !rem.is_empty() {
        let mut k = 0u32;
        for (i, &b) in rem.iter().enumerate() {
            k ^= (b as u32) << (8 * i);
        }
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
    }
    h ^= bytes.len() as u32;
    h ^= h >> 16;
    h = h.wrapping_mul(0x85ebca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2ae35);
    h ^= h >> 16;
    h
}

/// Signed bucket counts of all character n-grams (n = 1..=5) over the
/// lowercased string, whitespace included. Not normalized.
pub fn hash_counts(text: &str, config: &HashConfig) -> Vec<f32> {
    let mut out = vec![0.0f32; config.dimension];
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut buf = String::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window.iter());
            let h = murmur3_32(buf.as_bytes(), config.seed) as i32;
            let bucket = (h.unsigned_abs() as usize) % config.dimension;
            out[bucket] += if h >= 0 { 1.0 } else { -1.0 };
        }
    }
    out
}

/// L2-normalized hashing features; the zero vector stays zero.
pub fn hash_features(text: &str, config: &HashConfig) -> Vec<f32> {
    let mut v = hash_counts(text, config);
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = (1.0 / norm) as f32;
        v.iter_mut().for_each(|x| *x *= inv);
    }
    v
}
