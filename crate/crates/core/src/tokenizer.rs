//! Byte-level byte-pair encoding.
//!
//! Ids `0..256` are raw bytes, the next `merges.len()` ids are learned merges
//! in order, and the last five ids are reserved specials that never come out
//! of [`Tokenizer::encode`]. Text is pre-split before every space so merges
//! stay inside space-led words; splitting and merging are both lossless.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const N_SPECIALS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: u32,
    pub marker: u32,
    pub label0: u32,
    pub label1: u32,
    pub eot: u32,
}

impl Specials {
    fn after(n_merges: usize) -> Self {
        let base = 256 + n_merges as u32;
        Self {
            pad: base,
            marker: base + 1,
            label0: base + 2,
            label1: base + 3,
            eot: base + 4,
        }
    }

    fn all(&self) -> [u32; 5] {
        [self.pad, self.marker, self.label0, self.label1, self.eot]
    }

    pub fn label(&self, trauma: bool) -> u32 {
        if trauma {
            self.label1
        } else {
            self.label0
        }
    }

    fn sentinel(&self, id: u32) -> Option<&'static str> {
        match id {
            x if x == self.marker => Some("⟨TARPON⟩"),
            x if x == self.label0 => Some("⟨0⟩"),
            x if x == self.label1 => Some("⟨1⟩"),
            x if x == self.eot => Some("⟨EOT⟩"),
            x if x == self.pad => Some("⟨PAD⟩"),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    merges: Vec<[u32; 2]>,
    specials: Specials,
    version: u32,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    specials: Specials,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.specials == other.specials
    }
}

/// Splits before every space that is not the first byte.
fn pre_split(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    let mut i = 1;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        while i < bytes.len() && bytes[i] != b' ' {
            i += 1;
        }
        let chunk = &bytes[start..i];
        start = i;
        i += 1;
        Some(chunk)
    })
}

impl Tokenizer {
    /// Pure byte tokenizer with no merges.
    pub fn byte_level() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }

    /// Builds a tokenizer from an ordered merge list, checking prefix closure.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let specials = Specials::after(merges.len());
        Self::with_specials(merges, specials)
    }

    fn with_specials(merges: Vec<(u32, u32)>, specials: Specials) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (k, &(a, b)) in merges.iter().enumerate() {
            let limit = 256 + k as u32;
            if a >= limit || b >= limit {
                return Err(Error::Tokenizer(format!(
                    "merge {k} ({a}, {b}) references an id not yet defined"
                )));
            }
            if ranks.insert((a, b), k as u32).is_some() {
                return Err(Error::Tokenizer(format!("merge {k} ({a}, {b}) is duplicated")));
            }
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
        }
        let base = 256 + merges.len() as u32;
        let mut ids = specials.all();
        ids.sort_unstable();
        if ids != [base, base + 1, base + 2, base + 3, base + 4] {
            return Err(Error::Tokenizer(format!(
                "special ids {:?} must be the five ids following the merges (from {base})",
                specials.all()
            )));
        }
        Ok(Self {
            merges,
            specials,
            ranks,
            pieces,
        })
    }

    /// Greedy BPE: repeatedly merges the most frequent adjacent pair, ties
    /// going to the smallest `(left, right)` id pair. Stops early when no
    /// pair occurs at least twice.
    pub fn train<S: AsRef<str>>(texts: &[S], target_merges: usize) -> Self {
        let mut counts: HashMap<&[u8], usize> = HashMap::new();
        for t in texts {
            for chunk in pre_split(t.as_ref().as_bytes()) {
                *counts.entry(chunk).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, usize)> = counts
            .into_iter()
            .map(|(w, c)| (w.iter().map(|&b| u32::from(b)).collect(), c))
            .collect();
        // HashMap order is random; fix it so pair counting is reproducible.
        words.sort_unstable();

        let mut merges = Vec::with_capacity(target_merges);
        let mut pair_counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (w, c) in &words {
            for p in w.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += c;
            }
        }
        while merges.len() < target_merges {
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)))
                .map(|(&p, _)| p);
            let Some(pair) = best else { break };
            let new_id = 256 + merges.len() as u32;
            merges.push(pair);
            for (w, c) in &mut words {
                if !w.windows(2).any(|p| (p[0], p[1]) == pair) {
                    continue;
                }
                for p in w.windows(2) {
                    let e = pair_counts.get_mut(&(p[0], p[1])).unwrap();
                    *e -= *c;
                }
                *w = merge_pair(w, pair, new_id);
                for p in w.windows(2) {
                    *pair_counts.entry((p[0], p[1])).or_default() += *c;
                }
            }
            pair_counts.retain(|_, c| *c > 0);
        }
        Self::from_merges(merges).expect("trained merges are prefix-closed")
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn vocab_size(&self) -> usize {
        256 + self.merges.len() + N_SPECIALS as usize
    }

    /// The same tokenizer restricted to its first `k` merges.
    pub fn truncated(&self, k: usize) -> Self {
        Self::from_merges(self.merges[..k.min(self.merges.len())].to_vec())
            .expect("prefix of a valid merge list is valid")
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        for chunk in pre_split(bytes) {
            let mut ids: Vec<u32> = chunk.iter().map(|&b| u32::from(b)).collect();
            while ids.len() > 1 {
                let best = ids
                    .windows(2)
                    .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                    .min();
                let Some((rank, pair)) = best else { break };
                ids = merge_pair(&ids, pair, 256 + rank);
            }
            out.extend(ids);
        }
        out
    }

    /// Raw bytes for `ids`; specials render as their sentinel strings.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len() * 3);
        for (position, &id) in ids.iter().enumerate() {
            if let Some(p) = self.pieces.get(id as usize) {
                out.extend_from_slice(p);
            } else if let Some(s) = self.specials.sentinel(id) {
                out.extend_from_slice(s.as_bytes());
            } else {
                return Err(Error::TokenOutOfRange {
                    id,
                    position,
                    vocab_size: self.vocab_size(),
                });
            }
        }
        Ok(out)
    }

    /// Decodes to text, replacing invalid UTF-8 sequences.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
            specials: self.specials,
            version: FORMAT_VERSION,
        };
        serde_json::to_string(&file).expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(s)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Tokenizer(format!("unsupported version {}", file.version)));
        }
        Self::with_specials(
            file.merges.into_iter().map(|[a, b]| (a, b)).collect(),
            file.specials,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized tokenizer, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}
