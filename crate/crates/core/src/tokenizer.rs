//! Byte-level BPE tokenizer with the special tokens the MLM pipeline needs.
//!
//! Ids are laid out as: five special tokens, then the 256 byte tokens, then
//! one id per learned merge. Training is greedy most-frequent-pair; ties are
//! broken by the lexicographically smallest (left token bytes, right token
//! bytes) pair so retraining on the same corpus is bit-identical.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Immutable after training; encode/decode are pure.
#[derive(Debug, Clone)]
pub struct TokenizerModel {
    /// Merge k combines `merges[k].0` and `merges[k].1` into id `FIRST_MERGE_ID + k`.
    merges: Vec<(u32, u32)>,
    /// id -> byte string. Specials hold empty strings.
    vocab: Vec<Vec<u8>>,
    /// (left, right) -> merge index; derived from `merges`.
    ranks: HashMap<(u32, u32), u32>,
}

impl TokenizerModel {
    pub const CLS: u32 = 0;
    pub const SEP: u32 = 1;
    pub const MASK: u32 = 2;
    pub const PAD: u32 = 3;
    pub const UNK: u32 = 4;
    /// Byte value `b` has id `BYTE_BASE + b`.
    pub const BYTE_BASE: u32 = 5;
    /// First id assigned to a learned merge.
    pub const FIRST_MERGE_ID: u32 = 261;

    /// Build a model from an explicit merge list; an empty list gives the
    /// plain byte-level tokenizer.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut vocab: Vec<Vec<u8>> = Vec::with_capacity(Self::FIRST_MERGE_ID as usize + merges.len());
        for _ in 0..Self::BYTE_BASE {
            vocab.push(Vec::new());
        }
        for b in 0u16..256 {
            vocab.push(vec![b as u8]);
        }
        for (k, &(a, b)) in merges.iter().enumerate() {
            let id = Self::FIRST_MERGE_ID as usize + k;
            if a as usize >= id || b as usize >= id {
                return Err(Error::input(format!(
                    "merge {k} references id not yet defined: ({a}, {b})"
                )));
            }
            if a < Self::BYTE_BASE || b < Self::BYTE_BASE {
                return Err(Error::input(format!("merge {k} references a special id")));
            }
            let mut bytes = vocab[a as usize].clone();
            bytes.extend_from_slice(&vocab[b as usize]);
            vocab.push(bytes);
        }
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(k, &p)| (p, k as u32))
            .collect();
        Ok(TokenizerModel { merges, vocab, ranks })
    }

    /// Total ids in use: specials + bytes + learned merges.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(|v| v.as_slice())
    }

    /// Merge the most frequent adjacent pair until `vocab_size` ids exist or
    /// no pair occurs twice.
    pub fn train(corpus: &Corpus, vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::input("cannot train tokenizer on an empty corpus"));
        }
        if vocab_size <= Self::FIRST_MERGE_ID as usize {
            return Err(Error::input(format!(
                "vocab_size {vocab_size} must exceed the {} specials + byte tokens",
                Self::FIRST_MERGE_ID
            )));
        }
        let max_merges = vocab_size - Self::FIRST_MERGE_ID as usize;

        let mut seqs: Vec<Vec<u32>> = corpus
            .documents
            .iter()
            .map(|d| d.content.bytes().map(|b| Self::BYTE_BASE + b as u32).collect())
            .collect();

        // Global pair counts plus, per pair, which sequences contain it.
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        let mut sites: HashMap<(u32, u32), std::collections::BTreeSet<u32>> = HashMap::new();
        for (si, seq) in seqs.iter().enumerate() {
            for w in seq.windows(2) {
                let p = (w[0], w[1]);
                *counts.entry(p).or_insert(0) += 1;
                sites.entry(p).or_default().insert(si as u32);
            }
        }

        let mut model = Self::from_merges(Vec::new())?;
        while model.merges.len() < max_merges {
            let Some((best, _)) = counts
                .iter()
                .filter(|&(_, &c)| c >= 2)
                .map(|(&p, &c)| (p, c))
                .max_by(|&(pa, ca), &(pb, cb)| {
                    // Highest count wins; among equals the smallest byte pair.
                    ca.cmp(&cb).then_with(|| {
                        let ka = (&model.vocab[pa.0 as usize], &model.vocab[pa.1 as usize]);
                        let kb = (&model.vocab[pb.0 as usize], &model.vocab[pb.1 as usize]);
                        kb.cmp(&ka)
                    })
                })
            else {
                break; // nothing repeats: corpus fully compressed
            };

            let (a, b) = best;
            let new_id = Self::FIRST_MERGE_ID + model.merges.len() as u32;
            let mut bytes = model.vocab[a as usize].clone();
            bytes.extend_from_slice(&model.vocab[b as usize]);
            model.merges.push(best);
            model.ranks.insert(best, model.merges.len() as u32 - 1);
            model.vocab.push(bytes);

            let affected: Vec<u32> = sites.remove(&best).map(|s| s.into_iter().collect()).unwrap_or_default();
            for si in affected {
                let seq = &mut seqs[si as usize];
                let before = local_pair_counts(seq);
                merge_in_place(seq, a, b, new_id);
                let after = local_pair_counts(seq);
                for (&p, &c_before) in &before {
                    let c_after = after.get(&p).copied().unwrap_or(0);
                    if c_after < c_before {
                        let slot = counts.get_mut(&p).expect("pair count underflow");
                        *slot -= c_before - c_after;
                        if *slot == 0 {
                            counts.remove(&p);
                        }
                        if c_after == 0 {
                            if let Some(s) = sites.get_mut(&p) {
                                s.remove(&si);
                                if s.is_empty() {
                                    sites.remove(&p);
                                }
                            }
                        }
                    }
                }
                for (&p, &c_after) in &after {
                    let c_before = before.get(&p).copied().unwrap_or(0);
                    if c_after > c_before {
                        *counts.entry(p).or_insert(0) += c_after - c_before;
                        sites.entry(p).or_default().insert(si);
                    }
                }
            }
        }
        Ok(model)
    }

    /// Tokenize by applying merges in training order. With `add_specials` the
    /// result is wrapped as [CLS] ... [SEP]. Byte-level, so never fails.
    pub fn encode(&self, text: &str, add_specials: bool) -> Vec<u32> {
        let mut ids: Vec<u32> = text.bytes().map(|b| Self::BYTE_BASE + b as u32).collect();
        // Repeatedly apply the earliest-trained merge present. A merge can
        // only consume tokens created by earlier merges, so this is the same
        // segmentation as one sequential pass per merge, just cheaper.
        loop {
            let mut best_rank = u32::MAX;
            for w in ids.windows(2) {
                if let Some(&r) = self.ranks.get(&(w[0], w[1])) {
                    best_rank = best_rank.min(r);
                }
            }
            if best_rank == u32::MAX {
                break;
            }
            let (a, b) = self.merges[best_rank as usize];
            merge_in_place(&mut ids, a, b, Self::FIRST_MERGE_ID + best_rank);
        }
        if add_specials {
            let mut out = Vec::with_capacity(ids.len() + 2);
            out.push(Self::CLS);
            out.extend_from_slice(&ids);
            out.push(Self::SEP);
            return out;
        }
        ids
    }

    /// Inverse of `encode` modulo special-token and pad stripping.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id as usize >= self.vocab.len() {
                return Err(Error::input(format!(
                    "id {id} out of range for vocab of {}",
                    self.vocab.len()
                )));
            }
            if id < Self::BYTE_BASE {
                continue;
            }
            bytes.extend_from_slice(&self.vocab[id as usize]);
        }
        String::from_utf8(bytes).map_err(|e| Error::input(format!("decoded bytes not UTF-8: {e}")))
    }

    /// Plain-text model file: header, then one line per merge in training
    /// order carrying the parent ids and the resulting token bytes in hex.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "bpe v1")?;
        writeln!(out, "vocab_size {}", self.vocab.len())?;
        writeln!(
            out,
            "specials cls={} sep={} mask={} pad={} unk={}",
            Self::CLS,
            Self::SEP,
            Self::MASK,
            Self::PAD,
            Self::UNK
        )?;
        writeln!(out, "merges {}", self.merges.len())?;
        for (k, &(a, b)) in self.merges.iter().enumerate() {
            let id = Self::FIRST_MERGE_ID as usize + k;
            writeln!(out, "{a} {b} {}", hex(&self.vocab[id]))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::input(format!("{}: truncated before {what}", path.display())))
        };
        let magic = next("header")?;
        if magic.trim() != "bpe v1" {
            return Err(Error::input(format!(
                "{}: not a tokenizer file (bad header {magic:?})",
                path.display()
            )));
        }
        let vocab_line = next("vocab_size")?;
        let declared: usize = vocab_line
            .strip_prefix("vocab_size ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::input(format!("{}: bad vocab_size line", path.display())))?;
        let _specials = next("specials")?;
        let merges_line = next("merges")?;
        let n_merges: usize = merges_line
            .strip_prefix("merges ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::input(format!("{}: bad merges line", path.display())))?;

        let mut merges = Vec::with_capacity(n_merges);
        let mut expected_hex = Vec::with_capacity(n_merges);
        for k in 0..n_merges {
            let line = next(&format!("merge {k}"))?;
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<u32> {
                s.and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::input(format!("{}: bad merge line {k}", path.display())))
            };
            let a = parse(parts.next())?;
            let b = parse(parts.next())?;
            let hx = parts
                .next()
                .ok_or_else(|| Error::input(format!("{}: bad merge line {k}", path.display())))?;
            merges.push((a, b));
            expected_hex.push(hx.to_string());
        }
        let model = Self::from_merges(merges)?;
        if model.vocab.len() != declared {
            return Err(Error::input(format!(
                "{}: header says {declared} ids, merges yield {}",
                path.display(),
                model.vocab.len()
            )));
        }
        for (k, hx) in expected_hex.iter().enumerate() {
            let id = Self::FIRST_MERGE_ID as usize + k;
            if hex(&model.vocab[id]) != *hx {
                return Err(Error::input(format!(
                    "{}: merge {k} token bytes disagree with parents",
                    path.display()
                )));
            }
        }
        Ok(model)
    }
}

/// Named vocab-size presets. `csn` mirrors the reference corpus setup; `desk`
/// is the small default that keeps embedding tables desk-sized.
pub fn preset_vocab(name: &str) -> Result<usize> {
    match name {
        "csn" => Ok(50_265),
        "desk" => Ok(4_096),
        other => Err(Error::UnknownPreset {
            name: other.to_string(),
            available: "csn, desk".to_string(),
        }),
    }
}

fn local_pair_counts(seq: &[u32]) -> HashMap<(u32, u32), u64> {
    let mut m = HashMap::new();
    for w in seq.windows(2) {
        *m.entry((w[0], w[1])).or_insert(0) += 1;
    }
    m
}

/// One left-to-right pass replacing non-overlapping (a, b) with c.
fn merge_in_place(seq: &mut Vec<u32>, a: u32, b: u32, c: u32) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
            out.push(c);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    *seq = out;
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
