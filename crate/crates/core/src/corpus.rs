//! Code corpora: ingestion, scaled sampling, splitting, and chunking.
//!
//! A corpus is an ordered list of documents. Every derivation (sampling,
//! splitting, synthesis) is a pure function of its inputs and a seed, so the
//! exact training set of any experiment can be rebuilt from its manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checksum::sha256_hex;
use crate::error::{Error, Result};
use crate::seeds::{self, tags};
use crate::tokenizer::TokenizerModel;

/// One code document. `id` is unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub language: String,
    pub content: String,
    pub id: u64,
}

/// Ordered document collection with a note about where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub provenance: String,
    pub seed: u64,
}

/// On-disk record: one JSON object per line. `id` defaults to the line index.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    language: String,
    content: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, provenance: impl Into<String>, seed: u64) -> Self {
        Corpus {
            documents,
            provenance: provenance.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Read a line-delimited record file. One document per line, ids assigned
    /// in file order unless the record carries an explicit `id`.
    pub fn ingest_records(path: &Path) -> Result<Corpus> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
        let reader = BufReader::new(file);
        let mut documents = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::record(path, lineno, format!("read failed: {e}")))?;
            if line.trim().is_empty() {
                return Err(Error::record(path, lineno, "blank line"));
            }
            let rec: RawRecord = serde_json::from_str(&line)
                .map_err(|e| Error::record(path, lineno, format!("malformed record: {e}")))?;
            if rec.content.is_empty() {
                return Err(Error::record(path, lineno, "empty `content` field"));
            }
            if rec.language.is_empty() {
                return Err(Error::record(path, lineno, "empty `language` field"));
            }
            documents.push(Document {
                language: rec.language,
                content: rec.content,
                id: rec.id.unwrap_or(idx as u64),
            });
        }
        if documents.is_empty() {
            return Err(Error::input(format!("{}: empty record file", path.display())));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &documents {
            if !seen.insert(d.id) {
                return Err(Error::input(format!(
                    "{}: duplicate document id {}",
                    path.display(),
                    d.id
                )));
            }
        }
        Ok(Corpus::new(
            documents,
            format!("ingest({})", path.display()),
            0,
        ))
    }

    /// Write the corpus in the record format `ingest_records` reads.
    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for d in &self.documents {
            let rec = RawRecord {
                language: d.language.clone(),
                content: d.content.clone(),
                id: Some(d.id),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-language document counts, in sorted language order.
    pub fn language_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.documents {
            *counts.entry(d.language.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Content checksum over (id, language, content) in order. Length-prefixed
    /// so distinct corpora cannot collide by field concatenation.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for d in &self.documents {
            bytes.extend_from_slice(&d.id.to_le_bytes());
            bytes.extend_from_slice(&(d.language.len() as u32).to_le_bytes());
            bytes.extend_from_slice(d.language.as_bytes());
            bytes.extend_from_slice(&(d.content.len() as u32).to_le_bytes());
            bytes.extend_from_slice(d.content.as_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Per-language sampling plan: how many extra documents to draw per language
/// for a given multiplier, given the base counts and the available pool.
/// Shortfall is tolerated; the achieved count is capped at the pool size.
pub fn scaled_demand(
    base_counts: &BTreeMap<String, usize>,
    pool_counts: &BTreeMap<String, usize>,
    multiplier: u64,
) -> BTreeMap<String, usize> {
    let mut plan = BTreeMap::new();
    for (lang, &base) in base_counts {
        let want = base * (multiplier as usize - 1);
        let pool = pool_counts.get(lang).copied().unwrap_or(0);
        plan.insert(lang.clone(), want.min(pool));
    }
    plan
}

/// Total per-language counts after scaling: base plus the achieved extra.
pub fn scaled_totals(
    base_counts: &BTreeMap<String, usize>,
    pool_counts: &BTreeMap<String, usize>,
    multiplier: u64,
) -> BTreeMap<String, usize> {
    let plan = scaled_demand(base_counts, pool_counts, multiplier);
    base_counts
        .iter()
        .map(|(lang, &base)| (lang.clone(), base + plan[lang]))
        .collect()
}

/// Scale `base` by `multiplier`, drawing the extra documents per language from
/// `extra` without replacement so that per-language proportions match the base
/// wherever the pool suffices. Languages whose pool runs short keep the whole
/// pool (logged, not fatal). Document ids are reassigned sequentially.
pub fn sample_scaled(base: &Corpus, extra: &Corpus, multiplier: u64, seed: u64) -> Result<Corpus> {
    if multiplier == 0 {
        return Err(Error::input("multiplier must be >= 1"));
    }
    let base_counts = base.language_counts();
    let pool_counts = extra.language_counts();
    let plan = scaled_demand(&base_counts, &pool_counts, multiplier);

    let mut documents: Vec<Document> = Vec::new();
    for d in &base.documents {
        documents.push(d.clone());
    }

    // Pool indices grouped per language, in extra's document order.
    let mut pool_by_lang: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in extra.documents.iter().enumerate() {
        pool_by_lang.entry(d.language.as_str()).or_default().push(i);
    }

    for (lang, &take) in &plan {
        let want = base_counts[lang] * (multiplier as usize - 1);
        if take < want {
            log::warn!(
                "language {lang}: pool has {} of {} requested extra documents; taking the whole pool",
                take,
                want
            );
        }
        if take == 0 {
            continue;
        }
        let pool = pool_by_lang.get(lang.as_str()).map(|v| v.as_slice()).unwrap_or(&[]);
        let mut rng = seeds::rng(seed, &[tags::SAMPLE, seeds::tag_str(lang)]);
        let chosen = sample_without_replacement(pool.len(), take, &mut rng);
        for idx in chosen {
            documents.push(extra.documents[pool[idx]].clone());
        }
    }

    for (i, d) in documents.iter_mut().enumerate() {
        d.id = i as u64;
    }
    Ok(Corpus::new(
        documents,
        format!("sample_scaled(x{multiplier} of [{}])", base.provenance),
        seed,
    ))
}

/// Partial Fisher-Yates: the first `k` entries of a seeded shuffle of `0..n`.
fn sample_without_replacement(n: usize, k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Disjoint, covering, seed-deterministic partition into train/valid/test.
/// Sizes are floor(ratio * n) for train and valid, remainder to test.
/// Document ids are preserved.
pub fn split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    for r in ratios {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::input(format!("ratio {r} outside [0, 1]")));
        }
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("ratios sum to {sum}, expected 1")));
    }

    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::rng(seed, &[tags::SPLIT]);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let n_train = (ratios[0] * n as f64).floor() as usize;
    let n_valid = (ratios[1] * n as f64).floor() as usize;
    let n_train = n_train.min(n);
    let n_valid = n_valid.min(n - n_train);

    let part = |range: &[usize], name: &str| {
        Corpus::new(
            range.iter().map(|&i| corpus.documents[i].clone()).collect(),
            format!("split({name} of [{}])", corpus.provenance),
            seed,
        )
    };
    Ok((
        part(&order[..n_train], "train"),
        part(&order[n_train..n_train + n_valid], "valid"),
        part(&order[n_train + n_valid..], "test"),
    ))
}

/// A fixed-width token window. `ids.len()` equals the chunking window; the
/// tail past `content_len` is padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub content_len: usize,
}

impl TokenSequence {
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.content_len).collect()
    }
}

/// Default minimum tail length kept by [`chunk_fixed`].
pub const DEFAULT_MIN_KEEP: usize = 64;

/// Cut each document's token stream into consecutive windows of exactly
/// `window` tokens. A final partial window shorter than `min_keep` is
/// dropped; otherwise it is padded to `window` with the pad token.
pub fn chunk_fixed(
    corpus: &Corpus,
    tokenizer: &TokenizerModel,
    window: usize,
    min_keep: usize,
) -> Result<Vec<TokenSequence>> {
    if window < 2 {
        return Err(Error::input(format!("window {window} must be >= 2")));
    }
    let mut out = Vec::new();
    for doc in &corpus.documents {
        let ids = tokenizer.encode(&doc.content, false);
        let mut start = 0;
        while start + window <= ids.len() {
            out.push(TokenSequence {
                ids: ids[start..start + window].to_vec(),
                content_len: window,
            });
            start += window;
        }
        let tail = ids.len() - start;
        if tail >= min_keep.max(1) && tail < window {
            let mut padded = ids[start..].to_vec();
            padded.resize(window, TokenizerModel::PAD);
            out.push(TokenSequence {
                ids: padded,
                content_len: tail,
            });
        }
    }
    Ok(out)
}

/// Encode one text into a single fixed-width window: truncate past `window`
/// tokens, pad short texts with the pad token. Mirrors the conventions of
/// [`chunk_fixed`] (no boundary specials).
pub fn encode_window(tokenizer: &TokenizerModel, text: &str, window: usize) -> Result<TokenSequence> {
    if window < 2 {
        return Err(Error::input(format!("window {window} must be >= 2")));
    }
    let mut ids = tokenizer.encode(text, false);
    if ids.is_empty() {
        return Err(Error::input("cannot encode an empty text"));
    }
    ids.truncate(window);
    let content_len = ids.len();
    ids.resize(window, TokenizerModel::PAD);
    Ok(TokenSequence { ids, content_len })
}

/// Provenance sidecar written next to every derived corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source_paths: Vec<PathBuf>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<[f64; 3]>,
    pub documents: usize,
    pub checksum: String,
    pub provenance: String,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn corpus_of(langs: &[(&str, usize)]) -> Corpus {
        let mut docs = Vec::new();
        let mut id = 0u64;
        for (lang, n) in langs {
            for k in 0..*n {
                docs.push(Document {
                    language: lang.to_string(),
                    content: format!("{lang} doc {k}"),
                    id,
                });
                id += 1;
            }
        }
        Corpus::new(docs, "test", 0)
    }

    #[test]
    fn ingest_assigns_ids_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"language\":\"py\",\"content\":\"def a(): pass\"}\n",
                "{\"language\":\"go\",\"content\":\"func b() {}\"}\n",
                "{\"language\":\"py\",\"content\":\"def c(): pass\"}\n",
            ),
        )
        .unwrap();
        let c = Corpus::ingest_records(&path).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(
            c.documents.iter().map(|d| d.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(c.documents[1].language, "go");
    }

    #[test]
    fn ingest_rejects_blank_content_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        std::fs::write(
            &path,
            "{\"language\":\"py\",\"content\":\"x\"}\n{\"language\":\"py\",\"content\":\"\"}\n",
        )
        .unwrap();
        let err = Corpus::ingest_records(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "error should name line 2: {err}");
    }

    #[test]
    fn ingest_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(Corpus::ingest_records(&path).is_err());
    }

    #[test]
    fn ingest_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let corpus = synth::synth_generate("expr", 2000, 99).unwrap();
        corpus.write_records(&path).unwrap();
        let a = Corpus::ingest_records(&path).unwrap();
        let b = Corpus::ingest_records(&path).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a, b);
    }

    #[test]
    fn record_round_trip_preserves_documents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        let corpus = corpus_of(&[("py", 3), ("go", 2)]);
        corpus.write_records(&path).unwrap();
        let back = Corpus::ingest_records(&path).unwrap();
        assert_eq!(back.documents, corpus.documents);
    }

    #[test]
    fn sample_scaled_multiplier_one_is_identity() {
        let base = corpus_of(&[("py", 5), ("go", 3)]);
        let extra = corpus_of(&[("py", 10), ("go", 10)]);
        let out = sample_scaled(&base, &extra, 1, 7).unwrap();
        assert_eq!(out.documents, base.documents);
    }

    #[test]
    fn sample_scaled_rejects_zero_multiplier() {
        let base = corpus_of(&[("py", 1)]);
        assert!(sample_scaled(&base, &base, 0, 0).is_err());
    }

    #[test]
    fn sample_scaled_doubles_counts_when_pool_suffices() {
        let base = corpus_of(&[("py", 8), ("go", 4), ("rb", 2)]);
        let extra = corpus_of(&[("py", 30), ("go", 30), ("rb", 30)]);
        let out = sample_scaled(&base, &extra, 2, 11).unwrap();
        let counts = out.language_counts();
        assert_eq!(counts["py"], 16);
        assert_eq!(counts["go"], 8);
        assert_eq!(counts["rb"], 4);
        // ids reassigned densely
        let ids: Vec<u64> = out.documents.iter().map(|d| d.id).collect();
        assert_eq!(ids, (0..out.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn sample_scaled_caps_exhausted_language_at_pool() {
        let base = corpus_of(&[("py", 4), ("rb", 4)]);
        let extra = corpus_of(&[("py", 100), ("rb", 5)]);
        let out = sample_scaled(&base, &extra, 8, 3).unwrap();
        let counts = out.language_counts();
        assert_eq!(counts["py"], 32); // full 8x
        assert_eq!(counts["rb"], 9); // 4 base + whole pool of 5
    }

    #[test]
    fn sample_scaled_is_deterministic_and_without_replacement() {
        let base = corpus_of(&[("py", 3)]);
        let extra = corpus_of(&[("py", 40)]);
        let a = sample_scaled(&base, &extra, 4, 5).unwrap();
        let b = sample_scaled(&base, &extra, 4, 5).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        // without replacement: sampled contents are distinct
        let mut contents: Vec<&str> = a.documents[3..].iter().map(|d| d.content.as_str()).collect();
        let before = contents.len();
        contents.sort();
        contents.dedup();
        assert_eq!(contents.len(), before);
        // different seed, different draw
        let c = sample_scaled(&base, &extra, 4, 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    /// Per-language totals from the reference corpus statistics: the doubled
    /// counts and the capped-pool column must come out exactly.
    #[test]
    fn scaled_totals_match_reference_statistics() {
        let base: BTreeMap<String, usize> = [
            ("python", 412_176),
            ("java", 454_451),
            ("go", 317_832),
            ("php", 523_712),
            ("javascript", 123_889),
            ("ruby", 48_791),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        // pool large enough for 8x everywhere except ruby, whose whole pool
        // yields a 138,069 total
        let mut pool: BTreeMap<String, usize> = base
            .iter()
            .map(|(k, v)| (k.clone(), v * 10))
            .collect();
        pool.insert("ruby".to_string(), 138_069 - 48_791);

        let x2 = scaled_totals(&base, &pool, 2);
        assert_eq!(x2["python"], 824_352);
        assert_eq!(x2["java"], 908_902);
        assert_eq!(x2["go"], 635_664);
        assert_eq!(x2["php"], 1_047_424);
        assert_eq!(x2["javascript"], 247_778);
        assert_eq!(x2["ruby"], 97_582);

        let x8 = scaled_totals(&base, &pool, 8);
        assert_eq!(x8["python"], 3_297_408);
        assert_eq!(x8["ruby"], 138_069); // capped at the whole pool
    }

    #[test]
    fn split_all_train() {
        let corpus = corpus_of(&[("py", 10)]);
        let (train, valid, test) = split(&corpus, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(valid.len(), 0);
        assert_eq!(test.len(), 0);
    }

    #[test]
    fn split_exact_fractions() {
        let corpus = corpus_of(&[("py", 1000)]);
        let (train, valid, test) = split(&corpus, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(train.len(), 800);
        assert_eq!(valid.len(), 100);
        assert_eq!(test.len(), 100);
    }

    #[test]
    fn split_same_seed_identical() {
        let corpus = corpus_of(&[("py", 97), ("go", 41)]);
        let a = split(&corpus, [0.7, 0.2, 0.1], 9).unwrap();
        let b = split(&corpus, [0.7, 0.2, 0.1], 9).unwrap();
        assert_eq!(a.0.checksum(), b.0.checksum());
        assert_eq!(a.1.checksum(), b.1.checksum());
        assert_eq!(a.2.checksum(), b.2.checksum());
    }

    #[test]
    fn split_preserves_id_multiset() {
        let corpus = corpus_of(&[("py", 57), ("go", 13)]);
        let (train, valid, test) = split(&corpus, [0.5, 0.25, 0.25], 21).unwrap();
        let mut ids: Vec<u64> = train
            .documents
            .iter()
            .chain(&valid.documents)
            .chain(&test.documents)
            .map(|d| d.id)
            .collect();
        ids.sort_unstable();
        let mut expect: Vec<u64> = corpus.documents.iter().map(|d| d.id).collect();
        expect.sort_unstable();
        assert_eq!(ids, expect);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let corpus = corpus_of(&[("py", 4)]);
        assert!(split(&corpus, [0.5, 0.5, 0.5], 0).is_err());
        assert!(split(&corpus, [-0.1, 0.6, 0.5], 0).is_err());
    }

    #[test]
    fn encode_window_pads_and_truncates() {
        let tok = crate::tokenizer::TokenizerModel::from_merges(vec![]).unwrap();
        let short = encode_window(&tok, "ab", 6).unwrap();
        assert_eq!(short.content_len, 2);
        assert_eq!(short.ids.len(), 6);
        assert!(short.ids[2..]
            .iter()
            .all(|&id| id == crate::tokenizer::TokenizerModel::PAD));

        let long = encode_window(&tok, "abcdefgh", 4).unwrap();
        assert_eq!(long.ids.len(), 4);
        assert_eq!(long.content_len, 4);

        assert!(encode_window(&tok, "", 4).is_err());
        assert!(encode_window(&tok, "ab", 1).is_err());
    }
}
