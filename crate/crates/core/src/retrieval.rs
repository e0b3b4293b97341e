//! Code search and clone detection on top of a frozen or fine-tuned encoder:
//! mean-pooled unit embeddings, dot-product scoring, in-batch contrastive
//! fine-tuning, and the MRR / MAP@R metrics.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{
    backward_from_hidden, forward, EncoderConfig, ParameterSet,
};
use crate::training::{adamw_step, lr_at, AdamState, TrainConfig};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// A search supervision pair: free-text query and the id of the document it
/// should retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub query: String,
    pub positive_id: usize,
}

/// A clone-detection item: source text plus the problem/class it solves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub content: String,
    pub class_id: usize,
}

pub fn read_pairs(path: &Path) -> Result<Vec<RetrievalPair>> {
    read_jsonl(path)
}

pub fn read_clone_records(path: &Path) -> Result<Vec<CloneRecord>> {
    read_jsonl(path)
}

pub fn write_pairs(path: &Path, pairs: &[RetrievalPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

pub fn write_clone_records(path: &Path, records: &[CloneRecord]) -> Result<()> {
    write_jsonl(path, records)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::record(path.display().to_string(), i + 1, e.to_string())
        })?;
        out.push(item);
    }
    if out.is_empty() {
        return Err(Error::input(format!("{}: no records", path.display())));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        writeln!(out, "{}", serde_json::to_string(item)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of the rows of `hidden` at content positions (mask true = content).
pub(crate) fn pool(hidden: &Array2<f64>, pad_mask: &[bool]) -> Result<Array1<f64>> {
    let n = pad_mask.iter().filter(|&&content| content).count();
    if n == 0 {
        return Err(Error::input("cannot embed an all-pad sequence"));
    }
    let mut sum = Array1::zeros(hidden.ncols());
    for (t, &content) in pad_mask.iter().enumerate() {
        if content {
            sum += &hidden.row(t);
        }
    }
    Ok(sum / n as f64)
}

fn normalize(v: &Array1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::numeric("cannot normalize a zero or non-finite vector"));
    }
    Ok(v / norm)
}

/// Unit-norm sequence embedding: final-layer hidden states mean-pooled over
/// non-pad positions, then L2-normalized.
pub fn embed(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    ids: &[u32],
    pad_mask: &[bool],
) -> Result<Array1<f64>> {
    let trace = forward(cfg, params, ids, pad_mask)?;
    normalize(&pool(trace.hidden_states.last().expect("layers >= 1"), pad_mask)?)
}

/// Embed many sequences in parallel, preserving order.
pub fn embed_sequences(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    seqs: &[TokenSequence],
) -> Result<Vec<Array1<f64>>> {
    seqs.par_iter()
        .map(|s| embed(cfg, params, &s.ids, &s.pad_mask()))
        .collect()
}

/// Dot products of every query against every document: entry (i, j) scores
/// query i against document j.
pub fn score_matrix(queries: &[Array1<f64>], docs: &[Array1<f64>]) -> Result<Array2<f64>> {
    if queries.is_empty() || docs.is_empty() {
        return Err(Error::input("empty query or document set"));
    }
    let width = queries[0].len();
    for v in queries.iter().chain(docs.iter()) {
        if v.len() != width {
            return Err(Error::input(format!(
                "embedding width mismatch: {} vs {width}",
                v.len()
            )));
        }
    }
    let mut scores = Array2::zeros((queries.len(), docs.len()));
    for (i, q) in queries.iter().enumerate() {
        for (j, d) in docs.iter().enumerate() {
            scores[[i, j]] = q.dot(d);
        }
    }
    Ok(scores)
}

/// In-batch-negative softmax cross-entropy on a square score matrix whose
/// diagonal holds the positives. Returns the mean loss and its gradient with
/// respect to the raw (untempered) scores.
pub fn contrastive_loss(scores: &Array2<f64>, temperature: f64) -> Result<(f64, Array2<f64>)> {
    let b = scores.nrows();
    if b < 2 || scores.ncols() != b {
        return Err(Error::input(format!(
            "need a square batch of at least 2, got {}x{}",
            b,
            scores.ncols()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    let logits = scores / temperature;
    let mut loss = 0.0;
    let mut d_scores = Array2::zeros((b, b));
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[i];
        for j in 0..b {
            let p = (row[j] - lse).exp();
            let delta = if i == j { 1.0 } else { 0.0 };
            d_scores[[i, j]] = (p - delta) / (b as f64 * temperature);
        }
    }
    Ok((loss / b as f64, d_scores))
}

/// Gradient of the loss with respect to the pre-normalization pooled vector,
/// given the gradient on the unit embedding.
fn normalize_backward(v: &Array1<f64>, e: &Array1<f64>, d_e: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt();
    (d_e - &(e * e.dot(d_e))) / norm
}

/// Scatter a pooled-vector gradient back over the content time steps.
fn pool_backward(d_pool: &Array1<f64>, pad_mask: &[bool]) -> Array2<f64> {
    let n = pad_mask.iter().filter(|&&content| content).count();
    let mut d_hidden = Array2::zeros((pad_mask.len(), d_pool.len()));
    for (t, &content) in pad_mask.iter().enumerate() {
        if content {
            d_hidden.row_mut(t).assign(&(d_pool / n as f64));
        }
    }
    d_hidden
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub params: ParameterSet,
    /// contrastive training loss per optimizer step
    pub losses: Vec<f64>,
}

/// Fine-tune the encoder so each query embeds close to its paired document
/// and away from the other documents in the batch. Reuses the pretraining
/// optimizer and schedule machinery.
pub fn finetune_contrastive(
    cfg: &EncoderConfig,
    train: &TrainConfig,
    start: &ParameterSet,
    pairs: &[(TokenSequence, TokenSequence)],
    temperature: f64,
) -> Result<FinetuneOutput> {
    train.validate()?;
    if pairs.is_empty() {
        return Err(Error::input("no fine-tuning pairs"));
    }
    if train.batch_size < 2 {
        return Err(Error::input(
            "contrastive batches need at least 2 pairs for in-batch negatives",
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }

    let mut params = start.clone();
    let mut opt = AdamState::new(&params);
    let mut losses = Vec::with_capacity(train.total_steps as usize);

    for step in 0..train.total_steps {
        let batch = crate::training::batch_indices(
            train.seed,
            pairs.len(),
            step,
            train.batch_size as usize,
        );
        let members: Vec<&(TokenSequence, TokenSequence)> =
            batch.iter().map(|&i| &pairs[i]).collect();

        // embed queries and documents, keeping pooled vectors for backward
        let embed_side = |side: fn(&(TokenSequence, TokenSequence)) -> &TokenSequence| -> Result<Vec<_>> {
            members
                .par_iter()
                .map(|&pair| {
                    let seq = side(pair);
                    let mask = seq.pad_mask();
                    let trace = forward(cfg, &params, &seq.ids, &mask)?;
                    let pooled = pool(trace.hidden_states.last().unwrap(), &mask)?;
                    let unit = normalize(&pooled)?;
                    Ok((pooled, unit, mask))
                })
                .collect()
        };
        let queries = embed_side(|p| &p.0)?;
        let docs = embed_side(|p| &p.1)?;

        let q_units: Vec<Array1<f64>> = queries.iter().map(|t| t.1.clone()).collect();
        let d_units: Vec<Array1<f64>> = docs.iter().map(|t| t.1.clone()).collect();
        let scores = score_matrix(&q_units, &d_units)?;
        let (loss, d_scores) = contrastive_loss(&scores, temperature)?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite contrastive loss at step {step}"
            )));
        }

        // chain rule through the dot products to each unit embedding
        let b = members.len();
        let mut grads = ParameterSet::zeros(cfg);
        for side in 0..2 {
            let parts: Vec<Result<ParameterSet>> = (0..b)
                .into_par_iter()
                .map(|i| {
                    let (pooled, unit, mask) = if side == 0 { &queries[i] } else { &docs[i] };
                    let mut d_unit = Array1::zeros(unit.len());
                    for j in 0..b {
                        let (coeff, other) = if side == 0 {
                            (d_scores[[i, j]], &d_units[j])
                        } else {
                            (d_scores[[j, i]], &q_units[j])
                        };
                        d_unit += &(other * coeff);
                    }
                    let d_pool = normalize_backward(pooled, unit, &d_unit);
                    let d_hidden = pool_backward(&d_pool, mask);
                    let seq = if side == 0 { &members[i].0 } else { &members[i].1 };
                    backward_from_hidden(cfg, &params, &seq.ids, mask, &d_hidden)
                })
                .collect();
            for p in parts {
                grads.add_assign(&p?);
            }
        }

        let lr = lr_at(train, step + 1)?;
        adamw_step(&mut params, &mut grads, &mut opt, lr, train)?;
        losses.push(loss);
    }

    Ok(FinetuneOutput { params, losses })
}

/// 1-based rank of `target` in `row` by descending score; equal scores go to
/// the lower index.
fn rank_in_row(row: &[f64], target: usize, exclude: Option<usize>) -> usize {
    let t = row[target];
    let mut rank = 1;
    for (j, &s) in row.iter().enumerate() {
        if Some(j) == exclude || j == target {
            continue;
        }
        if s > t || (s == t && j < target) {
            rank += 1;
        }
    }
    rank
}

/// Mean reciprocal rank of each query's gold document.
pub fn mrr(scores: &Array2<f64>, gold: &[usize]) -> Result<f64> {
    if gold.len() != scores.nrows() {
        return Err(Error::input(format!(
            "{} gold labels for {} queries",
            gold.len(),
            scores.nrows()
        )));
    }
    if scores.nrows() == 0 {
        return Err(Error::input("no queries"));
    }
    let mut total = 0.0;
    for (i, &g) in gold.iter().enumerate() {
        if g >= scores.ncols() {
            return Err(Error::input(format!(
                "gold index {g} out of range for {} documents",
                scores.ncols()
            )));
        }
        let row: Vec<f64> = scores.row(i).to_vec();
        total += 1.0 / rank_in_row(&row, g, None) as f64;
    }
    Ok(total / gold.len() as f64)
}

/// Items ranked by descending score against query `i`, self excluded; ties
/// broken by index ascending.
fn ranking_for(scores: &Array2<f64>, i: usize) -> Vec<usize> {
    let row = scores.row(i);
    let mut order: Vec<usize> = (0..scores.ncols()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

fn check_square_with_labels(scores: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if scores.nrows() != scores.ncols() {
        return Err(Error::input("clone scoring needs a square self-similarity matrix"));
    }
    if labels.len() != scores.nrows() {
        return Err(Error::input(format!(
            "{} labels for {} items",
            labels.len(),
            scores.nrows()
        )));
    }
    Ok(())
}

/// MAP@R: for each query, precision averaged at each relevant hit within the
/// top R ranks, where R is the query's class size minus one. Queries whose
/// class has no other member are skipped with a warning.
pub fn map_at_r(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_square_with_labels(scores, labels)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..labels.len() {
        let r = labels.iter().enumerate().filter(|&(j, &l)| j != i && l == labels[i]).count();
        if r == 0 {
            log::warn!("item {i} is the only member of class {}; skipped", labels[i]);
            continue;
        }
        let order = ranking_for(scores, i);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (pos, &j) in order.iter().take(r).enumerate() {
            if labels[j] == labels[i] {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        total += precision_sum / r as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::input("every class is a singleton; nothing to evaluate"));
    }
    Ok(total / used as f64)
}

/// Plain mean average precision over the full ranking (no cutoff).
pub fn mean_average_precision(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_square_with_labels(scores, labels)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..labels.len() {
        let r = labels.iter().enumerate().filter(|&(j, &l)| j != i && l == labels[i]).count();
        if r == 0 {
            log::warn!("item {i} is the only member of class {}; skipped", labels[i]);
            continue;
        }
        let order = ranking_for(scores, i);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (pos, &j) in order.iter().enumerate() {
            if labels[j] == labels[i] {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        total += precision_sum / r as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::input("every class is a singleton; nothing to evaluate"));
    }
    Ok(total / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::seeds;
    use rand::Rng;

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig::new(1, 8, 2, 4, 280, 16)
    }

    fn rand_seq(rng: &mut impl Rng, content: usize, total: usize) -> TokenSequence {
        let mut ids: Vec<u32> = (0..content).map(|_| rng.gen_range(5..280)).collect();
        ids.resize(total, crate::tokenizer::TokenizerModel::PAD);
        TokenSequence {
            ids,
            content_len: content,
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 3);
        let mut rng = seeds::rng(1, &[]);
        let seq = rand_seq(&mut rng, 10, 12);
        let a = embed(&cfg, &params, &seq.ids, &seq.pad_mask()).unwrap();
        let b = embed(&cfg, &params, &seq.ids, &seq.pad_mask()).unwrap();
        assert!((a.dot(&a).sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_matches_pool_then_normalize_of_trace() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 5);
        let mut rng = seeds::rng(2, &[]);
        let seq = rand_seq(&mut rng, 9, 12);
        let mask = seq.pad_mask();
        let got = embed(&cfg, &params, &seq.ids, &mask).unwrap();

        let trace = forward(&cfg, &params, &seq.ids, &mask).unwrap();
        let h = trace.hidden_states.last().unwrap();
        let mut mean = Array1::<f64>::zeros(cfg.hidden);
        for t in 0..9 {
            mean += &h.row(t);
        }
        mean /= 9.0;
        let expect = &mean / mean.dot(&mean).sqrt();
        for (g, e) in got.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_ignores_trailing_pads() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 7);
        let mut rng = seeds::rng(3, &[]);
        let short = rand_seq(&mut rng, 8, 10);
        let mut long = short.clone();
        long.ids.resize(16, crate::tokenizer::TokenizerModel::PAD);
        let a = embed(&cfg, &params, &short.ids, &short.pad_mask()).unwrap();
        let b = embed(&cfg, &params, &long.ids, &long.pad_mask()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_pad_input_is_an_error() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 1);
        let seq = TokenSequence {
            ids: vec![crate::tokenizer::TokenizerModel::PAD; 8],
            content_len: 0,
        };
        assert!(embed(&cfg, &params, &seq.ids, &seq.pad_mask()).is_err());
    }

    #[test]
    fn score_matrix_basics() {
        let e1 = Array1::from(vec![1.0, 0.0]);
        let e2 = Array1::from(vec![0.0, 1.0]);
        let s = score_matrix(&[e1.clone(), e2.clone()], &[e1.clone(), e2.clone()]).unwrap();
        assert!((s[[0, 0]] - 1.0).abs() < 1e-6);
        assert!((s[[1, 1]] - 1.0).abs() < 1e-6);
        assert_eq!(s[[0, 1]], 0.0);
        let bad = Array1::from(vec![1.0, 0.0, 0.0]);
        assert!(score_matrix(&[e1], &[bad]).is_err());
    }

    #[test]
    fn score_matrix_matches_double_loop_and_transpose() {
        let mut rng = seeds::rng(11, &[]);
        let qs: Vec<Array1<f64>> = (0..5)
            .map(|_| Array1::from((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()))
            .collect();
        let ds: Vec<Array1<f64>> = (0..7)
            .map(|_| Array1::from((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()))
            .collect();
        let s = score_matrix(&qs, &ds).unwrap();
        let t = score_matrix(&ds, &qs).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let mut dot = 0.0;
                for w in 0..6 {
                    dot += qs[i][w] * ds[j][w];
                }
                assert!((s[[i, j]] - dot).abs() < 1e-12);
                assert_eq!(s[[i, j]], t[[j, i]]);
            }
        }
    }

    #[test]
    fn contrastive_loss_saturates_to_zero_on_perfect_scores() {
        let mut scores = Array2::from_elem((4, 4), -1.0);
        for i in 0..4 {
            scores[[i, i]] = 1.0;
        }
        let (loss, _) = contrastive_loss(&scores, 0.05).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn contrastive_loss_matches_hand_softmax_on_3x3() {
        let scores = ndarray::arr2(&[[0.9, 0.1, 0.0], [0.2, 0.8, -0.1], [0.0, 0.3, 0.7]]);
        let tau = 0.5;
        let (loss, _) = contrastive_loss(&scores, tau).unwrap();
        let mut expect = 0.0;
        for i in 0..3 {
            let exps: Vec<f64> = (0..3).map(|j| (scores[[i, j]] / tau).exp()).collect();
            let z: f64 = exps.iter().sum();
            expect += -(exps[i] / z).ln();
        }
        expect /= 3.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = seeds::rng(21, &[]);
        let mut scores = Array2::zeros((3, 3));
        scores.mapv_inplace(|_: f64| rng.gen_range(-0.9..0.9));
        let (_, grad) = contrastive_loss(&scores, 0.3).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = scores.clone();
                plus[[i, j]] += h;
                let mut minus = scores.clone();
                minus[[i, j]] -= h;
                let fd = (contrastive_loss(&plus, 0.3).unwrap().0
                    - contrastive_loss(&minus, 0.3).unwrap().0)
                    / (2.0 * h);
                assert!(
                    (fd - grad[[i, j]]).abs() < 1e-8,
                    "({i},{j}): fd {fd} vs {}",
                    grad[[i, j]]
                );
            }
        }
    }

    #[test]
    fn contrastive_loss_rejects_degenerate_batches() {
        let one = Array2::zeros((1, 1));
        assert!(contrastive_loss(&one, 0.05).is_err());
        let rect = Array2::zeros((2, 3));
        assert!(contrastive_loss(&rect, 0.05).is_err());
        let ok = Array2::zeros((2, 2));
        assert!(contrastive_loss(&ok, 0.0).is_err());
    }

    /// Overfitting 32 noisy (query, doc) pairs must raise training-set MRR
    /// over the untrained encoder.
    #[test]
    fn finetuning_improves_training_set_mrr() {
        let cfg = EncoderConfig::new(1, 16, 2, 8, 280, 12);
        let mut rng = seeds::rng(31, &[]);
        // disjoint token ranges: the query-doc association is only learnable,
        // never lexical, so the untrained encoder starts near chance
        let pairs: Vec<(TokenSequence, TokenSequence)> = (0..32)
            .map(|_| {
                let mut query: Vec<u32> = (0..8).map(|_| rng.gen_range(5..140)).collect();
                query.resize(12, crate::tokenizer::TokenizerModel::PAD);
                let doc: Vec<u32> = (0..10).map(|_| rng.gen_range(140..280)).collect();
                (
                    TokenSequence {
                        ids: query,
                        content_len: 8,
                    },
                    TokenSequence {
                        ids: doc,
                        content_len: 10,
                    },
                )
            })
            .collect();

        let train_mrr = |params: &ParameterSet| -> f64 {
            let qs: Vec<TokenSequence> = pairs.iter().map(|p| p.0.clone()).collect();
            let ds: Vec<TokenSequence> = pairs.iter().map(|p| p.1.clone()).collect();
            let qe = embed_sequences(&cfg, params, &qs).unwrap();
            let de = embed_sequences(&cfg, params, &ds).unwrap();
            let scores = score_matrix(&qe, &de).unwrap();
            let gold: Vec<usize> = (0..pairs.len()).collect();
            mrr(&scores, &gold).unwrap()
        };

        let start = init_params(&cfg, 77);
        let before = train_mrr(&start);
        let train = TrainConfig {
            batch_size: 8,
            total_steps: 60,
            warmup_steps: 6,
            lr_peak: 2e-3,
            seed: 77,
            ..TrainConfig::default()
        };
        let out = finetune_contrastive(&cfg, &train, &start, &pairs, DEFAULT_TEMPERATURE).unwrap();
        let after = train_mrr(&out.params);
        assert!(after > before, "MRR went {before} -> {after}");
    }

    #[test]
    fn finetune_rejects_batches_without_negatives() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 1);
        let mut rng = seeds::rng(1, &[]);
        let pairs = vec![(rand_seq(&mut rng, 6, 8), rand_seq(&mut rng, 6, 8))];
        let train = TrainConfig {
            batch_size: 1,
            total_steps: 1,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert!(
            finetune_contrastive(&cfg, &train, &params, &pairs, DEFAULT_TEMPERATURE).is_err()
        );
        let train2 = TrainConfig {
            batch_size: 2,
            total_steps: 1,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert!(finetune_contrastive(&cfg, &train2, &params, &[], DEFAULT_TEMPERATURE).is_err());
    }

    #[test]
    fn mrr_hand_values() {
        // gold first everywhere
        let mut s = Array2::zeros((3, 4));
        for i in 0..3 {
            s[[i, i]] = 1.0;
        }
        assert_eq!(mrr(&s, &[0, 1, 2]).unwrap(), 1.0);

        // gold ranks 1, 2, 4
        let s = ndarray::arr2(&[
            [0.9, 0.5, 0.4, 0.3],
            [0.9, 0.5, 0.4, 0.3],
            [0.9, 0.5, 0.4, 0.3],
        ]);
        let got = mrr(&s, &[0, 1, 3]).unwrap();
        assert!((got - 7.0 / 12.0).abs() < 1e-9, "{got}");

        assert!(mrr(&s, &[0, 1, 9]).is_err());
        assert!(mrr(&s, &[0, 1]).is_err());
    }

    #[test]
    fn mrr_ties_resolve_to_lower_index() {
        let s = ndarray::arr2(&[[0.5, 0.5, 0.5]]);
        // gold 0 wins the tie; gold 2 loses to both
        assert_eq!(mrr(&s, &[0]).unwrap(), 1.0);
        assert_eq!(mrr(&s, &[2]).unwrap(), 1.0 / 3.0);
    }

    fn brute_mrr(scores: &Array2<f64>, gold: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &g) in gold.iter().enumerate() {
            let row = scores.row(i);
            let mut order: Vec<usize> = (0..scores.ncols()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            let rank = order.iter().position(|&j| j == g).unwrap() + 1;
            total += 1.0 / rank as f64;
        }
        total / gold.len() as f64
    }

    #[test]
    fn mrr_matches_bruteforce_on_random_matrices() {
        let mut rng = seeds::rng(55, &[]);
        for trial in 0..200 {
            let n = rng.gen_range(2..=8);
            let mut s = Array2::zeros((n, n));
            // coarse grid encourages score ties
            s.mapv_inplace(|_: f64| (rng.gen_range(0..6) as f64) / 4.0);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let fast = mrr(&s, &gold).unwrap();
            let slow = brute_mrr(&s, &gold);
            assert_eq!(fast, slow, "trial {trial}");
        }
    }

    #[test]
    fn map_at_r_perfect_and_worst_case() {
        // two classes of two; mutual nearest neighbors within class
        let perfect = ndarray::arr2(&[
            [0.0, 0.9, 0.1, 0.1],
            [0.9, 0.0, 0.1, 0.1],
            [0.1, 0.1, 0.0, 0.9],
            [0.1, 0.1, 0.9, 0.0],
        ]);
        assert_eq!(map_at_r(&perfect, &[0, 0, 1, 1]).unwrap(), 1.0);

        // every query's nearest neighbor is in the wrong class
        let worst = ndarray::arr2(&[
            [0.0, 0.1, 0.9, 0.9],
            [0.1, 0.0, 0.9, 0.9],
            [0.9, 0.9, 0.0, 0.1],
            [0.9, 0.9, 0.1, 0.0],
        ]);
        assert_eq!(map_at_r(&worst, &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    fn brute_map_at_r(scores: &Array2<f64>, labels: &[usize]) -> Option<f64> {
        let n = labels.len();
        let mut total = 0.0;
        let mut used = 0;
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let row = scores.row(i);
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            let r = order.iter().filter(|&&j| labels[j] == labels[i]).count();
            if r == 0 {
                continue;
            }
            let mut ap = 0.0;
            let mut hits = 0;
            for pos in 0..r {
                if labels[order[pos]] == labels[i] {
                    hits += 1;
                    ap += hits as f64 / (pos + 1) as f64;
                }
            }
            total += ap / r as f64;
            used += 1;
        }
        if used == 0 {
            None
        } else {
            Some(total / used as f64)
        }
    }

    #[test]
    fn map_at_r_matches_bruteforce_on_random_matrices() {
        let mut rng = seeds::rng(66, &[]);
        for trial in 0..200 {
            let n = 10;
            let mut s = Array2::zeros((n, n));
            s.mapv_inplace(|_: f64| (rng.gen_range(0..8) as f64) / 4.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            match (map_at_r(&s, &labels), brute_map_at_r(&s, &labels)) {
                (Ok(fast), Some(slow)) => assert_eq!(fast, slow, "trial {trial}"),
                (Err(_), None) => {}
                (fast, slow) => panic!("trial {trial}: {fast:?} vs {slow:?}"),
            }
        }
    }

    #[test]
    fn metrics_invariant_under_increasing_transforms() {
        let mut rng = seeds::rng(88, &[]);
        let n = 8;
        let mut s = Array2::zeros((n, n));
        s.mapv_inplace(|_: f64| rng.gen_range(-1.0..1.0));
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();

        let affine = s.mapv(|v| 3.0 * v + 7.0);
        let atan = s.mapv(f64::atan);
        assert_eq!(mrr(&s, &gold).unwrap(), mrr(&affine, &gold).unwrap());
        assert_eq!(mrr(&s, &gold).unwrap(), mrr(&atan, &gold).unwrap());
        assert_eq!(map_at_r(&s, &labels).unwrap(), map_at_r(&affine, &labels).unwrap());
        assert_eq!(
            mean_average_precision(&s, &labels).unwrap(),
            mean_average_precision(&atan, &labels).unwrap()
        );

        let v = mrr(&s, &gold).unwrap();
        assert!(v > 0.0 && v <= 1.0);
        let m = map_at_r(&s, &labels).unwrap();
        assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn singleton_classes_are_skipped_not_fatal() {
        let s = ndarray::arr2(&[
            [0.0, 0.9, 0.1],
            [0.9, 0.0, 0.1],
            [0.1, 0.1, 0.0],
        ]);
        // class 7 is a singleton; the two class-0 items are mutual top hits
        assert_eq!(map_at_r(&s, &[0, 0, 7]).unwrap(), 1.0);
        assert!(map_at_r(&s, &[1, 2, 3]).is_err());
    }

    #[test]
    fn pair_and_clone_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![
            RetrievalPair {
                query: "binary search over ints".into(),
                positive_id: 4,
            },
            RetrievalPair {
                query: "parse json".into(),
                positive_id: 0,
            },
        ];
        let p = dir.path().join("pairs.jsonl");
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);

        let records = vec![
            CloneRecord {
                content: "fn a() {}".into(),
                class_id: 3,
            },
            CloneRecord {
                content: "fn b() {}".into(),
                class_id: 3,
            },
        ];
        let c = dir.path().join("clones.jsonl");
        write_clone_records(&c, &records).unwrap();
        assert_eq!(read_clone_records(&c).unwrap(), records);

        std::fs::write(dir.path().join("bad.jsonl"), "{\"query\": 12}\n").unwrap();
        let err = read_pairs(&dir.path().join("bad.jsonl")).unwrap_err().to_string();
        assert!(err.contains("bad.jsonl:1"), "{err}");
    }
}
