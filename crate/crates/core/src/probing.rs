//! Linear probes over frozen encoder layers: which layers encode sequence
//! length, syntax-tree node types, complexity, and type validity.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{forward, EncoderConfig, ParameterSet};
use crate::plot::{self, Figure, Series};
use crate::retrieval::pool;
use crate::seeds::{self, tags};
use crate::tokenizer::TokenizerModel;

/// What a probe is asked to read off the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTask {
    /// sequence-length bucket (5 classes)
    Len,
    /// syntax-tree node tag (20 classes)
    Ast,
    /// complexity bucket (10 classes)
    Cpx,
    /// type-keyword validity (2 classes)
    Typ,
}

impl ProbeTask {
    pub fn class_count(self) -> usize {
        match self {
            ProbeTask::Len => 5,
            ProbeTask::Ast => 20,
            ProbeTask::Cpx => 10,
            ProbeTask::Typ => 2,
        }
    }
}

impl std::fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProbeTask::Len => "len",
            ProbeTask::Ast => "ast",
            ProbeTask::Cpx => "cpx",
            ProbeTask::Typ => "typ",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ProbeTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "len" => Ok(ProbeTask::Len),
            "ast" => Ok(ProbeTask::Ast),
            "cpx" => Ok(ProbeTask::Cpx),
            "typ" => Ok(ProbeTask::Typ),
            other => Err(Error::input(format!(
                "unknown probe task {other:?} (expected len, ast, cpx, or typ)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub content: String,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub task: ProbeTask,
    pub items: Vec<ProbeItem>,
}

impl ProbeDataset {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.task.class_count()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    /// Largest relative deviation of any populated class from the largest
    /// class; 0 for perfectly balanced data.
    pub fn imbalance(&self) -> f64 {
        let counts = self.class_counts();
        let populated: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        let max = *populated.iter().max().unwrap_or(&0);
        let min = *populated.iter().min().unwrap_or(&0);
        if max == 0 {
            return 0.0;
        }
        (max - min) as f64 / max as f64
    }

    fn validate(&self) -> Result<()> {
        let c = self.task.class_count();
        for (i, item) in self.items.iter().enumerate() {
            if item.label >= c {
                return Err(Error::input(format!(
                    "item {i}: label {} out of range for {} ({} classes)",
                    item.label, self.task, c
                )));
            }
        }
        Ok(())
    }
}

/// Read a (content, label) record file for the given task.
pub fn load_label_file(path: &Path, task: ProbeTask, max_imbalance: f64) -> Result<ProbeDataset> {
    let file = std::fs::File::open(path)?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ProbeItem = serde_json::from_str(&line)
            .map_err(|e| Error::record(path.display().to_string(), i + 1, e.to_string()))?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::input(format!("{}: no records", path.display())));
    }
    let ds = ProbeDataset { task, items };
    ds.validate()?;
    if ds.imbalance() > max_imbalance {
        return Err(Error::input(format!(
            "{}: class imbalance {:.3} exceeds tolerance {max_imbalance}",
            path.display(),
            ds.imbalance()
        )));
    }
    Ok(ds)
}

pub fn save_label_file(path: &Path, ds: &ProbeDataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in &ds.items {
        writeln!(out, "{}", serde_json::to_string(item)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean-pooled hidden states from one layer for each sequence; layer 0 is
/// the embedding output, layer `cfg.layers` the final output.
pub fn extract_features(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    seqs: &[TokenSequence],
    layer: usize,
) -> Result<Array2<f64>> {
    if layer > cfg.layers {
        return Err(Error::input(format!(
            "layer {layer} out of range; encoder has layers 0..={}",
            cfg.layers
        )));
    }
    if seqs.is_empty() {
        return Err(Error::input("no sequences to featurize"));
    }
    let rows: Vec<Result<Array1<f64>>> = seqs
        .par_iter()
        .map(|seq| {
            let mask = seq.pad_mask();
            let trace = forward(cfg, params, &seq.ids, &mask)?;
            pool(&trace.hidden_states[layer], &mask)
        })
        .collect();
    let mut features = Array2::zeros((seqs.len(), cfg.hidden));
    for (i, row) in rows.into_iter().enumerate() {
        features.row_mut(i).assign(&row?);
    }
    Ok(features)
}

/// A trained linear readout on frozen features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    /// class_count x feature_width
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// which encoder layer the probe was trained on
    pub layer: usize,
}

fn softmax_loss_grad(
    features: &Array2<f64>,
    labels: &[usize],
    weight: &Array2<f64>,
    bias: &Array1<f64>,
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = features.nrows();
    let c = weight.nrows();
    let mut loss = 0.0;
    let mut d_w = Array2::zeros(weight.raw_dim());
    let mut d_b = Array1::zeros(c);
    for i in 0..n {
        let x = features.row(i);
        let mut logits: Vec<f64> = (0..c).map(|k| weight.row(k).dot(&x) + bias[k]).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - logits[labels[i]];
        for k in 0..c {
            logits[k] = (logits[k] - lse).exp();
        }
        logits[labels[i]] -= 1.0;
        for k in 0..c {
            let coeff = logits[k] / n as f64;
            d_b[k] += coeff;
            d_w.row_mut(k).scaled_add(coeff, &x);
        }
    }
    loss /= n as f64;
    loss += 0.5 * l2 * weight.iter().map(|w| w * w).sum::<f64>();
    d_w.scaled_add(l2, weight);
    (loss, d_w, d_b)
}

const PROBE_L2: f64 = 1e-3;
const PROBE_MAX_ITERS: usize = 300;

/// Multinomial logistic regression on standardized features: zeros init,
/// full-batch gradient descent with backtracking line search, stopping on a
/// vanishing gradient or stalled loss. Standardization is folded into the
/// returned probe, which therefore applies to raw features.
pub fn train_probe(
    features: &Array2<f64>,
    labels: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<LinearProbe> {
    if features.nrows() != labels.len() {
        return Err(Error::input(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if class_count < 2 {
        return Err(Error::input("need at least two classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::input(format!(
            "label {bad} out of range for {class_count} classes"
        )));
    }
    let distinct = {
        let mut seen = vec![false; class_count];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::input(
            "all labels identical; a probe needs at least two classes present",
        ));
    }

    // row order only affects floating-point summation order; the seed makes
    // that order explicit and reproducible
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    order.shuffle(&mut seeds::rng(seed, &[tags::PROBE]));
    let n = order.len();
    let d = features.ncols();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for (row, &src) in order.iter().enumerate() {
        x.row_mut(row).assign(&features.row(src));
        y.push(labels[src]);
    }

    // standardize each feature column
    let mut mu = Array1::zeros(d);
    let mut sigma = Array1::zeros(d);
    for j in 0..d {
        let col = x.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        mu[j] = m;
        sigma[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    for j in 0..d {
        let (m, s) = (mu[j], sigma[j]);
        x.column_mut(j).mapv_inplace(|v| (v - m) / s);
    }

    let mut weight = Array2::zeros((class_count, d));
    let mut bias = Array1::zeros(class_count);
    let (mut loss, mut d_w, mut d_b) = softmax_loss_grad(&x, &y, &weight, &bias, PROBE_L2);
    let mut step = 1.0f64;
    for _ in 0..PROBE_MAX_ITERS {
        let g2 = d_w.iter().map(|g| g * g).sum::<f64>() + d_b.iter().map(|g| g * g).sum::<f64>();
        if g2.sqrt() < 1e-7 {
            break;
        }
        // Armijo backtracking from a slightly grown previous step
        step = (step * 2.0).min(16.0);
        let mut accepted = false;
        for _ in 0..50 {
            let w_try = &weight - &(&d_w * step);
            let b_try = &bias - &(&d_b * step);
            let (loss_try, d_w_try, d_b_try) = softmax_loss_grad(&x, &y, &w_try, &b_try, PROBE_L2);
            if loss_try <= loss - 0.25 * step * g2 {
                let improved = loss - loss_try;
                weight = w_try;
                bias = b_try;
                loss = loss_try;
                d_w = d_w_try;
                d_b = d_b_try;
                accepted = true;
                if improved < 1e-10 * (1.0 + loss.abs()) {
                    step = 0.0; // signal convergence
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || step == 0.0 {
            break;
        }
    }

    // fold standardization into the raw-feature readout
    let mut raw_w = Array2::zeros((class_count, d));
    let mut raw_b = bias.clone();
    for k in 0..class_count {
        for j in 0..d {
            raw_w[[k, j]] = weight[[k, j]] / sigma[j];
            raw_b[k] -= weight[[k, j]] * mu[j] / sigma[j];
        }
    }
    Ok(LinearProbe {
        weight: raw_w,
        bias: raw_b,
        layer: 0,
    })
}

/// Fraction of items whose argmax class matches the label; equal logits go
/// to the lower class index.
pub fn probe_accuracy(probe: &LinearProbe, features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::input("feature/label count mismatch"));
    }
    if features.ncols() != probe.weight.ncols() {
        return Err(Error::input(format!(
            "feature width {} does not match probe width {}",
            features.ncols(),
            probe.weight.ncols()
        )));
    }
    if labels.is_empty() {
        return Err(Error::input("nothing to score"));
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let x = features.row(i);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..probe.weight.nrows() {
            let s = probe.weight.row(k).dot(&x) + probe.bias[k];
            if s > best_score {
                best_score = s;
                best = k;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Train one probe per encoder layer on an 80/20 split and report accuracy
/// per layer. Optionally writes `probe_<task>.csv` and `probe_<task>.svg`.
pub fn layer_sweep(
    cfg: &EncoderConfig,
    params: &ParameterSet,
    seqs: &[TokenSequence],
    labels: &[usize],
    task: ProbeTask,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<LayerAccuracy>> {
    if seqs.len() != labels.len() {
        return Err(Error::input("sequence/label count mismatch"));
    }
    if seqs.len() < 10 {
        return Err(Error::input("need at least 10 items for an 80/20 split"));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut seeds::rng(seed, &[tags::PROBE, tags::SPLIT]));
    let n_train = (seqs.len() * 8) / 10;
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut curve = Vec::with_capacity(cfg.layers + 1);
    for layer in 0..=cfg.layers {
        let features = extract_features(cfg, params, seqs, layer)?;
        let take = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
            let mut f = Array2::zeros((idx.len(), features.ncols()));
            let mut l = Vec::with_capacity(idx.len());
            for (row, &src) in idx.iter().enumerate() {
                f.row_mut(row).assign(&features.row(src));
                l.push(labels[src]);
            }
            (f, l)
        };
        let (f_train, l_train) = take(train_idx);
        let (f_test, l_test) = take(test_idx);
        let mut probe = train_probe(&f_train, &l_train, task.class_count(), seed)?;
        probe.layer = layer;
        curve.push(LayerAccuracy {
            layer,
            train_acc: probe_accuracy(&probe, &f_train, &l_train)?,
            test_acc: probe_accuracy(&probe, &f_test, &l_test)?,
        });
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("layer,train_acc,test_acc\n");
        for row in &curve {
            csv.push_str(&format!("{},{},{}\n", row.layer, row.train_acc, row.test_acc));
        }
        std::fs::write(dir.join(format!("probe_{task}.csv")), csv)?;
        let fig = Figure::new(
            &format!("{task} probe accuracy by layer"),
            "layer",
            "accuracy",
            vec![
                Series::line(
                    "train",
                    curve.iter().map(|r| (r.layer as f64, r.train_acc)).collect(),
                ),
                Series::line(
                    "held-out",
                    curve.iter().map(|r| (r.layer as f64, r.test_acc)).collect(),
                ),
            ],
        );
        plot::save_linear_svg(&fig, &dir.join(format!("probe_{task}.svg")))?;
    }
    Ok(curve)
}

pub const DEFAULT_LEN_EDGES: [usize; 4] = [50, 100, 150, 200];

/// Label each document with its token-length interval (half-open [lo, hi)
/// bins, final bin open-ended), then balance classes by subsampling to the
/// smallest populated class.
pub fn gen_len_labels(
    corpus: &Corpus,
    tokenizer: &TokenizerModel,
    edges: &[usize; 4],
) -> Result<ProbeDataset> {
    if corpus.documents.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    if !edges.windows(2).all(|w| w[0] < w[1]) || edges[0] == 0 {
        return Err(Error::input("length edges must be positive and increasing"));
    }
    let labeled: Vec<ProbeItem> = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let tokens = tokenizer.encode(&doc.content, false).len();
            let label = edges.iter().filter(|&&e| tokens >= e).count();
            ProbeItem {
                content: doc.content.clone(),
                label,
            }
        })
        .collect();

    let task = ProbeTask::Len;
    let mut by_class: Vec<Vec<ProbeItem>> = vec![Vec::new(); task.class_count()];
    for item in labeled {
        by_class[item.label].push(item);
    }
    let populated = by_class.iter().filter(|c| !c.is_empty()).count();
    if populated < task.class_count() {
        return Err(Error::input(format!(
            "only {populated} of {} length bins are populated; adjust edges or corpus",
            task.class_count()
        )));
    }
    let keep = by_class.iter().map(|c| c.len()).min().unwrap();
    let mut items = Vec::with_capacity(keep * task.class_count());
    for class in &mut by_class {
        class.truncate(keep);
        items.append(class);
    }
    Ok(ProbeDataset { task, items })
}

/// Misspell one occurrence of one type keyword in half the documents;
/// untouched documents are labeled valid (0), corrupted ones invalid (1).
pub fn gen_typ_labels(
    corpus: &Corpus,
    type_keywords: &[&str],
    corrupt_fraction: f64,
    seed: u64,
) -> Result<ProbeDataset> {
    if corpus.documents.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    if type_keywords.is_empty() {
        return Err(Error::input("no type keywords given"));
    }
    if !(corrupt_fraction > 0.0 && corrupt_fraction < 1.0) {
        return Err(Error::input("corrupt fraction must be inside (0, 1)"));
    }

    // only documents containing a keyword are usable either way, otherwise
    // the label would leak through keyword absence
    let mut usable: Vec<&str> = Vec::new();
    for doc in &corpus.documents {
        if type_keywords.iter().any(|k| doc.content.contains(k)) {
            usable.push(&doc.content);
        } else {
            log::warn!("document {} has no type keyword; skipped", doc.id);
        }
    }
    if usable.is_empty() {
        return Err(Error::input("no document contains any type keyword"));
    }

    let mut rng = seeds::rng(seed, &[tags::PROBE]);
    usable.shuffle(&mut rng);
    let n_invalid = (usable.len() as f64 * corrupt_fraction).round() as usize;

    let mut items = Vec::with_capacity(usable.len());
    for (i, content) in usable.iter().enumerate() {
        if i < n_invalid {
            let corrupted = misspell_one_keyword(content, type_keywords, &mut rng);
            items.push(ProbeItem {
                content: corrupted,
                label: 1,
            });
        } else {
            items.push(ProbeItem {
                content: content.to_string(),
                label: 0,
            });
        }
    }
    Ok(ProbeDataset {
        task: ProbeTask::Typ,
        items,
    })
}

/// Replace one letter inside one randomly chosen keyword occurrence, making
/// sure the result is not itself a valid keyword.
fn misspell_one_keyword(content: &str, keywords: &[&str], rng: &mut impl Rng) -> String {
    let mut sites: Vec<(usize, &str)> = Vec::new();
    for &kw in keywords {
        for (at, _) in content.match_indices(kw) {
            sites.push((at, kw));
        }
    }
    let &(at, kw) = &sites[rng.gen_range(0..sites.len())];
    loop {
        let pos = rng.gen_range(0..kw.len());
        let replacement = (b'a' + rng.gen_range(0..26u8)) as char;
        let mut mangled = String::with_capacity(kw.len());
        mangled.push_str(&kw[..pos]);
        mangled.push(replacement);
        mangled.push_str(&kw[pos + 1..]);
        if mangled != kw && !keywords.contains(&mangled.as_str()) {
            let mut out = String::with_capacity(content.len());
            out.push_str(&content[..at]);
            out.push_str(&mangled);
            out.push_str(&content[at + kw.len()..]);
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::model::init_params;
    use crate::synth::synth_generate;

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig::new(2, 8, 2, 4, 280, 16)
    }

    fn gaussian_blobs(
        n_per: usize,
        centers: &[Vec<f64>],
        spread: f64,
        seed: u64,
    ) -> (Array2<f64>, Vec<usize>) {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, spread).unwrap();
        let mut rng = seeds::rng(seed, &[]);
        let d = centers[0].len();
        let mut features = Array2::zeros((n_per * centers.len(), d));
        let mut labels = Vec::new();
        for (k, center) in centers.iter().enumerate() {
            for i in 0..n_per {
                let row = k * n_per + i;
                for j in 0..d {
                    features[[row, j]] = center[j] + noise.sample(&mut rng);
                }
                labels.push(k);
            }
        }
        (features, labels)
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let centers = vec![vec![2.0, 0.0, 1.0], vec![-2.0, 0.5, -1.0]];
        let (features, labels) = gaussian_blobs(60, &centers, 0.3, 1);
        let probe = train_probe(&features, &labels, 2, 5).unwrap();
        let acc = probe_accuracy(&probe, &features, &labels).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn random_labels_stay_at_chance_on_held_out_data() {
        use rand::Rng;
        for &k in &[2usize, 5] {
            let mut rng = seeds::rng(100 + k as u64, &[]);
            let n = 150 * k;
            let mut features = Array2::zeros((n, 6));
            features.mapv_inplace(|_: f64| rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();

            let split = (n * 8) / 10;
            let train_f = features.slice(ndarray::s![..split, ..]).to_owned();
            let test_f = features.slice(ndarray::s![split.., ..]).to_owned();
            let probe = train_probe(&train_f, &labels[..split], k, 3).unwrap();
            let acc = probe_accuracy(&probe, &test_f, &labels[split..]).unwrap();

            let p = 1.0 / k as f64;
            let sigma = (p * (1.0 - p) / (n - split) as f64).sqrt();
            assert!(
                (acc - p).abs() <= 3.0 * sigma,
                "k={k}: held-out accuracy {acc} vs chance {p} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn descent_never_ends_above_uniform_loss() {
        let centers = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]];
        let (features, labels) = gaussian_blobs(40, &centers, 0.8, 9);
        let probe = train_probe(&features, &labels, 3, 2).unwrap();
        // recompute the final standardized-space loss via the raw-space probe
        let n = labels.len();
        let mut loss = 0.0;
        for i in 0..n {
            let x = features.row(i);
            let logits: Vec<f64> = (0..3)
                .map(|c| probe.weight.row(c).dot(&x) + probe.bias[c])
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - logits[labels[i]];
        }
        loss /= n as f64;
        assert!(loss <= (3.0f64).ln() + 1e-9, "final loss {loss}");
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let centers = vec![vec![1.5, -0.5], vec![-1.5, 0.5]];
        let (features, labels) = gaussian_blobs(30, &centers, 0.6, 4);
        let a = train_probe(&features, &labels, 2, 42).unwrap();
        let b = train_probe(&features, &labels, 2, 42).unwrap();
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn probe_rejects_degenerate_inputs() {
        let features = Array2::zeros((4, 3));
        assert!(train_probe(&features, &[0, 0, 0, 0], 2, 1).is_err());
        assert!(train_probe(&features, &[0, 1], 2, 1).is_err());
        assert!(train_probe(&features, &[0, 1, 2, 1], 2, 1).is_err());
        assert!(train_probe(&features, &[0, 1, 0, 1], 1, 1).is_err());
    }

    #[test]
    fn accuracy_matches_hand_count_and_breaks_ties_low() {
        // identity readout on 2 features; class = argmax feature
        let probe = LinearProbe {
            weight: ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            bias: Array1::zeros(2),
            layer: 0,
        };
        let features = ndarray::arr2(&[
            [2.0, 1.0], // -> 0
            [0.0, 3.0], // -> 1
            [1.0, 1.0], // tie -> 0
            [5.0, 4.0], // -> 0
            [1.0, 2.0], // -> 1
        ]);
        // three of five labels agree with the readout above
        let labels = [0, 1, 1, 1, 1];
        let acc = probe_accuracy(&probe, &features, &labels).unwrap();
        assert!((acc - 3.0 / 5.0).abs() < 1e-12);

        let constant = LinearProbe {
            weight: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            layer: 0,
        };
        let balanced = [0, 1, 0, 1];
        let f4 = Array2::zeros((4, 2));
        assert_eq!(probe_accuracy(&constant, &f4, &balanced).unwrap(), 0.5);
    }

    fn random_seqs(n: usize, lens: &[usize], total: usize, seed: u64) -> Vec<TokenSequence> {
        use rand::Rng;
        let mut rng = seeds::rng(seed, &[]);
        (0..n)
            .map(|i| {
                let len = lens[i % lens.len()];
                let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(5..280)).collect();
                ids.resize(total, TokenizerModel::PAD);
                TokenSequence {
                    ids,
                    content_len: len,
                }
            })
            .collect()
    }

    #[test]
    fn features_have_one_row_per_item_and_validate_layer() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 3);
        let seqs = random_seqs(7, &[6, 9, 12], 12, 1);
        for layer in 0..=cfg.layers {
            let f = extract_features(&cfg, &params, &seqs, layer).unwrap();
            assert_eq!(f.nrows(), 7);
            assert_eq!(f.ncols(), cfg.hidden);
        }
        assert!(extract_features(&cfg, &params, &seqs, cfg.layers + 1).is_err());
        assert!(extract_features(&cfg, &params, &[], 0).is_err());
    }

    #[test]
    fn final_layer_features_match_trace_pooling() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 6);
        let seqs = random_seqs(4, &[8, 10], 12, 2);
        let f = extract_features(&cfg, &params, &seqs, cfg.layers).unwrap();
        for (i, seq) in seqs.iter().enumerate() {
            let mask = seq.pad_mask();
            let trace = forward(&cfg, &params, &seq.ids, &mask).unwrap();
            let expect = pool(trace.hidden_states.last().unwrap(), &mask).unwrap();
            for j in 0..cfg.hidden {
                assert!((f[[i, j]] - expect[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_sweep_shape_determinism_and_length_signal() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 11);
        // binary long-vs-short task; mean pooling over different counts of
        // position embeddings makes length linearly visible even untrained
        let seqs = random_seqs(400, &[4, 12], 14, 7);
        let labels: Vec<usize> = seqs.iter().map(|s| (s.content_len > 8) as usize).collect();

        let dir = tempfile::tempdir().unwrap();
        let curve = layer_sweep(
            &cfg,
            &params,
            &seqs,
            &labels,
            ProbeTask::Typ,
            19,
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(curve.len(), cfg.layers + 1);

        let again = layer_sweep(&cfg, &params, &seqs, &labels, ProbeTask::Typ, 19, None).unwrap();
        assert_eq!(curve, again);

        let n_test = 400 - 320;
        let sigma = (0.25 / n_test as f64).sqrt();
        let best = curve.iter().map(|r| r.test_acc).fold(0.0, f64::max);
        assert!(
            best - 0.5 >= 5.0 * sigma,
            "no layer separates length: best {best}, sigma {sigma}"
        );

        assert!(dir.path().join("probe_typ.csv").exists());
        assert!(dir.path().join("probe_typ.svg").exists());
        let csv = std::fs::read_to_string(dir.path().join("probe_typ.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + cfg.layers + 1);
    }

    #[test]
    fn final_layer_sweep_entry_matches_standalone_probe() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, 13);
        let seqs = random_seqs(60, &[5, 11], 12, 3);
        let labels: Vec<usize> = seqs.iter().map(|s| (s.content_len > 8) as usize).collect();
        let seed = 23;
        let curve = layer_sweep(&cfg, &params, &seqs, &labels, ProbeTask::Typ, seed, None).unwrap();

        let features = extract_features(&cfg, &params, &seqs, cfg.layers).unwrap();
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut seeds::rng(seed, &[tags::PROBE, tags::SPLIT]));
        let (train_idx, test_idx) = order.split_at((seqs.len() * 8) / 10);
        let gather = |idx: &[usize]| {
            let mut f = Array2::zeros((idx.len(), features.ncols()));
            let mut l = Vec::new();
            for (row, &src) in idx.iter().enumerate() {
                f.row_mut(row).assign(&features.row(src));
                l.push(labels[src]);
            }
            (f, l)
        };
        let (f_train, l_train) = gather(train_idx);
        let (f_test, l_test) = gather(test_idx);
        let probe = train_probe(&f_train, &l_train, 2, seed).unwrap();
        let test_acc = probe_accuracy(&probe, &f_test, &l_test).unwrap();
        assert_eq!(curve.last().unwrap().test_acc, test_acc);
    }

    fn len_corpus() -> (Corpus, TokenizerModel) {
        let docs: Vec<Document> = (0..250u64)
            .map(|i| Document {
                id: i,
                language: "synthetic".into(),
                // raw bytes tokenize 1:1 with an empty merge list
                content: "x".repeat(10 + (i as usize % 5) * 55),
                // lengths: 10, 65, 120, 175, 230 -> classes 0..4
            })
            .collect();
        let corpus = Corpus {
            documents: docs,
            provenance: "test".into(),
            seed: 0,
        };
        let tok = TokenizerModel::from_merges(Vec::new()).unwrap();
        (corpus, tok)
    }

    #[test]
    fn len_labels_follow_half_open_bins_and_balance() {
        let (corpus, tok) = len_corpus();
        let ds = gen_len_labels(&corpus, &tok, &DEFAULT_LEN_EDGES).unwrap();
        assert_eq!(ds.task, ProbeTask::Len);
        let counts = ds.class_counts();
        assert_eq!(counts, vec![50; 5]);
        assert!(ds.imbalance() <= 0.01);

        // boundary rule: 40 tokens -> class 0, exactly 50 -> class 1
        for (len, want) in [(40usize, 0usize), (50, 1), (99, 1), (100, 2), (230, 4)] {
            let one = Corpus {
                documents: vec![Document {
                    id: 0,
                    language: "synthetic".into(),
                    content: "y".repeat(len),
                }],
                provenance: "test".into(),
                seed: 0,
            };
            let items: Vec<ProbeItem> = one
                .documents
                .iter()
                .map(|d| {
                    let tokens = tok.encode(&d.content, false).len();
                    ProbeItem {
                        content: d.content.clone(),
                        label: DEFAULT_LEN_EDGES.iter().filter(|&&e| tokens >= e).count(),
                    }
                })
                .collect();
            assert_eq!(items[0].label, want, "len {len}");
        }
    }

    #[test]
    fn len_labels_require_all_bins() {
        let (mut corpus, tok) = len_corpus();
        corpus.documents.retain(|d| d.content.len() < 100);
        let err = gen_len_labels(&corpus, &tok, &DEFAULT_LEN_EDGES).unwrap_err();
        assert!(err.to_string().contains("bins"), "{err}");
    }

    #[test]
    fn typ_labels_corrupt_exactly_one_keyword_site() {
        let corpus = synth_generate("expr", 40, 7).unwrap();
        let keywords = ["int", "float", "bool", "char", "str"];
        let ds = gen_typ_labels(&corpus, &keywords, 0.5, 3).unwrap();
        assert_eq!(ds.task, ProbeTask::Typ);
        let counts = ds.class_counts();
        assert_eq!(counts[0] + counts[1], ds.items.len());
        assert!(ds.imbalance() <= 0.05, "counts {counts:?}");

        let originals: std::collections::HashSet<&str> = corpus
            .documents
            .iter()
            .map(|d| d.content.as_str())
            .collect();
        for item in &ds.items {
            let total_sites = |text: &str| -> usize {
                keywords.iter().map(|k| text.match_indices(k).count()).sum()
            };
            if item.label == 0 {
                assert!(originals.contains(item.content.as_str()));
            } else {
                assert!(!originals.contains(item.content.as_str()));
                // exactly one keyword occurrence was destroyed
                let src = corpus
                    .documents
                    .iter()
                    .map(|d| &d.content)
                    .find(|c| c.len() == item.content.len() && {
                        let diff = c
                            .bytes()
                            .zip(item.content.bytes())
                            .filter(|(a, b)| a != b)
                            .count();
                        diff == 1
                    })
                    .expect("corrupted item differs from its source by one byte");
                assert_eq!(total_sites(src), total_sites(&item.content) + 1);
            }
        }
    }

    #[test]
    fn typ_labels_split_evenly_at_scale() {
        let corpus = synth_generate("expr", 1000, 11).unwrap();
        let keywords = ["int", "float", "bool", "char", "str"];
        let ds = gen_typ_labels(&corpus, &keywords, 0.5, 5).unwrap();
        let counts = ds.class_counts();
        assert_eq!(counts, vec![500, 500]);
    }

    #[test]
    fn label_files_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cpx.jsonl");
        let ds = ProbeDataset {
            task: ProbeTask::Cpx,
            items: (0..20)
                .map(|i| ProbeItem {
                    content: format!("fn f{i}() {{}}"),
                    label: i % 10,
                })
                .collect(),
        };
        save_label_file(&path, &ds).unwrap();
        let back = load_label_file(&path, ProbeTask::Cpx, 0.01).unwrap();
        assert_eq!(back.items, ds.items);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"content\": \"x\", \"label\": 25}\n").unwrap();
        assert!(load_label_file(&bad, ProbeTask::Cpx, 0.5).is_err());

        let skewed = dir.path().join("skew.jsonl");
        let mut body = String::new();
        for i in 0..9 {
            body.push_str(&format!("{{\"content\": \"a{i}\", \"label\": 0}}\n"));
        }
        body.push_str("{\"content\": \"b\", \"label\": 1}\n");
        std::fs::write(&skewed, body).unwrap();
        assert!(load_label_file(&skewed, ProbeTask::Typ, 0.05).is_err());
        assert!(load_label_file(&skewed, ProbeTask::Typ, 0.95).is_ok());
    }
}
