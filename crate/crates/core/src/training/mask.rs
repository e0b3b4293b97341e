//! The "mask then predict" input corruption.

use rand::Rng;

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::seeds::{self, tags};
use crate::tokenizer::TokenizerModel;

/// One masked training example. Targets run parallel to `masked_positions`,
/// which stay sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<u32>,
    pub targets: Vec<u32>,
    pub masked_positions: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

/// A batch is processed sequences in order; gradients average per sequence.
pub type MaskedBatch = Vec<MaskedSequence>;

/// How many whole-sequence Bernoulli redraws to try before falling back to
/// forcing a single uniform position. At practical rates the fallback never
/// fires; it exists so tiny rates terminate instead of looping.
const RESAMPLE_ATTEMPTS: usize = 16;

/// Mask each maskable position independently with probability `mask_rate`
/// (replacing it with [MASK]), guaranteeing at least one masked position.
/// Maskable means non-pad and not a special token.
pub fn apply_mask(seq: &TokenSequence, mask_rate: f64, seed: u64) -> Result<MaskedSequence> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::input(format!(
            "mask_rate {mask_rate} outside (0, 1)"
        )));
    }
    let maskable: Vec<usize> = (0..seq.content_len.min(seq.ids.len()))
        .filter(|&i| seq.ids[i] >= TokenizerModel::BYTE_BASE)
        .collect();
    if maskable.is_empty() {
        return Err(Error::input("sequence has no maskable tokens"));
    }

    let mut rng = seeds::rng(seed, &[tags::MASK]);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..RESAMPLE_ATTEMPTS {
        chosen = maskable
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(mask_rate))
            .collect();
        if !chosen.is_empty() {
            break;
        }
    }
    if chosen.is_empty() {
        chosen = vec![maskable[rng.gen_range(0..maskable.len())]];
    }

    let mut input_ids = seq.ids.clone();
    let mut targets = Vec::with_capacity(chosen.len());
    for &pos in &chosen {
        targets.push(seq.ids[pos]);
        input_ids[pos] = TokenizerModel::MASK;
    }
    Ok(MaskedSequence {
        input_ids,
        targets,
        masked_positions: chosen,
        pad_mask: seq.pad_mask(),
    })
}
