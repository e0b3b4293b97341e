//! Masked-token cross-entropy on a forward trace.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::model::ForwardTrace;

use super::mask::MaskedSequence;

/// Mean over masked positions of -log p(target). The mean (rather than the
/// raw sum) keeps values comparable across test sets of different sizes.
pub fn mlm_loss(trace: &ForwardTrace, masked: &MaskedSequence) -> Result<f64> {
    Ok(mlm_loss_sum(trace, masked)? / masked.masked_positions.len() as f64)
}

/// Summed form of [`mlm_loss`], the objective as written.
pub fn mlm_loss_sum(trace: &ForwardTrace, masked: &MaskedSequence) -> Result<f64> {
    if masked.masked_positions.is_empty() {
        return Err(Error::input("loss undefined for an empty mask set"));
    }
    let mut total = 0.0;
    for (&pos, &tgt) in masked.masked_positions.iter().zip(&masked.targets) {
        if pos >= trace.logits.nrows() {
            return Err(Error::input(format!("masked position {pos} out of range")));
        }
        if tgt as usize >= trace.logits.ncols() {
            return Err(Error::input(format!("target {tgt} outside vocab")));
        }
        let row = trace.logits.index_axis(Axis(0), pos);
        // log softmax via the max-shifted log-sum-exp
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[tgt as usize];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn masked(positions: Vec<usize>, targets: Vec<u32>, len: usize) -> MaskedSequence {
        MaskedSequence {
            input_ids: vec![0; len],
            targets,
            masked_positions: positions,
            pad_mask: vec![true; len],
        }
    }

    fn trace(logits: Array2<f64>) -> ForwardTrace {
        ForwardTrace {
            logits,
            hidden_states: Vec::new(),
        }
    }

    #[test]
    fn uniform_logits_give_ln_vocab() {
        for v in [7usize, 64, 5000] {
            let t = trace(Array2::from_elem((3, v), 1.234));
            let m = masked(vec![0, 2], vec![3, 1], 3);
            let loss = mlm_loss(&t, &m).unwrap();
            assert!(
                (loss - (v as f64).ln()).abs() < 1e-9,
                "vocab {v}: {loss} vs {}",
                (v as f64).ln()
            );
        }
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [2.0, 8.0, 40.0] {
            let mut logits = Array2::zeros((1, 10));
            logits[[0, 4]] = margin;
            let m = masked(vec![0], vec![4], 1);
            let loss = mlm_loss(&trace(logits), &m).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-13);
    }

    /// Straight-line recomputation with explicit exp sums, no shared helper.
    #[test]
    fn matches_independent_log_sum_exp_computation() {
        let logits = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.37 - 1.1);
        let m = masked(vec![1, 3], vec![5, 0], 4);
        let got = mlm_loss(&trace(logits.clone()), &m).unwrap();

        let mut expect = 0.0;
        for (&pos, &tgt) in m.masked_positions.iter().zip(&m.targets) {
            let mut denom = 0.0;
            for j in 0..6 {
                denom += logits[[pos, j]].exp();
            }
            let p = logits[[pos, tgt as usize]].exp() / denom;
            expect += -p.ln();
        }
        expect /= 2.0;
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn sum_is_mean_times_count() {
        let logits = Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - j as f64) * 0.21);
        let m = masked(vec![0, 2, 4], vec![1, 7, 3], 5);
        let t = trace(logits);
        let mean = mlm_loss(&t, &m).unwrap();
        let sum = mlm_loss_sum(&t, &m).unwrap();
        assert!((sum - 3.0 * mean).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_set_is_an_error() {
        let t = trace(Array2::zeros((2, 4)));
        let m = masked(vec![], vec![], 2);
        assert!(mlm_loss(&t, &m).is_err());
    }
}
