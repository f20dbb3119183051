//! Joint CTC-attention beam search, greedy CTC decoding and %CER scoring.

mod beam;
mod score;

pub use beam::{beam_search, BeamConfig, Decoded, Hypothesis};
pub use score::{
    cer, edit_distance, out_of_charset_rate, read_hyps, write_hyps, CorpusScore, UtteranceScore,
};

use crate::autodiff::Tensor;
use crate::ctc::BLANK;
use crate::error::Result;
use crate::model::Seq2SeqModel;

/// Collapses repeated labels and drops blanks.
pub fn collapse_ctc(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in path {
        if Some(l) != prev && l != BLANK {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Per-frame argmax of the CTC head, collapsed. Ties go to the lower id.
pub fn greedy_ctc(model: &Seq2SeqModel, features: &Tensor) -> Result<Vec<usize>> {
    let enc = model.encode(features)?;
    let lp = model.ctc_log_probs(&enc)?;
    let path: Vec<usize> = (0..lp.rows())
        .map(|t| {
            let row = lp.row(t);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(collapse_ctc(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse_ctc(&[1, 1, 0, 2]), vec![1, 2]);
        assert_eq!(collapse_ctc(&[0, 0, 0]), Vec::<usize>::new());
        assert_eq!(collapse_ctc(&[1, 0, 1]), vec![1, 1]);
        assert_eq!(collapse_ctc(&[]), Vec::<usize>::new());
    }
}
