//! Incremental CTC prefix probabilities for label-synchronous search.

use super::{check_log_probs, log_add, BLANK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-frame forward variables of one prefix `g`.
///
/// `nonblank[t]` is the log-probability that frames `0..=t` emit exactly `g`
/// with frame `t` on the last label of `g`; `blank[t]` the same with frame `t`
/// on a blank.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixScoreState {
    nonblank: Vec<f64>,
    blank: Vec<f64>,
    last: Option<usize>,
    log_prefix: f64,
}

impl PrefixScoreState {
    /// State of the empty prefix.
    pub fn initial(log_probs: &Tensor) -> Result<Self> {
        check_log_probs(log_probs)?;
        let frames = log_probs.rows();
        let mut blank = Vec::with_capacity(frames);
        let mut acc = 0.0;
        for t in 0..frames {
            acc += log_probs.at(t, BLANK);
            blank.push(acc);
        }
        Ok(PrefixScoreState {
            nonblank: vec![f64::NEG_INFINITY; frames],
            blank,
            last: None,
            log_prefix: 0.0,
        })
    }

    /// `log` of the total probability of all label sequences starting with this prefix.
    pub fn log_prefix_prob(&self) -> f64 {
        self.log_prefix
    }

    /// `log p_ctc(g|X)` treating the prefix as a complete sequence.
    pub fn log_sequence_prob(&self) -> f64 {
        let t = self.blank.len() - 1;
        log_add(self.nonblank[t], self.blank[t])
    }

    pub fn last_label(&self) -> Option<usize> {
        self.last
    }

    /// Extends the prefix by `label`, returning the log prefix-probability
    /// ratio `log p(g·label…) − log p(g…)` and the extended state.
    pub fn extend(&self, label: usize, log_probs: &Tensor) -> Result<(f64, Self)> {
        let size = log_probs.cols();
        if label == BLANK || label >= size {
            return Err(Error::LabelOutOfRange { label, size });
        }
        let frames = log_probs.rows();
        if frames != self.blank.len() {
            return Err(Error::Dimension(format!(
                "prefix state over {} frames used with {frames} frames",
                self.blank.len()
            )));
        }
        let mut nonblank = vec![f64::NEG_INFINITY; frames];
        let mut blank = vec![f64::NEG_INFINITY; frames];
        if self.last.is_none() {
            nonblank[0] = log_probs.at(0, label);
        }
        let mut psi = nonblank[0];
        for t in 1..frames {
            let phi = if self.last == Some(label) {
                self.blank[t - 1]
            } else {
                log_add(self.blank[t - 1], self.nonblank[t - 1])
            };
            let emit = log_probs.at(t, label);
            nonblank[t] = log_add(nonblank[t - 1], phi) + emit;
            blank[t] = log_add(blank[t - 1], nonblank[t - 1]) + log_probs.at(t, BLANK);
            psi = log_add(psi, phi + emit);
        }
        let next = PrefixScoreState {
            nonblank,
            blank,
            last: Some(label),
            log_prefix: psi,
        };
        let ratio = if psi == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            psi - self.log_prefix
        };
        Ok((ratio, next))
    }
}

/// Functional form of [`PrefixScoreState::extend`].
pub fn ctc_prefix_score(
    state: &PrefixScoreState,
    next_label: usize,
    log_probs: &Tensor,
) -> Result<(f64, PrefixScoreState)> {
    state.extend(next_label, log_probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::ctc_loss;

    #[test]
    fn single_frame_extension() {
        let lp = Tensor::matrix(1, 3, vec![-1.2, -0.6, -1.7]).unwrap();
        let s0 = PrefixScoreState::initial(&lp).unwrap();
        let (inc, s1) = s0.extend(2, &lp).unwrap();
        assert_eq!(inc, -1.7);
        assert_eq!(s1.log_prefix_prob(), -1.7);
    }

    #[test]
    fn sequence_prob_matches_loss_and_is_dominated() {
        let lp = Tensor::matrix(
            4,
            3,
            vec![
                -0.9, -1.1, -1.4, -1.5, -0.7, -1.2, -1.0, -1.3, -1.0, -0.8, -1.6, -1.0,
            ],
        )
        .unwrap();
        let mut st = PrefixScoreState::initial(&lp).unwrap();
        for &c in &[1, 1] {
            st = st.extend(c, &lp).unwrap().1;
        }
        let nll = ctc_loss(&lp, &[1, 1]).unwrap().nll;
        assert!((st.log_sequence_prob() + nll).abs() < 1e-12);
        assert!(st.log_prefix_prob() >= st.log_sequence_prob());
    }

    #[test]
    fn rejects_blank_and_out_of_range() {
        let lp = Tensor::full(&[2, 3], -(3f64).ln());
        let s = PrefixScoreState::initial(&lp).unwrap();
        assert!(s.extend(0, &lp).is_err());
        assert!(s.extend(3, &lp).is_err());
    }
}
