//! Connectionist temporal classification: the forward-backward loss over the
//! blank-augmented lattice and prefix scoring for joint decoding.
//!
//! Label `0` is the blank; target labels are `1..V+1`, matching the columns
//! of a `[T, V+1]` log-probability matrix.

mod loss;
mod prefix;

pub use loss::{ctc_loss, required_frames, CtcLattice, CtcLoss};
pub use prefix::{ctc_prefix_score, PrefixScoreState};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const BLANK: usize = 0;

/// `log(exp(a) + exp(b))`, exact for `-inf` operands.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn check_log_probs(log_probs: &Tensor) -> Result<()> {
    if log_probs.shape().len() != 2 || log_probs.cols() < 2 {
        return Err(Error::Dimension(format!(
            "CTC expects a [T, V+1] matrix with V >= 1, got {:?}",
            log_probs.shape()
        )));
    }
    Ok(())
}

/// CTC negative log-likelihood as a graph node differentiable with respect
/// to the log-probability node.
pub fn ctc_loss_node(g: &mut Graph, log_probs: NodeId, target: &[usize]) -> Result<NodeId> {
    let loss = ctc_loss(g.value(log_probs), target)?;
    g.scalar_fn(log_probs, loss.nll, loss.grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(log_add(-1.0, f64::NEG_INFINITY), -1.0);
        assert!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY).is_infinite());
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
