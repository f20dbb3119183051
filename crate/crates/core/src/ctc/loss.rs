use super::{check_log_probs, log_add, BLANK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Forward and backward tables over the blank-interleaved label lattice.
///
/// State `s` of the expanded sequence is blank for even `s` and target label
/// `s / 2` for odd `s`. `alpha[t][s]` includes the emission at `t`;
/// `beta[t][s]` covers frames `t + 1..T` only, so `alpha + beta` is the
/// log-mass of all alignments passing through `s` at `t`.
#[derive(Clone, Debug)]
pub struct CtcLattice {
    expanded: Vec<usize>,
    frames: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// Minimum number of frames able to emit `target`: one per label plus a
/// separating blank between each adjacent repeated pair.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

impl CtcLattice {
    pub fn build(log_probs: &Tensor, target: &[usize]) -> Result<Self> {
        check_log_probs(log_probs)?;
        let size = log_probs.cols();
        if let Some(&bad) = target.iter().find(|&&c| c == BLANK || c >= size) {
            return Err(Error::LabelOutOfRange { label: bad, size });
        }
        let frames = log_probs.rows();
        let required = required_frames(target);
        if frames < required {
            return Err(Error::CtcInfeasible {
                target_len: target.len(),
                frames,
                required,
            });
        }

        let mut expanded = Vec::with_capacity(2 * target.len() + 1);
        expanded.push(BLANK);
        for &c in target {
            expanded.push(c);
            expanded.push(BLANK);
        }
        let states = expanded.len();
        let lp = |t: usize, s: usize| log_probs.at(t, expanded[s]);
        let skip_ok = |s: usize| s >= 2 && expanded[s] != BLANK && expanded[s] != expanded[s - 2];

        let mut alpha = vec![f64::NEG_INFINITY; frames * states];
        alpha[0] = lp(0, 0);
        if states > 1 {
            alpha[1] = lp(0, 1);
        }
        for t in 1..frames {
            let (prev, cur) = alpha.split_at_mut(t * states);
            let prev = &prev[(t - 1) * states..];
            for s in 0..states {
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if skip_ok(s) {
                    acc = log_add(acc, prev[s - 2]);
                }
                cur[s] = acc + lp(t, s);
            }
        }

        let mut beta = vec![f64::NEG_INFINITY; frames * states];
        let last = (frames - 1) * states;
        beta[last + states - 1] = 0.0;
        if states > 1 {
            beta[last + states - 2] = 0.0;
        }
        for t in (0..frames - 1).rev() {
            for s in 0..states {
                let next = (t + 1) * states;
                let mut acc = beta[next + s] + lp(t + 1, s);
                if s + 1 < states {
                    acc = log_add(acc, beta[next + s + 1] + lp(t + 1, s + 1));
                }
                if s + 2 < states && skip_ok(s + 2) {
                    acc = log_add(acc, beta[next + s + 2] + lp(t + 1, s + 2));
                }
                beta[t * states + s] = acc;
            }
        }

        Ok(CtcLattice {
            expanded,
            frames,
            alpha,
            beta,
        })
    }

    pub fn expanded(&self) -> &[usize] {
        &self.expanded
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn states(&self) -> usize {
        self.expanded.len()
    }

    pub fn alpha(&self, t: usize, s: usize) -> f64 {
        self.alpha[t * self.states() + s]
    }

    pub fn beta(&self, t: usize, s: usize) -> f64 {
        self.beta[t * self.states() + s]
    }

    /// `log p(C|X)` from the alpha termination.
    pub fn forward_log_likelihood(&self) -> f64 {
        let s = self.states();
        let end = self.alpha(self.frames - 1, s - 1);
        if s > 1 {
            log_add(end, self.alpha(self.frames - 1, s - 2))
        } else {
            end
        }
    }

    /// `log p(C|X)` from the beta initialisation at the first frame.
    pub fn backward_log_likelihood(&self, log_probs: &Tensor) -> f64 {
        let mut total = self.beta(0, 0) + log_probs.at(0, self.expanded[0]);
        if self.states() > 1 {
            total = log_add(total, self.beta(0, 1) + log_probs.at(0, self.expanded[1]));
        }
        total
    }

    /// Posterior occupancy of each lattice state at frame `t`.
    pub fn occupancy(&self, t: usize) -> Vec<f64> {
        let total = self.forward_log_likelihood();
        (0..self.states())
            .map(|s| (self.alpha(t, s) + self.beta(t, s) - total).exp())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `−log p(C|X)`
    pub nll: f64,
    /// Gradient of `nll` with respect to every entry of the log-probability matrix.
    pub grad: Tensor,
}

/// Negative log-likelihood of `target` (labels in `1..V+1`, blank is `0`)
/// under the per-frame log-probabilities `log_probs: [T, V+1]`.
pub fn ctc_loss(log_probs: &Tensor, target: &[usize]) -> Result<CtcLoss> {
    let lattice = CtcLattice::build(log_probs, target)?;
    let total = lattice.forward_log_likelihood();
    if !total.is_finite() {
        return Err(Error::CtcInfeasible {
            target_len: target.len(),
            frames: log_probs.rows(),
            required: required_frames(target),
        });
    }
    let cols = log_probs.cols();
    let mut grad = Tensor::zeros(log_probs.shape());
    let g = grad.data_mut();
    for t in 0..lattice.frames() {
        for (s, &label) in lattice.expanded().iter().enumerate() {
            let mass = lattice.alpha(t, s) + lattice.beta(t, s) - total;
            if mass > f64::NEG_INFINITY {
                g[t * cols + label] -= mass.exp();
            }
        }
    }
    Ok(CtcLoss { nll: -total, grad })
}
