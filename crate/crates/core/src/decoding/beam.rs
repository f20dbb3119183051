use std::cmp::Ordering;

use crate::autodiff::{Graph, Tensor};
use crate::ctc::PrefixScoreState;
use crate::error::{Error, Result};
use crate::model::{
    attend, decode_step, initial_attention, AttentionMemory, DecoderState, Seq2SeqModel, SPECIAL,
};

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    /// CTC weight `α` of the joint score.
    pub alpha: f64,
    /// Longest output in characters; `None` caps it at the frame count.
    pub max_len: Option<usize>,
    /// When set, only these character ids may be emitted.
    pub charset_mask: Option<Vec<usize>>,
    /// Added per output character when ranking finished hypotheses.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 4,
            alpha: 0.5,
            max_len: None,
            charset_mask: None,
            length_penalty: 0.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `α·ctc + (1 − α)·att`, dropping a zero-weighted term so that an
    /// infinite score on the unused side cannot turn into NaN.
    pub fn combine(&self, ctc: f64, att: f64) -> f64 {
        if self.alpha == 0.0 {
            att
        } else if self.alpha == 1.0 {
            ctc
        } else {
            self.alpha * ctc + (1.0 - self.alpha) * att
        }
    }
}

/// A live or finished search state.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub att_score: f64,
    /// Prefix probability while live, full-sequence probability once finished.
    pub ctc_score: f64,
    pub score: f64,
    pub ctc_state: PrefixScoreState,
    pub q: Tensor,
    pub cell: Tensor,
    pub attention: Tensor,
}

/// A finished hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub labels: Vec<usize>,
    pub text: String,
    pub score: f64,
    pub att_score: f64,
    pub ctc_score: f64,
}

/// Descending score, then ascending label sequence.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

struct Scorer<'a> {
    model: &'a Seq2SeqModel,
    h: Tensor,
    h_proj: Tensor,
}

impl Scorer<'_> {
    /// Attention then one decoder step: log-probabilities over `V + 1`
    /// outputs, new weights and new state.
    fn step(&self, hyp: &Hypothesis) -> Result<(Vec<f64>, Tensor, Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.model.graph_params(&mut g);
        let mem = AttentionMemory {
            h: g.input(self.h.clone()),
            h_proj: g.input(self.h_proj.clone()),
            frames: self.h.rows(),
        };
        let a_prev = g.input(hyp.attention.clone());
        let state = DecoderState {
            q: g.input(hyp.q.clone()),
            cell: g.input(hyp.cell.clone()),
        };
        let (a, r) = attend(&mut g, &p, &mem, a_prev, state.q)?;
        let prev = hyp.labels.last().copied().unwrap_or(SPECIAL);
        let (logp, next) = decode_step(&mut g, &p, r, state, prev)?;
        Ok((
            g.value(logp).data().to_vec(),
            g.value(a).clone(),
            g.value(next.q).clone(),
            g.value(next.cell).clone(),
        ))
    }
}

/// Label-synchronous beam search over `α log p_ctc + (1 − α) log p_att`.
///
/// Each step expands every live prefix by every allowed character and by
/// end-of-sequence. End-of-sequence moves the prefix to the finished pool
/// with its full-sequence CTC score; the best `width` extended prefixes stay
/// live. Search stops once `width` finished hypotheses outscore every live
/// prefix (scores only decrease under extension) or at `max_len`.
pub fn beam_search(
    model: &Seq2SeqModel,
    features: &Tensor,
    cfg: &BeamConfig,
) -> Result<Vec<Decoded>> {
    cfg.validate()?;
    if features.shape().len() != 2 || features.cols() != model.config.input_dim {
        return Err(Error::Dimension(format!(
            "model expects [T, {}] features, got {:?}",
            model.config.input_dim,
            features.shape()
        )));
    }
    let enc = model.encode(features)?;
    let ctc_lp = model.ctc_log_probs(&enc)?;
    let h_proj = {
        let mut g = Graph::new();
        let p = model.graph_params(&mut g);
        let h = g.input(enc.h.clone());
        let hp = g.affine(h, p.get("att.w_h")?, None)?;
        g.value(hp).clone()
    };
    let scorer = Scorer {
        model,
        h: enc.h.clone(),
        h_proj,
    };
    let frames = enc.frames();
    let max_len = cfg.max_len.unwrap_or(frames);
    let allowed: Vec<usize> = match &cfg.charset_mask {
        Some(mask) => {
            let mut m: Vec<usize> = mask
                .iter()
                .copied()
                .filter(|&l| l != SPECIAL && l < model.vocab.width())
                .collect();
            m.sort_unstable();
            m.dedup();
            m
        }
        None => (1..model.vocab.width()).collect(),
    };
    let hidden = model.config.decoder_hidden;

    let mut live = vec![Hypothesis {
        labels: Vec::new(),
        att_score: 0.0,
        ctc_score: 0.0,
        score: 0.0,
        ctc_state: PrefixScoreState::initial(&ctc_lp)?,
        q: Tensor::zeros(&[hidden]),
        cell: Tensor::zeros(&[hidden]),
        attention: initial_attention(frames),
    }];
    let mut finished: Vec<(f64, Decoded)> = Vec::new();
    let ranking = |d: &Decoded| d.score + cfg.length_penalty * d.labels.len() as f64;

    for len in 0..=max_len {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let (logp, a, q, cell) = scorer.step(hyp)?;
            let att = hyp.att_score + logp[SPECIAL];
            let ctc = hyp.ctc_state.log_sequence_prob();
            let done = Decoded {
                text: model.vocab.decode(&hyp.labels)?,
                labels: hyp.labels.clone(),
                score: cfg.combine(ctc, att),
                att_score: att,
                ctc_score: ctc,
            };
            finished.push((ranking(&done), done));
            if len == max_len {
                continue;
            }
            for &label in &allowed {
                let att = hyp.att_score + logp[label];
                let (ctc, state) = if cfg.alpha > 0.0 {
                    let (_, s) = hyp.ctc_state.extend(label, &ctc_lp)?;
                    (s.log_prefix_prob(), s)
                } else {
                    (0.0, hyp.ctc_state.clone())
                };
                let mut labels = hyp.labels.clone();
                labels.push(label);
                candidates.push(Hypothesis {
                    labels,
                    att_score: att,
                    ctc_score: ctc,
                    score: cfg.combine(ctc, att),
                    ctc_state: state,
                    q: q.clone(),
                    cell: cell.clone(),
                    attention: a.clone(),
                });
            }
        }
        candidates.sort_by(|x, y| rank(x.score, &x.labels, y.score, &y.labels));
        candidates.truncate(cfg.width);
        live = candidates;
        if live.is_empty() {
            break;
        }
        if cfg.length_penalty <= 0.0 && finished.len() >= cfg.width {
            finished.sort_by(|x, y| rank(x.0, &x.1.labels, y.0, &y.1.labels));
            let best_live = live[0].score;
            if finished[cfg.width - 1].0 >= best_live {
                break;
            }
        }
    }
    finished.sort_by(|x, y| rank(x.0, &x.1.labels, y.0, &y.1.labels));
    Ok(finished.into_iter().map(|(_, d)| d).collect())
}
