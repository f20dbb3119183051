//! Joint CTC-attention training and the multilingual regimes built on it:
//! pooled training, target-language fine-tuning and output-layer transfer.
//!
//! The per-utterance objective is `−(λ log p_ctc + (1 − λ) log p_att)`,
//! optimised by plain SGD (batch size 1) with global-norm gradient clipping.

mod transfer;

pub use transfer::{language_transfer, TransferOutcome, TransferPlan, TransferVariant};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, NodeId, ParamNodes};
use crate::config::KeyValues;
use crate::ctc::ctc_loss_node;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{attention_log_likelihood, ctc_head, encode, ModelConfig, Seq2SeqModel};

#[derive(Clone, Debug, PartialEq)]
pub struct MtlConfig {
    /// CTC weight `λ`.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    /// Seeds the per-epoch utterance shuffle.
    pub seed: u64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig {
            lambda: 0.5,
            learning_rate: 0.2,
            clip_norm: 5.0,
            epochs: 15,
            seed: 0,
        }
    }
}

impl MtlConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.learning_rate > 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and clip_norm non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = MtlConfig::default();
        let cfg = MtlConfig {
            lambda: kv.get_or("lambda", d.lambda)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Negated interpolated log-likelihood, `−(λ log p_ctc + (1 − λ) log p_att)`.
pub fn mtl_loss(log_p_ctc: f64, log_p_att: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(-(lambda * log_p_ctc + (1.0 - lambda) * log_p_att))
}

/// One training example. The transcript is encoded against the model
/// vocabulary at training time.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub language: String,
    pub features: FeatureSequence,
    pub transcript: String,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.features.id
    }
}

/// Graph nodes of one utterance's objective.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub loss: NodeId,
    pub ctc_nll: NodeId,
    pub att_nll: NodeId,
}

/// Builds the interpolated loss for one utterance. With `λ = 1` the
/// attention branch is still evaluated but weighted by zero, and likewise
/// for the CTC branch at `λ = 0`.
pub fn utterance_loss(
    g: &mut Graph,
    p: &ParamNodes,
    cfg: &ModelConfig,
    x: NodeId,
    target: &[usize],
    lambda: f64,
) -> Result<LossNodes> {
    check_lambda(lambda)?;
    let h = encode(g, p, cfg, x)?;
    let lp = ctc_head(g, p, h)?;
    let ctc_nll = ctc_loss_node(g, lp, target)?;
    let att_ll = attention_log_likelihood(g, p, cfg, h, target)?;
    let att_nll = g.scale(att_ll, -1.0)?;
    let a = g.scale(ctc_nll, lambda)?;
    let b = g.scale(att_nll, 1.0 - lambda)?;
    let loss = g.add(a, b)?;
    Ok(LossNodes {
        loss,
        ctc_nll,
        att_nll,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ctc_term: f64,
    pub mean_att_term: f64,
}

/// Per-epoch means of the loss and its two negative log-likelihood terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochStats>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,mean_ctc_term,mean_att_term\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{},{},{}",
                e.epoch, e.mean_loss, e.mean_ctc_term, e.mean_att_term
            )
            .unwrap();
        }
        s
    }

    pub fn extend(&mut self, other: LossTrace) {
        let offset = self.epochs.len();
        self.epochs.extend(other.epochs.into_iter().map(|mut e| {
            e.epoch += offset;
            e
        }));
    }

    pub fn first(&self) -> Option<&EpochStats> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

fn encode_targets(model: &Seq2SeqModel, corpus: &[Utterance]) -> Result<Vec<Vec<usize>>> {
    corpus
        .iter()
        .map(|u| {
            u.features
                .expect_dim(model.config.input_dim, "model input")?;
            model.vocab.encode(&u.transcript, u.id())
        })
        .collect()
}

fn clip(grads: &mut Gradients, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grads.global_norm();
        if norm > max_norm {
            grads.scale(max_norm / norm);
        }
    }
}

/// Core SGD loop. Only tensors for which `trainable` holds are registered as
/// differentiable, so every other tensor is untouched. `on_step` runs after
/// each update with the running step count.
pub fn train_with(
    model: &mut Seq2SeqModel,
    corpus: &[Utterance],
    cfg: &MtlConfig,
    trainable: impl Fn(&str) -> bool,
    mut on_step: impl FnMut(usize, &Seq2SeqModel),
) -> Result<LossTrace> {
    cfg.validate()?;
    let targets = encode_targets(model, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = LossTrace::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut ctc, mut att) = (0.0, 0.0, 0.0);
        for &i in &order {
            let mut g = Graph::new();
            let p = model.params.register(&mut g, &trainable);
            let x = g.input(corpus[i].features.frames.clone());
            let nodes = utterance_loss(&mut g, &p, &model.config, x, &targets[i], cfg.lambda)?;
            loss += g.value(nodes.loss).item();
            ctc += g.value(nodes.ctc_nll).item();
            att += g.value(nodes.att_nll).item();
            let mut grads = g.backward(nodes.loss)?;
            clip(&mut grads, cfg.clip_norm);
            for (name, grad) in grads.iter() {
                let t = model.params.get_mut(name).expect("registered parameter");
                for (v, d) in t.data_mut().iter_mut().zip(grad.data()) {
                    *v -= cfg.learning_rate * d;
                }
            }
            step += 1;
            on_step(step, model);
        }
        let n = corpus.len().max(1) as f64;
        trace.epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: loss / n,
            mean_ctc_term: ctc / n,
            mean_att_term: att / n,
        });
    }
    Ok(trace)
}

/// Trains every parameter on `corpus`.
pub fn train(
    model: &Seq2SeqModel,
    corpus: &[Utterance],
    cfg: &MtlConfig,
) -> Result<(Seq2SeqModel, LossTrace)> {
    let mut m = model.clone();
    let trace = train_with(&mut m, corpus, cfg, |_| true, |_, _| {})?;
    Ok((m, trace))
}

/// Pools the per-language corpora into one shuffled stream over the shared
/// vocabulary, which must carry every language's character set.
pub fn train_multilingual(
    model: &Seq2SeqModel,
    corpora: &[(String, Vec<Utterance>)],
    cfg: &MtlConfig,
) -> Result<(Seq2SeqModel, LossTrace)> {
    let known = model.vocab.languages();
    let mut pooled = Vec::new();
    for (lang, utts) in corpora {
        if !known.contains(lang) {
            return Err(Error::UnknownLanguage(lang.clone()));
        }
        pooled.extend(utts.iter().cloned());
    }
    train(model, &pooled, cfg)
}

/// Distinct characters of a corpus, in first-appearance order.
pub fn corpus_charset(corpus: &[Utterance]) -> Vec<char> {
    let mut seen = BTreeSet::new();
    corpus
        .iter()
        .flat_map(|u| u.transcript.chars())
        .filter(|c| seen.insert(*c))
        .collect()
}

/// Continues training a pooled model on target-language data only. The
/// target characters must already be in the pooled vocabulary.
pub fn fine_tune(
    model: &Seq2SeqModel,
    corpus: &[Utterance],
    cfg: &MtlConfig,
) -> Result<(Seq2SeqModel, LossTrace)> {
    let missing = model.vocab.missing(&corpus_charset(corpus));
    if !missing.is_empty() {
        let language = corpus
            .first()
            .map(|u| u.language.clone())
            .unwrap_or_default();
        return Err(Error::IncompatibleCharset {
            language,
            missing: missing.iter().map(char::to_string).collect(),
        });
    }
    train(model, corpus, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::Vocabulary;

    pub(crate) fn tiny_model() -> Seq2SeqModel {
        let vocab = Vocabulary::from_charsets([("x", &['a', 'b'][..])]).unwrap();
        let cfg = ModelConfig {
            input_dim: 2,
            encoder_layers: 1,
            encoder_hidden: 3,
            encoder_proj: 3,
            attention_dim: 3,
            attention_channels: 2,
            attention_width: 3,
            decoder_hidden: 3,
            embed_dim: 2,
            ctc_hidden: 3,
            init_scale: 0.3,
            seed: 4,
        };
        Seq2SeqModel::new(cfg, vocab).unwrap()
    }

    pub(crate) fn utt(id: &str, text: &str, frames: usize) -> Utterance {
        let data = (0..frames * 2)
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3)
            .collect();
        Utterance {
            language: "x".into(),
            features: FeatureSequence::new(id, Tensor::matrix(frames, 2, data).unwrap()).unwrap(),
            transcript: text.into(),
        }
    }

    #[test]
    fn mtl_loss_endpoints_and_midpoint() {
        assert_eq!(mtl_loss(-2.0, -4.0, 1.0).unwrap(), 2.0);
        assert_eq!(mtl_loss(-2.0, -4.0, 0.0).unwrap(), 4.0);
        assert_eq!(mtl_loss(-2.0, -4.0, 0.5).unwrap(), 3.0);
        assert!(mtl_loss(-2.0, -4.0, 1.5).is_err());
        assert!(mtl_loss(-2.0, -4.0, -0.1).is_err());
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let m = tiny_model();
        let cfg = MtlConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, trace) = train(&m, &[utt("u", "ab", 6)], &cfg).unwrap();
        assert_eq!(out, m);
        assert!(trace.epochs.is_empty());
    }

    #[test]
    fn unknown_character_is_named() {
        let m = tiny_model();
        let err = train(&m, &[utt("u7", "az", 6)], &MtlConfig::default()).unwrap_err();
        match err {
            Error::UnknownCharacter { ch, utterance } => {
                assert_eq!((ch.as_str(), utterance.as_str()), ("z", "u7"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let m = tiny_model();
        let corpus = vec![utt("u1", "ab", 6), utt("u2", "ba", 6), utt("u3", "a", 4)];
        let cfg = MtlConfig {
            epochs: 15,
            learning_rate: 0.2,
            ..Default::default()
        };
        let (a, ta) = train(&m, &corpus, &cfg).unwrap();
        let (b, tb) = train(&m, &corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.to_csv(), tb.to_csv());
        assert!(ta.last().unwrap().mean_loss < ta.first().unwrap().mean_loss);
    }

    #[test]
    fn single_language_pooling_matches_train() {
        let m = tiny_model();
        let corpus = vec![utt("u1", "ab", 6), utt("u2", "b", 4)];
        let cfg = MtlConfig {
            epochs: 2,
            ..Default::default()
        };
        let (a, _) = train(&m, &corpus, &cfg).unwrap();
        let (b, _) = train_multilingual(&m, &[("x".into(), corpus)], &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            train_multilingual(&m, &[("y".into(), vec![])], &cfg),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn fine_tune_rejects_incompatible_charset() {
        let m = tiny_model();
        let err = fine_tune(&m, &[utt("u", "ac", 6)], &MtlConfig::default()).unwrap_err();
        assert!(matches!(err, Error::IncompatibleCharset { ref missing, .. } if missing == &["c"]));
        assert!(err.to_string().contains("language transfer"));
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let m = tiny_model();
        let u = utt("u", "ab", 6);
        let target = m.vocab.encode(&u.transcript, "u").unwrap();
        let eval = |lambda: f64| {
            let mut g = Graph::new();
            let p = m.graph_params(&mut g);
            let x = g.input(u.features.frames.clone());
            let n = utterance_loss(&mut g, &p, &m.config, x, &target, lambda).unwrap();
            g.value(n.loss).item()
        };
        let (l0, l1) = (eval(0.0), eval(1.0));
        for lambda in [0.25, 0.5, 0.9] {
            let direct = eval(lambda);
            assert!((direct - (lambda * l1 + (1.0 - lambda) * l0)).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let t = LossTrace {
            epochs: vec![EpochStats {
                epoch: 1,
                mean_loss: 1.5,
                mean_ctc_term: 2.0,
                mean_att_term: 1.0,
            }],
        };
        assert_eq!(
            t.to_csv(),
            "epoch,mean_loss,mean_ctc_term,mean_att_term\n1,1.5,2,1\n"
        );
    }
}
