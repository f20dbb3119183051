use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{corpus_charset, train_with, LossTrace, MtlConfig, Utterance};
use crate::error::{Error, Result};
use crate::model::{ParamGroup, Seq2SeqModel, Vocabulary};

/// Which parameter groups are redrawn before training on the target
/// language. The output group is always included since its width follows
/// the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransferVariant {
    Out,
    AttOut,
    CtcOut,
    AttCtcOut,
}

impl TransferVariant {
    pub const ALL: [TransferVariant; 4] = [
        TransferVariant::Out,
        TransferVariant::AttOut,
        TransferVariant::CtcOut,
        TransferVariant::AttCtcOut,
    ];

    pub fn groups(self) -> &'static [ParamGroup] {
        use ParamGroup::*;
        match self {
            TransferVariant::Out => &[Output],
            TransferVariant::AttOut => &[Attention, Output],
            TransferVariant::CtcOut => &[Ctc, Output],
            TransferVariant::AttCtcOut => &[Attention, Ctc, Output],
        }
    }

    /// Command-line spelling.
    pub fn cli_name(self) -> &'static str {
        match self {
            TransferVariant::Out => "out",
            TransferVariant::AttOut => "att-out",
            TransferVariant::CtcOut => "ctc-out",
            TransferVariant::AttCtcOut => "att-ctc-out",
        }
    }

    pub fn reinitializes(self, name: &str) -> bool {
        ParamGroup::of(name).is_some_and(|g| self.groups().contains(&g))
    }
}

impl fmt::Display for TransferVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferVariant::Out => "Out",
            TransferVariant::AttOut => "Att+Out",
            TransferVariant::CtcOut => "CTC+Out",
            TransferVariant::AttCtcOut => "Att+CTC+Out",
        })
    }
}

impl FromStr for TransferVariant {
    type Err = Error;

    /// Accepts both the command-line and the table spelling.
    fn from_str(s: &str) -> Result<Self> {
        TransferVariant::ALL
            .into_iter()
            .find(|v| v.cli_name() == s || v.to_string() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown transfer variant {s:?} (expected out, att-out, ctc-out or att-ctc-out)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferPlan {
    pub variant: TransferVariant,
    /// Epochs training only the redrawn groups.
    pub phase2_epochs: usize,
    /// Epochs training everything.
    pub phase3_epochs: usize,
}

impl TransferPlan {
    pub fn new(variant: TransferVariant) -> Self {
        TransferPlan {
            variant,
            phase2_epochs: 5,
            phase3_epochs: 10,
        }
    }

    /// Phase 1: installs the target vocabulary and redraws the variant's
    /// groups.
    pub fn prepare(&self, model: &Seq2SeqModel, vocab: Vocabulary, seed: u64) -> Seq2SeqModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = model.clone();
        m.replace_vocabulary(vocab, &mut rng);
        for &group in self.variant.groups() {
            if group != ParamGroup::Output {
                m.reinitialize(group, &mut rng);
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub model: Seq2SeqModel,
    pub phase2: LossTrace,
    pub phase3: LossTrace,
}

/// Three-step transfer to a language with its own character set: redraw
/// the variant's groups over the target vocabulary, train them with the
/// rest frozen, then fine-tune everything. `cfg.epochs` is ignored in
/// favour of the plan's phase lengths.
pub fn language_transfer(
    model: &Seq2SeqModel,
    corpus: &[Utterance],
    language: &str,
    plan: &TransferPlan,
    cfg: &MtlConfig,
) -> Result<TransferOutcome> {
    cfg.validate()?;
    let mut chars = corpus_charset(corpus);
    chars.sort_unstable();
    if chars.is_empty() {
        return Err(Error::Invalid(format!("no transcripts for {language}")));
    }
    let vocab = Vocabulary::from_charsets([(language, &chars[..])])?;
    let mut m = plan.prepare(model, vocab, cfg.seed);

    let variant = plan.variant;
    let phase2_cfg = MtlConfig {
        epochs: plan.phase2_epochs,
        ..cfg.clone()
    };
    let phase2 = train_with(
        &mut m,
        corpus,
        &phase2_cfg,
        |n| variant.reinitializes(n),
        |_, _| {},
    )?;
    let phase3_cfg = MtlConfig {
        epochs: plan.phase3_epochs,
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    };
    let phase3 = train_with(&mut m, corpus, &phase3_cfg, |_| true, |_, _| {})?;
    Ok(TransferOutcome {
        model: m,
        phase2,
        phase3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::tests::{tiny_model, utt};

    #[test]
    fn variant_names_round_trip() {
        for v in TransferVariant::ALL {
            assert_eq!(v.cli_name().parse::<TransferVariant>().unwrap(), v);
            assert_eq!(v.to_string().parse::<TransferVariant>().unwrap(), v);
        }
        assert!("softmax".parse::<TransferVariant>().is_err());
    }

    #[test]
    fn att_ctc_out_redraws_exactly_three_groups() {
        let m = tiny_model();
        let vocab = Vocabulary::from_charsets([("t", &['p', 'q', 'r'][..])]).unwrap();
        let plan = TransferPlan::new(TransferVariant::AttCtcOut);
        let out = plan.prepare(&m, vocab, 9);
        for (name, t) in out.params.iter() {
            let group = ParamGroup::of(name).unwrap();
            let same = m.params.get(name).is_some_and(|o| o.bits() == t.bits());
            let redrawn = matches!(
                group,
                ParamGroup::Attention | ParamGroup::Ctc | ParamGroup::Output
            );
            assert_eq!(same, !redrawn, "{name}");
        }
        assert_eq!(out.params.require("out.att.w").unwrap().rows(), 4);
    }

    #[test]
    fn phase2_of_out_keeps_everything_else() {
        let m = tiny_model();
        let corpus: Vec<_> = ["pq", "qp", "p"]
            .iter()
            .enumerate()
            .map(|(i, t)| utt(&format!("t{i}"), t, 6))
            .collect();
        let plan = TransferPlan {
            variant: TransferVariant::Out,
            phase2_epochs: 2,
            phase3_epochs: 0,
        };
        let out = language_transfer(&m, &corpus, "t", &plan, &MtlConfig::default()).unwrap();
        for (name, t) in m.params.iter() {
            if ParamGroup::of(name) != Some(ParamGroup::Output) {
                assert_eq!(
                    out.model.params.get(name).unwrap().bits(),
                    t.bits(),
                    "{name}"
                );
            }
        }
        assert_eq!(out.phase2.epochs.len(), 2);
        assert_eq!(out.model.vocab.size(), 2);
    }
}
