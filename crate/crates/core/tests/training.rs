use polyasr::harness::{default_languages, normalize_sides, Corpus, GeneratedUtterance};
use polyasr::model::{ModelConfig, ParamGroup, Seq2SeqModel, Vocabulary};
use polyasr::training::{
    corpus_charset, fine_tune, language_transfer, mtl_loss, train, train_multilingual,
    train_with, MtlConfig, TransferPlan, TransferVariant, Utterance,
};
use polyasr::Error;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        encoder_hidden: 8,
        encoder_proj: 8,
        attention_dim: 8,
        attention_channels: 2,
        attention_width: 3,
        decoder_hidden: 8,
        embed_dim: 4,
        ctc_hidden: 8,
        seed,
        ..ModelConfig::default()
    }
}

fn utterances(us: &[GeneratedUtterance]) -> Vec<Utterance> {
    us.iter()
        .zip(normalize_sides(us).unwrap())
        .map(|(u, f)| Utterance {
            language: u.language.clone(),
            features: f,
            transcript: u.transcript.clone(),
        })
        .collect()
}

fn corpus(n: usize) -> Corpus {
    let langs = default_languages(5, 1.0).unwrap();
    Corpus::generate(&langs, n, 1, 5).unwrap()
}

fn mono_model(c: &Corpus, lang: &str) -> Seq2SeqModel {
    let chars = c.charset(lang).unwrap();
    let vocab = Vocabulary::from_charsets([(lang, &chars[..])]).unwrap();
    Seq2SeqModel::new(small_config(1), vocab).unwrap()
}

fn pooled_model(c: &Corpus) -> Seq2SeqModel {
    let sets: Vec<(String, Vec<char>)> = ["alpha", "beta"]
        .iter()
        .map(|l| (l.to_string(), c.charset(l).unwrap()))
        .collect();
    let vocab = Vocabulary::from_charsets(sets.iter().map(|(l, s)| (l.as_str(), &s[..]))).unwrap();
    Seq2SeqModel::new(small_config(2), vocab).unwrap()
}

#[test]
fn mtl_loss_interpolates() {
    assert_eq!(mtl_loss(-2.0, -4.0, 1.0).unwrap(), 2.0);
    assert_eq!(mtl_loss(-2.0, -4.0, 0.0).unwrap(), 4.0);
    assert!((mtl_loss(-2.0, -4.0, 0.25).unwrap() - 3.5).abs() < 1e-15);
    assert!(mtl_loss(-2.0, -4.0, 1.5).is_err());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let c = corpus(12);
    let utts = utterances(c.train_of("alpha").unwrap());
    let model = mono_model(&c, "alpha");
    let cfg = MtlConfig {
        epochs: 3,
        seed: 4,
        ..Default::default()
    };
    let (m1, t1) = train(&model, &utts, &cfg).unwrap();
    let (m2, t2) = train(&model, &utts, &cfg).unwrap();
    assert!(t1.last().unwrap().mean_loss < t1.first().unwrap().mean_loss);
    assert_eq!(t1.to_csv(), t2.to_csv());
    assert_eq!(m1.params, m2.params);
    assert!(t1
        .to_csv()
        .starts_with("epoch,mean_loss,mean_ctc_term,mean_att_term\n1,"));
}

#[test]
fn lambda_endpoints_select_one_branch() {
    let c = corpus(3);
    let utts = utterances(c.train_of("alpha").unwrap());
    let model = mono_model(&c, "alpha");
    for lambda in [0.0, 1.0] {
        let cfg = MtlConfig {
            epochs: 1,
            lambda,
            ..Default::default()
        };
        let e = train(&model, &utts, &cfg).unwrap().1.epochs[0];
        let want = if lambda == 1.0 {
            e.mean_ctc_term
        } else {
            e.mean_att_term
        };
        assert!((e.mean_loss - want).abs() < 1e-9);
    }
}

#[test]
fn multilingual_training_checks_languages() {
    let c = corpus(3);
    let model = pooled_model(&c);
    let corpora = vec![
        ("alpha".to_string(), utterances(c.train_of("alpha").unwrap())),
        ("beta".to_string(), utterances(c.train_of("beta").unwrap())),
    ];
    let cfg = MtlConfig {
        epochs: 1,
        ..Default::default()
    };
    let trace = train_multilingual(&model, &corpora, &cfg).unwrap().1;
    assert_eq!(trace.epochs.len(), 1);
    let gamma = vec![("gamma".to_string(), utterances(c.train_of("gamma").unwrap()))];
    assert!(matches!(
        train_multilingual(&model, &gamma, &cfg),
        Err(Error::UnknownLanguage(_))
    ));
}

#[test]
fn fine_tune_requires_a_covering_vocabulary() {
    let c = corpus(3);
    let model = pooled_model(&c);
    let cfg = MtlConfig {
        epochs: 1,
        ..Default::default()
    };
    let alpha = utterances(c.train_of("alpha").unwrap());
    let (tuned, _) = fine_tune(&model, &alpha, &cfg).unwrap();
    assert_eq!(tuned.vocab, model.vocab);
    let gamma = utterances(c.train_of("gamma").unwrap());
    assert!(matches!(
        fine_tune(&model, &gamma, &cfg),
        Err(Error::IncompatibleCharset { .. })
    ));
}

#[test]
fn phase_two_never_touches_frozen_tensors() {
    let c = corpus(10);
    let pooled = pooled_model(&c);
    let gamma = utterances(c.train_of("gamma").unwrap());
    let mut chars = corpus_charset(&gamma);
    chars.sort_unstable();
    let cfg = MtlConfig {
        epochs: 2,
        ..Default::default()
    };
    for variant in TransferVariant::ALL {
        let vocab = Vocabulary::from_charsets([("gamma", &chars[..])]).unwrap();
        let start = TransferPlan::new(variant).prepare(&pooled, vocab, 3);
        let mut m = start.clone();
        let mut steps = 0;
        train_with(
            &mut m,
            &gamma,
            &cfg,
            |n| variant.reinitializes(n),
            |_, now| {
                steps += 1;
                for (name, t) in start.params.iter() {
                    if !variant.reinitializes(name) {
                        assert_eq!(now.params.get(name).unwrap().bits(), t.bits(), "{name}");
                    }
                }
            },
        )
        .unwrap();
        assert_eq!(steps, 2 * gamma.len());
        for g in variant.groups() {
            for name in m.group_names(*g) {
                assert_ne!(m.params.get(&name), start.params.get(&name), "{variant} {name}");
            }
        }
    }
}

#[test]
fn transfer_runs_all_three_phases() {
    let c = corpus(4);
    let pooled = pooled_model(&c);
    let gamma = utterances(c.train_of("gamma").unwrap());
    let plan = TransferPlan {
        variant: TransferVariant::AttOut,
        phase2_epochs: 1,
        phase3_epochs: 2,
    };
    let out = language_transfer(&pooled, &gamma, "gamma", &plan, &MtlConfig::default()).unwrap();
    assert_eq!((out.phase2.epochs.len(), out.phase3.epochs.len()), (1, 2));
    assert_eq!(out.model.vocab.size(), corpus_charset(&gamma).len());
    for name in out.model.group_names(ParamGroup::Encoder) {
        assert_ne!(out.model.params.get(&name), pooled.params.get(&name));
    }
}
