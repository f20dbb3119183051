//! Experiment driver: trains and scores every (regime, fraction, seed) cell
//! of an [`ExperimentSpec`], writing checkpoints, loss traces and hypothesis
//! files under one output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::corpus::{default_languages, Corpus, GeneratedUtterance};
use super::manifest::read_corpus;
use super::report::{ResultRow, Results};
use crate::config::KeyValues;
use crate::decoding::{beam_search, out_of_charset_rate, write_hyps, BeamConfig, CorpusScore};
use crate::error::{Error, Result};
use crate::features::{
    extract_sbn, mean_subtract_by_side, train_sbn, FeatureSequence, PhoneTargetSequence, SbnConfig,
    SbnParams, SbnUtterance, BN2_DIM, RAW_DIM,
};
use crate::model::{checkpoint, ModelConfig, Seq2SeqModel, Vocabulary};
use crate::training::{
    fine_tune, language_transfer, train, train_multilingual, MtlConfig, TransferPlan,
    TransferVariant, Utterance,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    MonoFbank,
    MonoSbn,
    Multi,
    MultiFinetune,
    Transfer,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::MonoFbank,
        Regime::MonoSbn,
        Regime::Multi,
        Regime::MultiFinetune,
        Regime::Transfer,
    ];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::MonoFbank => "mono-fbank",
            Regime::MonoSbn => "mono-sbn",
            Regime::Multi => "multi",
            Regime::MultiFinetune => "multi-finetune",
            Regime::Transfer => "transfer",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

/// Input features of the multilingual regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Fbank,
    Sbn,
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbank" => Ok(FeatureKind::Fbank),
            "sbn" => Ok(FeatureKind::Sbn),
            _ => Err(Error::Config(format!("unknown feature kind {s:?}"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Fbank => "fbank",
            FeatureKind::Sbn => "sbn",
        })
    }
}

/// Parsed from `key=value` text. Nested configs use the prefixes `model.`,
/// `train.` and `sbn.`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub regimes: Vec<Regime>,
    /// Languages scored by the mono and multi regimes.
    pub languages: Vec<String>,
    /// Languages pooled for multilingual and SBN training.
    pub train_languages: Vec<String>,
    pub finetune_target: String,
    pub transfer_target: String,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub corpus_seed: u64,
    pub train_utts: usize,
    pub eval_utts: usize,
    pub noise: f64,
    /// Load the corpus written by `gen-corpus` instead of generating it.
    pub corpus_dir: Option<PathBuf>,
    /// Use a trained SBN extractor instead of training one.
    pub sbn_model: Option<PathBuf>,
    /// Use a pooled checkpoint instead of training one.
    pub pooled_model: Option<PathBuf>,
    pub multi_features: FeatureKind,
    pub model: ModelConfig,
    pub train: MtlConfig,
    pub sbn: SbnConfig,
    pub beam: BeamConfig,
    pub mask_multi: bool,
    /// Fine-tuning epochs after which the target is scored.
    pub finetune_checkpoints: Vec<usize>,
    pub variants: Vec<TransferVariant>,
    pub phase2_epochs: usize,
    pub phase3_epochs: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            regimes: vec![Regime::MonoFbank],
            languages: vec!["alpha".into()],
            train_languages: vec!["alpha".into(), "beta".into()],
            finetune_target: "alpha".into(),
            transfer_target: "gamma".into(),
            fractions: vec![1.0],
            seeds: vec![1],
            corpus_seed: 7,
            train_utts: 400,
            eval_utts: 100,
            noise: 1.0,
            corpus_dir: None,
            sbn_model: None,
            pooled_model: None,
            multi_features: FeatureKind::Fbank,
            model: ModelConfig::default(),
            train: MtlConfig::default(),
            sbn: SbnConfig::default(),
            beam: BeamConfig::default(),
            mask_multi: false,
            finetune_checkpoints: vec![5],
            variants: TransferVariant::ALL.to_vec(),
            phase2_epochs: 5,
            phase3_epochs: 10,
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "regimes",
    "languages",
    "train_languages",
    "finetune_target",
    "transfer_target",
    "fractions",
    "seeds",
    "corpus_seed",
    "train_utts",
    "eval_utts",
    "noise",
    "corpus_dir",
    "sbn_model",
    "pooled_model",
    "multi_features",
    "beam",
    "alpha",
    "max_len",
    "length_penalty",
    "mask_multi",
    "finetune_checkpoints",
    "variants",
    "phase2_epochs",
    "phase3_epochs",
];

impl ExperimentSpec {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        for k in kv.keys() {
            let nested = ["model.", "train.", "sbn."]
                .iter()
                .any(|p| k.starts_with(p));
            if !nested && !TOP_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown experiment key {k:?}")));
            }
        }
        let d = ExperimentSpec::default();
        let beam_d = d.beam.clone();
        let spec = ExperimentSpec {
            regimes: kv.list("regimes")?.unwrap_or(d.regimes),
            languages: kv.list("languages")?.unwrap_or(d.languages),
            train_languages: kv.list("train_languages")?.unwrap_or(d.train_languages),
            finetune_target: kv.get_or("finetune_target", d.finetune_target)?,
            transfer_target: kv.get_or("transfer_target", d.transfer_target)?,
            fractions: kv.list("fractions")?.unwrap_or(d.fractions),
            seeds: kv.list("seeds")?.unwrap_or(d.seeds),
            corpus_seed: kv.get_or("corpus_seed", d.corpus_seed)?,
            train_utts: kv.get_or("train_utts", d.train_utts)?,
            eval_utts: kv.get_or("eval_utts", d.eval_utts)?,
            noise: kv.get_or("noise", d.noise)?,
            corpus_dir: kv.get("corpus_dir")?,
            sbn_model: kv.get("sbn_model")?,
            pooled_model: kv.get("pooled_model")?,
            multi_features: kv.get_or("multi_features", d.multi_features)?,
            model: ModelConfig::from_key_values(&kv.section("model"))?,
            train: MtlConfig::from_key_values(&kv.section("train"))?,
            sbn: SbnConfig::from_key_values(&kv.section("sbn"))?,
            beam: BeamConfig {
                width: kv.get_or("beam", beam_d.width)?,
                alpha: kv.get_or("alpha", beam_d.alpha)?,
                max_len: kv.get("max_len")?,
                charset_mask: None,
                length_penalty: kv.get_or("length_penalty", beam_d.length_penalty)?,
            },
            mask_multi: kv.get_or("mask_multi", d.mask_multi)?,
            finetune_checkpoints: kv
                .list("finetune_checkpoints")?
                .unwrap_or(d.finetune_checkpoints),
            variants: kv.list("variants")?.unwrap_or(d.variants),
            phase2_epochs: kv.get_or("phase2_epochs", d.phase2_epochs)?,
            phase3_epochs: kv.get_or("phase3_epochs", d.phase3_epochs)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() || self.seeds.is_empty() || self.fractions.is_empty() {
            return Err(Error::Config(
                "regimes, seeds and fractions must be non-empty".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
        }
        if self.train_utts == 0 || self.eval_utts == 0 {
            return Err(Error::Config(
                "train_utts and eval_utts must be positive".into(),
            ));
        }
        if self.finetune_checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("finetune_checkpoints must increase".into()));
        }
        self.beam.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Normalised listing of every setting, for report headers.
    pub fn to_key_values(&self) -> KeyValues {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut kv = KeyValues::new();
        kv.set("regimes", join(&self.regimes));
        kv.set("languages", self.languages.join(","));
        kv.set("train_languages", self.train_languages.join(","));
        kv.set("finetune_target", &self.finetune_target);
        kv.set("transfer_target", &self.transfer_target);
        kv.set("fractions", join(&self.fractions));
        kv.set("seeds", join(&self.seeds));
        kv.set("corpus_seed", self.corpus_seed);
        kv.set("train_utts", self.train_utts);
        kv.set("eval_utts", self.eval_utts);
        kv.set("noise", self.noise);
        if let Some(p) = &self.corpus_dir {
            kv.set("corpus_dir", p.display());
        }
        if let Some(p) = &self.sbn_model {
            kv.set("sbn_model", p.display());
        }
        if let Some(p) = &self.pooled_model {
            kv.set("pooled_model", p.display());
        }
        kv.set("multi_features", self.multi_features);
        kv.set("beam", self.beam.width);
        kv.set("alpha", self.beam.alpha);
        if let Some(m) = self.beam.max_len {
            kv.set("max_len", m);
        }
        kv.set("length_penalty", self.beam.length_penalty);
        kv.set("mask_multi", self.mask_multi);
        kv.set("finetune_checkpoints", join(&self.finetune_checkpoints));
        kv.set(
            "variants",
            self.variants
                .iter()
                .map(|v| v.cli_name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("phase2_epochs", self.phase2_epochs);
        kv.set("phase3_epochs", self.phase3_epochs);
        for (k, v) in [
            ("model", self.model.to_key_values()),
            ("sbn", self.sbn.to_key_values()),
        ] {
            for key in v.keys() {
                kv.set(&format!("{k}.{key}"), v.raw(key).unwrap());
            }
        }
        kv.set("train.lambda", self.train.lambda);
        kv.set("train.learning_rate", self.train.learning_rate);
        kv.set("train.clip_norm", self.train.clip_norm);
        kv.set("train.epochs", self.train.epochs);
        kv
    }

    fn needs_sbn(&self) -> bool {
        self.regimes.contains(&Regime::MonoSbn)
            || (self.multi_features == FeatureKind::Sbn
                && self
                    .regimes
                    .iter()
                    .any(|r| matches!(r, Regime::Multi | Regime::MultiFinetune | Regime::Transfer)))
    }
}

/// First `round(fraction · n)` utterances, at least one.
pub fn subset<T>(items: &[T], fraction: f64) -> &[T] {
    let n = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len().max(1));
    &items[..n.min(items.len())]
}

/// Conversation-side mean subtraction over a list of utterances.
pub fn normalize_sides(utts: &[GeneratedUtterance]) -> Result<Vec<FeatureSequence>> {
    let seqs: Vec<FeatureSequence> = utts.iter().map(|u| u.features.clone()).collect();
    let sides: Vec<String> = utts.iter().map(|u| u.side.clone()).collect();
    mean_subtract_by_side(&seqs, &sides)
}

/// Trains the SBN extractor on the given languages' training data.
pub fn train_sbn_on(corpus: &Corpus, languages: &[String], cfg: &SbnConfig) -> Result<SbnParams> {
    let mut data = Vec::new();
    let mut blocks = Vec::new();
    for lang in languages {
        let utts = corpus.train_of(lang)?;
        blocks.push((lang.clone(), corpus.phone_count(lang)?));
        for (u, f) in utts.iter().zip(normalize_sides(utts)?) {
            if u.phones.len() != u.features.len() {
                return Err(Error::MissingStage {
                    stage: "gen-corpus".into(),
                    detail: format!("{} has no phone targets", u.id),
                });
            }
            data.push(SbnUtterance {
                features: f,
                targets: PhoneTargetSequence {
                    id: u.id.clone(),
                    labels: u.phones.clone(),
                    language: lang.clone(),
                },
            });
        }
    }
    Ok(train_sbn(&data, cfg, &blocks)?.0)
}

struct Features {
    fbank: HashMap<String, FeatureSequence>,
    sbn: HashMap<String, FeatureSequence>,
}

impl Features {
    fn get(&self, kind: FeatureKind, id: &str) -> Result<&FeatureSequence> {
        let map = match kind {
            FeatureKind::Fbank => &self.fbank,
            FeatureKind::Sbn => &self.sbn,
        };
        map.get(id).ok_or_else(|| Error::MissingStage {
            stage: format!("{kind} features"),
            detail: format!("no features for {id}"),
        })
    }

    fn utterances(&self, kind: FeatureKind, utts: &[GeneratedUtterance]) -> Result<Vec<Utterance>> {
        utts.iter()
            .map(|u| {
                Ok(Utterance {
                    language: u.language.clone(),
                    features: self.get(kind, &u.id)?.clone(),
                    transcript: u.transcript.clone(),
                })
            })
            .collect()
    }
}

fn dim_of(kind: FeatureKind) -> usize {
    match kind {
        FeatureKind::Fbank => RAW_DIM,
        FeatureKind::Sbn => BN2_DIM,
    }
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    corpus: Corpus,
    features: Features,
    out_dir: &'a Path,
    pooled: BTreeMap<(u64, u64), Seq2SeqModel>,
}

fn fraction_key(f: f64) -> u64 {
    f.to_bits()
}

fn cell_dir(out_dir: &Path, regime: &str, lang: &str, fraction: f64, seed: u64) -> Result<PathBuf> {
    let name: String = format!("{regime}_{lang}_f{fraction}_s{seed}")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect();
    let dir = out_dir.join("cells").join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Decodes utterances and scores them; returns corpus %CER, the
/// out-of-charset rate against `charset` and the hypotheses.
pub fn evaluate(
    model: &Seq2SeqModel,
    utts: &[Utterance],
    beam: &BeamConfig,
    charset: &[char],
) -> Result<(f64, f64, Vec<(String, String)>)> {
    let mut hyps = Vec::with_capacity(utts.len());
    for u in utts {
        let best = beam_search(model, &u.features.frames, beam)?;
        hyps.push((u.id().to_string(), best[0].text.clone()));
    }
    let refs: Vec<(String, String)> = utts
        .iter()
        .map(|u| (u.id().to_string(), u.transcript.clone()))
        .collect();
    let score = CorpusScore::compute(&hyps, &refs)?;
    let ooc = out_of_charset_rate(hyps.iter().map(|(_, h)| h.as_str()), charset);
    Ok((score.cer(), ooc, hyps))
}

impl Runner<'_> {
    fn model_config(&self, kind: FeatureKind, seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: dim_of(kind),
            seed,
            ..self.spec.model.clone()
        }
    }

    fn train_config(&self, seed: u64) -> MtlConfig {
        MtlConfig {
            seed,
            ..self.spec.train.clone()
        }
    }

    fn save_cell(&self, dir: &Path, model: &Seq2SeqModel, trace_csv: &str) -> Result<()> {
        checkpoint::save(model, &dir.join("model.s2sm"))?;
        write(&dir.join("loss.csv"), trace_csv)
    }

    #[allow(clippy::too_many_arguments)]
    fn score_cell(
        &self,
        dir: &Path,
        model: &Seq2SeqModel,
        kind: FeatureKind,
        regime: &str,
        lang: &str,
        fraction: f64,
        seed: u64,
        mask: bool,
    ) -> Result<ResultRow> {
        let eval = self.features.utterances(kind, self.corpus.eval_of(lang)?)?;
        let charset = self.corpus.charset(lang)?;
        let mut beam = self.spec.beam.clone();
        if mask {
            beam.charset_mask = Some(model.vocab.charset(lang));
        }
        let (cer, ooc, hyps) = evaluate(model, &eval, &beam, &charset)?;
        write_hyps(&dir.join("hyp.txt"), &hyps)?;
        Ok(ResultRow {
            regime: regime.to_string(),
            language: lang.to_string(),
            fraction,
            seed,
            cer,
            ooc_rate: Some(ooc),
        })
    }

    fn mono(
        &self,
        kind: FeatureKind,
        regime: Regime,
        fraction: f64,
        seed: u64,
    ) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for lang in &self.spec.languages {
            let utts = self
                .features
                .utterances(kind, subset(self.corpus.train_of(lang)?, fraction))?;
            let chars = self.corpus.charset(lang)?;
            let vocab = Vocabulary::from_charsets([(lang.as_str(), &chars[..])])?;
            let init = Seq2SeqModel::new(self.model_config(kind, seed), vocab)?;
            let (model, trace) = train(&init, &utts, &self.train_config(seed))?;
            let regime = regime.to_string();
            let dir = cell_dir(self.out_dir, &regime, lang, fraction, seed)?;
            self.save_cell(&dir, &model, &trace.to_csv())?;
            rows.push(self.score_cell(&dir, &model, kind, &regime, lang, fraction, seed, false)?);
        }
        Ok(rows)
    }

    fn pooled_vocab(&self) -> Result<Vocabulary> {
        let sets: Vec<(String, Vec<char>)> = self
            .spec
            .train_languages
            .iter()
            .map(|l| Ok((l.clone(), self.corpus.charset(l)?)))
            .collect::<Result<_>>()?;
        Vocabulary::from_charsets(sets.iter().map(|(l, c)| (l.as_str(), &c[..])))
    }

    fn pooled(&mut self, fraction: f64, seed: u64) -> Result<Seq2SeqModel> {
        if let Some(m) = self.pooled.get(&(fraction_key(fraction), seed)) {
            return Ok(m.clone());
        }
        let model = if let Some(path) = &self.spec.pooled_model {
            if !path.exists() {
                return Err(Error::MissingStage {
                    stage: "train-multi".into(),
                    detail: format!("pooled checkpoint {} not found", path.display()),
                });
            }
            checkpoint::load(path)?
        } else {
            let kind = self.spec.multi_features;
            let mut corpora = Vec::new();
            for lang in &self.spec.train_languages {
                let utts = self
                    .features
                    .utterances(kind, subset(self.corpus.train_of(lang)?, fraction))?;
                corpora.push((lang.clone(), utts));
            }
            let init = Seq2SeqModel::new(self.model_config(kind, seed), self.pooled_vocab()?)?;
            let (model, trace) = train_multilingual(&init, &corpora, &self.train_config(seed))?;
            let dir = cell_dir(self.out_dir, "multi-pooled", "all", fraction, seed)?;
            self.save_cell(&dir, &model, &trace.to_csv())?;
            model
        };
        self.pooled
            .insert((fraction_key(fraction), seed), model.clone());
        Ok(model)
    }

    fn multi(&mut self, fraction: f64, seed: u64) -> Result<Vec<ResultRow>> {
        let model = self.pooled(fraction, seed)?;
        let mut rows = Vec::new();
        for lang in &self.spec.languages {
            let dir = cell_dir(self.out_dir, "multi", lang, fraction, seed)?;
            let kind = self.spec.multi_features;
            rows.push(self.score_cell(
                &dir,
                &model,
                kind,
                "multi",
                lang,
                fraction,
                seed,
                self.spec.mask_multi,
            )?);
        }
        Ok(rows)
    }

    fn finetune(&mut self, fraction: f64, seed: u64) -> Result<Vec<ResultRow>> {
        let kind = self.spec.multi_features;
        let lang = self.spec.finetune_target.clone();
        let mut model = self.pooled(fraction, seed)?;
        let utts = self
            .features
            .utterances(kind, subset(self.corpus.train_of(&lang)?, fraction))?;
        let mut rows = Vec::new();
        let mut done = 0;
        let mut csv = String::new();
        for (i, &target_epochs) in self.spec.finetune_checkpoints.iter().enumerate() {
            let cfg = MtlConfig {
                epochs: target_epochs - done,
                seed: seed.wrapping_add(i as u64),
                ..self.spec.train.clone()
            };
            let (m, trace) = fine_tune(&model, &utts, &cfg)?;
            model = m;
            done = target_epochs;
            let regime = format!("multi-finetune:e{target_epochs}");
            let dir = cell_dir(self.out_dir, &regime, &lang, fraction, seed)?;
            csv.push_str(&trace.to_csv());
            self.save_cell(&dir, &model, &csv)?;
            rows.push(self.score_cell(&dir, &model, kind, &regime, &lang, fraction, seed, false)?);
        }
        Ok(rows)
    }

    fn transfer(&mut self, fraction: f64, seed: u64) -> Result<Vec<ResultRow>> {
        let kind = self.spec.multi_features;
        let lang = self.spec.transfer_target.clone();
        let pooled = self.pooled(fraction, seed)?;
        let utts = self
            .features
            .utterances(kind, subset(self.corpus.train_of(&lang)?, fraction))?;
        let mut rows = Vec::new();
        for &variant in &self.spec.variants {
            let plan = TransferPlan {
                variant,
                phase2_epochs: self.spec.phase2_epochs,
                phase3_epochs: self.spec.phase3_epochs,
            };
            let out = language_transfer(&pooled, &utts, &lang, &plan, &self.train_config(seed))?;
            let regime = format!("transfer:{variant}");
            let dir = cell_dir(self.out_dir, &regime, &lang, fraction, seed)?;
            let mut trace = out.phase2.clone();
            trace.extend(out.phase3.clone());
            self.save_cell(&dir, &out.model, &trace.to_csv())?;
            rows.push(self.score_cell(
                &dir, &out.model, kind, &regime, &lang, fraction, seed, false,
            )?);
        }
        Ok(rows)
    }
}

fn load_or_generate_corpus(spec: &ExperimentSpec) -> Result<Corpus> {
    match &spec.corpus_dir {
        Some(dir) => read_corpus(dir),
        None => {
            let langs = default_languages(spec.corpus_seed, spec.noise)?;
            Corpus::generate(&langs, spec.train_utts, spec.eval_utts, spec.corpus_seed)
        }
    }
}

/// Runs every cell of `spec`, writing artifacts and `results.csv`,
/// `results_ooc.csv`, `curves.dat` and `spec.txt` under `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<Results> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let corpus = load_or_generate_corpus(spec)?;
    let mut needed: Vec<String> = spec.languages.clone();
    needed.extend(spec.train_languages.iter().cloned());
    if spec.regimes.contains(&Regime::MultiFinetune) {
        needed.push(spec.finetune_target.clone());
    }
    if spec.regimes.contains(&Regime::Transfer) {
        needed.push(spec.transfer_target.clone());
    }
    needed.sort();
    needed.dedup();
    for l in &needed {
        corpus.train_of(l)?;
        corpus.eval_of(l)?;
    }

    let mut fbank = HashMap::new();
    for lang in &needed {
        for utts in [corpus.train_of(lang)?, corpus.eval_of(lang)?] {
            for (u, f) in utts.iter().zip(normalize_sides(utts)?) {
                fbank.insert(u.id.clone(), f);
            }
        }
    }
    let mut sbn = HashMap::new();
    if spec.needs_sbn() {
        let params = match &spec.sbn_model {
            Some(path) if !path.exists() => {
                return Err(Error::MissingStage {
                    stage: "sbn-train".into(),
                    detail: format!("SBN model {} not found", path.display()),
                })
            }
            Some(path) => SbnParams::load(path)?,
            None => {
                let p = train_sbn_on(&corpus, &spec.train_languages, &spec.sbn)?;
                p.save(&out_dir.join("sbn.sbnm"))?;
                p
            }
        };
        for (id, f) in &fbank {
            sbn.insert(id.clone(), extract_sbn(f, &params)?);
        }
    }

    let mut runner = Runner {
        spec,
        corpus,
        features: Features { fbank, sbn },
        out_dir,
        pooled: BTreeMap::new(),
    };
    let mut results = Results::default();
    for &regime in &spec.regimes {
        for &fraction in &spec.fractions {
            for &seed in &spec.seeds {
                let rows = match regime {
                    Regime::MonoFbank => runner.mono(FeatureKind::Fbank, regime, fraction, seed)?,
                    Regime::MonoSbn => runner.mono(FeatureKind::Sbn, regime, fraction, seed)?,
                    Regime::Multi => runner.multi(fraction, seed)?,
                    Regime::MultiFinetune => runner.finetune(fraction, seed)?,
                    Regime::Transfer => runner.transfer(fraction, seed)?,
                };
                results.rows.extend(rows);
            }
        }
    }
    results.write_dir(out_dir)?;
    write(&out_dir.join("spec.txt"), &spec.to_key_values().to_string())?;
    Ok(results)
}
