use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyasr::config::KeyValues;
use polyasr::decoding::{beam_search, read_hyps, write_hyps, BeamConfig, CorpusScore};
use polyasr::features::{
    archive, compute_fbank, extract_sbn, mean_subtract_by_side, raw_features, train_sbn,
    FeatureSequence, FBANK_DIM, PhoneTargetSequence, SbnConfig, SbnParams, SbnUtterance, RAW_DIM,
};
use polyasr::harness::{
    default_languages, emit_report, load_manifest, run_experiment, side_of, write_corpus, Corpus,
    ExperimentSpec, LoadedEntry, ManifestEntry, Results,
};
use polyasr::harness::manifest::write_manifest;
use polyasr::model::{checkpoint, ModelConfig, Seq2SeqModel, Vocabulary};
use polyasr::training::{
    corpus_charset, fine_tune, language_transfer, train, train_multilingual, LossTrace, MtlConfig,
    TransferPlan, TransferVariant, Utterance,
};
use polyasr::{Error, Result};

#[derive(Parser)]
#[command(name = "polyasr", version, about = "Multilingual joint CTC-attention ASR at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature extraction.
    Featex {
        #[command(subcommand)]
        command: Featex,
    },
    /// Train a monolingual model.
    Train(TrainArgs),
    /// Train one model on several languages pooled.
    TrainMulti(TrainMultiArgs),
    /// Continue training a model on one language.
    Finetune(TrainArgs),
    /// Move a model to a language with its own character set.
    Transfer(TransferArgs),
    /// Joint CTC-attention beam search over a manifest.
    Decode(DecodeArgs),
    /// Per-utterance and corpus %CER as CSV.
    Score(ScoreArgs),
    /// Write the synthetic corpus as archives and manifests.
    GenCorpus(GenCorpusArgs),
    /// Run an experiment spec.
    RunExp(RunExpArgs),
    /// Render tables from an experiment output directory.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum Featex {
    /// Filterbank features from waveforms, or 37-dim raw features passed
    /// through; conversation-side mean subtraction is applied either way.
    Fbank(FeatexArgs),
    /// Train the two-stage stacked bottleneck extractor.
    SbnTrain(FeatexArgs),
    /// Extract 30-dim SBN features.
    SbnExtract(SbnExtractArgs),
}

#[derive(Args)]
struct FeatexArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SbnExtractArgs {
    #[command(flatten)]
    common: FeatexArgs,
    /// Trained SBN model.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Starting checkpoint; required for finetune.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss trace CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Keep only this language's utterances from the manifest.
    #[arg(long)]
    language: Option<String>,
}

#[derive(Args)]
struct TrainMultiArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "manifests", alias = "manifest", num_args = 1.., required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// out, att-out, ctc-out or att-ctc-out.
    #[arg(long)]
    variant: TransferVariant,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Restrict output to this language's characters.
    #[arg(long)]
    charset_mask: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Decode only this language's utterances.
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    /// Manifest holding the reference transcripts.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score only this language's references.
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value file with train_utts, eval_utts, noise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_utts: Option<usize>,
    #[arg(long)]
    eval_utts: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Corpus seed; the evaluation split uses seed + 1.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct RunExpArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the experiment file's seed list with this one seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Markdown destination; the CSV table goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Featex { command } => match command {
            Featex::Fbank(a) => featex_fbank(&a),
            Featex::SbnTrain(a) => featex_sbn_train(&a),
            Featex::SbnExtract(a) => featex_sbn_extract(&a),
        },
        Command::Train(a) => cmd_train(&a, false),
        Command::Finetune(a) => cmd_train(&a, true),
        Command::TrainMulti(a) => cmd_train_multi(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Score(a) => cmd_score(&a),
        Command::GenCorpus(a) => cmd_gen_corpus(&a),
        Command::RunExp(a) => cmd_run_exp(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<KeyValues> {
    path.map_or_else(|| Ok(KeyValues::new()), KeyValues::load)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

// Feature extraction --------------------------------------------------------

/// Writes `seqs` to `out` and a manifest `<out>.tsv` pointing at it, carrying
/// over language, transcript and (absolute) phone references.
fn write_features(out: &Path, manifest: &Path, entries: &[LoadedEntry], seqs: &[FeatureSequence]) -> Result<()> {
    archive::write(out, seqs)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Invalid(format!("{}: not a file path", out.display())))?;
    let rewritten: Vec<ManifestEntry> = entries
        .iter()
        .map(|l| {
            let phones = l.entry.phones.as_ref().map(|p| {
                let p = base.join(p);
                std::path::absolute(&p).unwrap_or(p).display().to_string()
            });
            ManifestEntry {
                archive: name.clone(),
                phones,
                ..l.entry.clone()
            }
        })
        .collect();
    let tsv = with_suffix(out, ".tsv");
    write_manifest(&tsv, &rewritten)?;
    eprintln!("wrote {} utterances to {} and {}", seqs.len(), out.display(), tsv.display());
    Ok(())
}

fn normalized(entries: &[LoadedEntry], seqs: Vec<FeatureSequence>) -> Result<Vec<FeatureSequence>> {
    let sides: Vec<String> = entries
        .iter()
        .map(|l| side_of(&l.entry.utt_id).to_string())
        .collect();
    mean_subtract_by_side(&seqs, &sides)
}

fn featex_fbank(a: &FeatexArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let rate: u32 = kv.get_or("rate", 8000)?;
    // 80 log Mel bands, or 37 = 24 bands plus pitch for the SBN front end.
    let dims: usize = kv.get_or("dims", FBANK_DIM)?;
    if dims != FBANK_DIM && dims != RAW_DIM {
        return Err(Error::Config(format!("dims must be {FBANK_DIM} or {RAW_DIM}, got {dims}")));
    }
    let entries = load_manifest(&a.manifest)?;
    let seqs = entries
        .iter()
        .map(|l| {
            let id = &l.entry.utt_id;
            match l.features.dim() {
                1 if dims == FBANK_DIM => compute_fbank(id, l.features.frames.data(), rate),
                1 => raw_features(id, l.features.frames.data(), rate),
                RAW_DIM => Ok(l.features.clone()),
                d => Err(Error::Dimension(format!(
                    "{id}: expected a waveform (1 column) or {RAW_DIM}-dim raw features, got {d}"
                ))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let seqs = normalized(&entries, seqs)?;
    write_features(&a.out, &a.manifest, &entries, &seqs)
}

fn featex_sbn_train(a: &FeatexArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let mut cfg = SbnConfig::from_key_values(&kv.section("sbn"))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let entries = load_manifest(&a.manifest)?;
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    let mut data = Vec::with_capacity(entries.len());
    for l in &entries {
        let labels = l.phones.clone().ok_or_else(|| Error::MissingStage {
            stage: "gen-corpus".into(),
            detail: format!("{} has no phone targets", l.entry.utt_id),
        })?;
        let top = labels.iter().max().map_or(0, |m| m + 1);
        let size = sizes.entry(l.entry.language.clone()).or_default();
        *size = (*size).max(top);
        data.push(SbnUtterance {
            features: l.features.clone(),
            targets: PhoneTargetSequence {
                id: l.entry.utt_id.clone(),
                labels,
                language: l.entry.language.clone(),
            },
        });
    }
    let blocks: Vec<(String, usize)> = sizes.into_iter().collect();
    let (params, report) = train_sbn(&data, &cfg, &blocks)?;
    params.save(&a.out)?;
    eprintln!(
        "stage-1 loss {:?}, joint loss {:?}, frame accuracy {:.4}",
        report.stage1_loss, report.joint_loss, report.frame_accuracy
    );
    Ok(())
}

fn featex_sbn_extract(a: &SbnExtractArgs) -> Result<()> {
    let params = SbnParams::load(&a.model)?;
    let entries = load_manifest(&a.common.manifest)?;
    let seqs = entries
        .iter()
        .map(|l| extract_sbn(&l.features, &params))
        .collect::<Result<Vec<_>>>()?;
    write_features(&a.common.out, &a.common.manifest, &entries, &seqs)
}

// Training --------------------------------------------------------------------

fn utterances(manifest: &Path, language: Option<&str>) -> Result<Vec<Utterance>> {
    let all: Vec<Utterance> = load_manifest(manifest)?.iter().map(LoadedEntry::utterance).collect();
    match language {
        None => Ok(all),
        Some(l) => {
            let kept: Vec<Utterance> = all.into_iter().filter(|u| u.language == l).collect();
            if kept.is_empty() {
                return Err(Error::UnknownLanguage(l.to_string()));
            }
            Ok(kept)
        }
    }
}

fn train_config(kv: &KeyValues, seed: Option<u64>) -> Result<MtlConfig> {
    let mut cfg = MtlConfig::from_key_values(&kv.section("train"))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Fresh model sized for the corpus features, unless `init` is given.
fn initial_model(
    kv: &KeyValues,
    init: Option<&Path>,
    seed: Option<u64>,
    corpus: &[Utterance],
    vocab: impl FnOnce() -> Result<Vocabulary>,
) -> Result<Seq2SeqModel> {
    if let Some(path) = init {
        return checkpoint::load(path);
    }
    let first = corpus
        .first()
        .ok_or_else(|| Error::Invalid("empty manifest".into()))?;
    let mut cfg = ModelConfig::from_key_values(&kv.section("model"))?;
    cfg.input_dim = first.features.dim();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Seq2SeqModel::new(cfg, vocab()?)
}

fn save_model(model: &Seq2SeqModel, trace: &LossTrace, out: &Path, csv: Option<&Path>) -> Result<()> {
    checkpoint::save(model, out)?;
    let csv = csv.map_or_else(|| with_suffix(out, ".loss.csv"), Path::to_path_buf);
    write_text(&csv, &trace.to_csv())?;
    if let Some(last) = trace.last() {
        eprintln!(
            "epoch {}: loss {:.4} (ctc {:.4}, att {:.4})",
            last.epoch, last.mean_loss, last.mean_ctc_term, last.mean_att_term
        );
    }
    Ok(())
}

fn single_language(corpus: &[Utterance]) -> Result<String> {
    let mut langs: Vec<&str> = corpus.iter().map(|u| u.language.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    match langs.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(Error::Invalid("empty manifest".into())),
        many => Err(Error::Invalid(format!(
            "expected one language, manifest has {}",
            many.join(", ")
        ))),
    }
}

fn cmd_train(a: &TrainArgs, finetune: bool) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let cfg = train_config(&kv, a.seed)?;
    let corpus = utterances(&a.manifest, a.language.as_deref())?;
    if finetune {
        let init = a.init.as_deref().ok_or_else(|| {
            Error::Config("finetune needs --init <checkpoint>".into())
        })?;
        let model = checkpoint::load(init)?;
        let (m, trace) = fine_tune(&model, &corpus, &cfg)?;
        return save_model(&m, &trace, &a.out, a.loss_csv.as_deref());
    }
    let model = initial_model(&kv, a.init.as_deref(), a.seed, &corpus, || {
        let lang = single_language(&corpus)?;
        let mut chars = corpus_charset(&corpus);
        chars.sort_unstable();
        Vocabulary::from_charsets([(lang.as_str(), &chars[..])])
    })?;
    let (m, trace) = train(&model, &corpus, &cfg)?;
    save_model(&m, &trace, &a.out, a.loss_csv.as_deref())
}

fn cmd_train_multi(a: &TrainMultiArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let cfg = train_config(&kv, a.seed)?;
    let mut by_lang: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    let mut all = Vec::new();
    for m in &a.manifests {
        for u in utterances(m, None)? {
            by_lang.entry(u.language.clone()).or_default().push(u.clone());
            all.push(u);
        }
    }
    let model = initial_model(&kv, a.init.as_deref(), a.seed, &all, || {
        let sets: Vec<(String, Vec<char>)> = by_lang
            .iter()
            .map(|(l, us)| {
                let mut c = corpus_charset(us);
                c.sort_unstable();
                (l.clone(), c)
            })
            .collect();
        Vocabulary::from_charsets(sets.iter().map(|(l, c)| (l.as_str(), &c[..])))
    })?;
    let corpora: Vec<(String, Vec<Utterance>)> = by_lang.into_iter().collect();
    let (m, trace) = train_multilingual(&model, &corpora, &cfg)?;
    save_model(&m, &trace, &a.out, a.loss_csv.as_deref())
}

fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let t = &a.train;
    let kv = load_config(t.config.as_deref())?;
    let cfg = train_config(&kv, t.seed)?;
    let init = t
        .init
        .as_deref()
        .ok_or_else(|| Error::Config("transfer needs --init <checkpoint>".into()))?;
    let model = checkpoint::load(init)?;
    let corpus = utterances(&t.manifest, t.language.as_deref())?;
    let lang = single_language(&corpus)?;
    let defaults = TransferPlan::new(a.variant);
    let plan = TransferPlan {
        variant: a.variant,
        phase2_epochs: kv.get_or("phase2_epochs", defaults.phase2_epochs)?,
        phase3_epochs: kv.get_or("phase3_epochs", defaults.phase3_epochs)?,
    };
    let out = language_transfer(&model, &corpus, &lang, &plan, &cfg)?;
    let mut trace = out.phase2;
    trace.extend(out.phase3);
    save_model(&out.model, &trace, &t.out, t.loss_csv.as_deref())
}

// Decoding and scoring ------------------------------------------------------

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let model = checkpoint::load(&a.model)?;
    let charset_mask = match &a.charset_mask {
        None => None,
        Some(lang) => {
            let ids = model.vocab.charset(lang);
            if ids.is_empty() {
                return Err(Error::UnknownLanguage(lang.clone()));
            }
            Some(ids)
        }
    };
    let cfg = BeamConfig {
        width: a.beam,
        alpha: a.alpha,
        max_len: a.max_len,
        charset_mask,
        ..Default::default()
    };
    cfg.validate()?;
    let mut hyps = Vec::new();
    for l in load_manifest(&a.manifest)? {
        if a.language.as_ref().is_some_and(|lang| *lang != l.entry.language) {
            continue;
        }
        let best = beam_search(&model, &l.features.frames, &cfg)?;
        hyps.push((l.entry.utt_id, best[0].text.clone()));
    }
    write_hyps(&a.out, &hyps)?;
    eprintln!("decoded {} utterances", hyps.len());
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let hyps = read_hyps(&a.hyp)?;
    let refs: Vec<(String, String)> = polyasr::harness::read_manifest(&a.reference)?
        .into_iter()
        .filter(|e| a.language.as_ref().is_none_or(|l| *l == e.language))
        .map(|e| (e.utt_id, e.transcript))
        .collect();
    let csv = CorpusScore::compute(&hyps, &refs)?.to_csv();
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

// Harness -------------------------------------------------------------------

fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let train_utts = a.train_utts.map_or_else(|| kv.get_or("train_utts", 400), Ok)?;
    let eval_utts = a.eval_utts.map_or_else(|| kv.get_or("eval_utts", 100), Ok)?;
    let noise = a.noise.map_or_else(|| kv.get_or("noise", 1.0), Ok)?;
    let langs = default_languages(a.seed, noise)?;
    let corpus = Corpus::generate(&langs, train_utts, eval_utts, a.seed)?;
    write_corpus(&a.out, &corpus)?;
    eprintln!(
        "wrote {} languages ({train_utts} train, {eval_utts} eval each) to {}",
        langs.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_run_exp(a: &RunExpArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seeds = vec![s];
    }
    let results = run_experiment(&spec, &a.out)?;
    print!("{}", results.to_csv());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let results = Results::read_dir(&a.input)?;
    let header = std::fs::read_to_string(a.input.join("spec.txt")).ok();
    let (md, csv) = emit_report(&results, header.as_deref());
    write_text(&a.out, &md)?;
    write_text(&a.out.with_extension("csv"), &csv)
}
