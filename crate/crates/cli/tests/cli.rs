use std::path::Path;
use std::process::Command;

fn polyasr(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_polyasr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn polyasr");
    assert!(
        out.status.success(),
        "polyasr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const TINY_MODEL: &str = "\
phase2_epochs = 1
phase3_epochs = 1
train.epochs = 2
model.encoder_layers = 1
model.encoder_hidden = 6
model.encoder_proj = 6
model.attention_dim = 6
model.attention_channels = 2
model.attention_width = 3
model.decoder_hidden = 6
model.embed_dim = 3
model.ctc_hidden = 6
sbn.hidden_units = 8
sbn.pretrain_epochs = 1
sbn.joint_epochs = 1
";

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.cfg"), TINY_MODEL).unwrap();

    polyasr(d, &["gen-corpus", "--out", "data", "--train-utts", "4", "--eval-utts", "2", "--seed", "3"]);
    polyasr(d, &["featex", "fbank", "--manifest", "data/train.tsv", "--out", "train.farc"]);
    polyasr(d, &["featex", "fbank", "--manifest", "data/eval.tsv", "--out", "eval.farc"]);
    polyasr(d, &["featex", "sbn-train", "--config", "tiny.cfg", "--manifest", "train.farc.tsv", "--out", "sbn.sbnm", "--seed", "2"]);
    polyasr(d, &["featex", "sbn-extract", "--model", "sbn.sbnm", "--manifest", "train.farc.tsv", "--out", "train.sbn.farc"]);
    assert!(read(d, "train.sbn.farc.tsv").lines().count() == 12);

    let train = ["train", "--config", "tiny.cfg", "--manifest", "train.farc.tsv", "--language", "alpha", "--seed", "5"];
    polyasr(d, &[&train[..], &["--out", "mono.ckpt"]].concat());
    polyasr(d, &[&train[..], &["--out", "again.ckpt"]].concat());
    assert_eq!(std::fs::read(d.join("mono.ckpt")).unwrap(), std::fs::read(d.join("again.ckpt")).unwrap());
    let csv = read(d, "mono.ckpt.loss.csv");
    assert!(csv.starts_with("epoch,mean_loss,mean_ctc_term,mean_att_term\n"));
    assert_eq!(csv.lines().count(), 3);

    polyasr(d, &["decode", "--model", "mono.ckpt", "--manifest", "eval.farc.tsv", "--language", "alpha", "--beam", "2", "--alpha", "0.5", "--charset-mask", "alpha", "--out", "hyp.txt"]);
    let hyps = read(d, "hyp.txt");
    assert_eq!(hyps.lines().count(), 2);
    assert!(hyps.lines().all(|l| l.contains('\t')));
    let score = polyasr(d, &["score", "--hyp", "hyp.txt", "--ref", "eval.farc.tsv", "--language", "alpha"]);
    assert!(score.starts_with("utt_id,errors,ref_len,cer\n"));
    assert!(score.lines().last().unwrap().starts_with("corpus,"));

    polyasr(d, &["train-multi", "--config", "tiny.cfg", "--manifests", "train.farc.tsv", "--out", "pooled.ckpt", "--seed", "1"]);
    polyasr(d, &["finetune", "--config", "tiny.cfg", "--manifest", "train.farc.tsv", "--language", "alpha", "--init", "pooled.ckpt", "--out", "ft.ckpt", "--seed", "1"]);
    polyasr(d, &["transfer", "--config", "tiny.cfg", "--manifest", "train.farc.tsv", "--language", "gamma", "--init", "pooled.ckpt", "--variant", "att-ctc-out", "--out", "tr.ckpt", "--seed", "1"]);
    assert_eq!(read(d, "tr.ckpt.loss.csv").lines().count(), 3);
}

#[test]
fn experiment_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = format!("regimes = mono-fbank\nlanguages = alpha\ntrain_utts = 4\neval_utts = 2\nbeam = 2\n{TINY_MODEL}");
    std::fs::write(d.join("exp.txt"), spec).unwrap();
    let table = polyasr(d, &["run-exp", "--spec", "exp.txt", "--out", "run", "--seed", "4"]);
    assert!(table.lines().count() >= 2);
    polyasr(d, &["report", "--in", "run", "--out", "report.md", "--seed", "0"]);
    assert!(!read(d, "report.md").is_empty());
    assert!(read(d, "report.csv").lines().count() >= 2);
}

#[test]
fn errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_polyasr"))
        .current_dir(tmp.path())
        .args(["finetune", "--manifest", "missing.tsv", "--out", "x.ckpt"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    let bad = Command::new(env!("CARGO_BIN_EXE_polyasr"))
        .args(["transfer", "--manifest", "m", "--out", "o", "--variant", "softmax"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
