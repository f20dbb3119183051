//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use polyasr::autodiff::{Graph, NodeId, ParamNodes, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use polyasr::model::{ModelConfig, Seq2SeqModel, Vocabulary};
use rand::Rng;

/// Merge repeats, then drop blanks (id 0).
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != 0 {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// `log p(C | X)` for every label sequence reachable in `T` frames, by
/// enumerating all `W^T` frame paths.
pub fn ctc_by_paths(lp: &Tensor) -> BTreeMap<Vec<usize>, f64> {
    let (t, w) = (lp.rows(), lp.cols());
    let mut probs: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut path = vec![0usize; t];
    loop {
        let p: f64 = path
            .iter()
            .enumerate()
            .map(|(i, &k)| lp.at(i, k))
            .sum::<f64>()
            .exp();
        *probs.entry(collapse(&path)).or_insert(0.0) += p;
        let mut i = 0;
        loop {
            if i == t {
                return probs.into_iter().map(|(k, v)| (k, v.ln())).collect();
            }
            path[i] += 1;
            if path[i] < w {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Row-wise log-softmax of uniform random logits.
pub fn random_log_probs<R: Rng>(rng: &mut R, frames: usize, width: usize, spread: f64) -> Tensor {
    let mut data = Vec::with_capacity(frames * width);
    for _ in 0..frames {
        let row: Vec<f64> = (0..width).map(|_| rng.random_range(-spread..spread)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - z));
    }
    Tensor::matrix(frames, width, data).unwrap()
}

/// Every sequence over labels `1..=v` of length `0..=max_len`.
pub fn all_sequences(v: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for l in 1..=v {
                let mut e: Vec<usize> = s.clone();
                e.push(l);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn joint(alpha: f64, ctc: f64, att: f64) -> f64 {
    if alpha == 0.0 {
        att
    } else if alpha == 1.0 {
        ctc
    } else {
        alpha * ctc + (1.0 - alpha) * att
    }
}

pub fn micro_config(seed: u64, input_dim: usize, hidden: usize, init_scale: f64) -> ModelConfig {
    ModelConfig {
        input_dim,
        encoder_layers: 1,
        encoder_hidden: hidden,
        encoder_proj: hidden,
        attention_dim: hidden,
        attention_channels: 2,
        attention_width: 3,
        decoder_hidden: hidden,
        embed_dim: 2,
        ctc_hidden: hidden,
        init_scale,
        seed,
    }
}

/// Three-character model over `a b c`.
pub fn micro_model(seed: u64, input_dim: usize, hidden: usize, init_scale: f64) -> Seq2SeqModel {
    let vocab = Vocabulary::from_charsets([("x", &['a', 'b', 'c'][..])]).unwrap();
    Seq2SeqModel::new(micro_config(seed, input_dim, hidden, init_scale), vocab).unwrap()
}

pub fn random_features<R: Rng>(rng: &mut R, frames: usize, dim: usize) -> Tensor {
    let data = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::matrix(frames, dim, data).unwrap()
}

/// Teacher-forced `log p_att(seq · eos | X)`, stepped one label at a time
/// through the value-level attention and decoder calls.
pub fn attention_score(model: &Seq2SeqModel, x: &Tensor, seq: &[usize]) -> f64 {
    let enc = model.encode(x).unwrap();
    let frames = x.rows();
    let hidden = model.config.decoder_hidden;
    let mut a = Tensor::full(&[frames], 1.0 / frames as f64);
    let mut q = Tensor::zeros(&[hidden]);
    let mut c = Tensor::zeros(&[hidden]);
    let mut prev = 0;
    let mut total = 0.0;
    for &next in seq.iter().chain(std::iter::once(&0)) {
        let (a2, r) = model.attend(&enc, &a, &q).unwrap();
        let (probs, q2, c2) = model.decode_step(&r, &q, &c, prev).unwrap();
        total += probs.data()[next].ln();
        a = a2;
        q = q2;
        c = c2;
        prev = next;
    }
    total
}

/// Exhaustive argmax of the joint score over all sequences up to
/// `max_len`; ties go to the lexicographically smaller sequence.
pub fn oracle_best(model: &Seq2SeqModel, x: &Tensor, alpha: f64, max_len: usize) -> (Vec<usize>, f64) {
    let enc = model.encode(x).unwrap();
    let lp = model.ctc_log_probs(&enc).unwrap();
    let ctc = ctc_by_paths(&lp);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in all_sequences(model.vocab.size(), max_len) {
        let c = ctc.get(&seq).copied().unwrap_or(f64::NEG_INFINITY);
        let s = joint(alpha, c, attention_score(model, x, &seq));
        let better = match &best {
            None => true,
            Some((b_seq, b)) => s > *b || (s == *b && seq < *b_seq),
        };
        if better {
            best = Some((seq, s));
        }
    }
    best.unwrap()
}

/// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)` over every
/// entry of every parameter, with central differences of step `h`. Returns
/// the error and the offending parameter name.
pub fn fd_max_error<F>(params: &ParamStore, h: f64, build: F) -> (f64, String)
where
    F: Fn(&mut Graph, &ParamNodes) -> NodeId,
{
    let mut g = Graph::new();
    let nodes = params.register_all(&mut g);
    let loss = build(&mut g, &nodes);
    let grads = g.backward(loss).unwrap();
    let value = |store: &ParamStore| {
        let mut g = Graph::new();
        let nodes = store.register_all(&mut g);
        let loss = build(&mut g, &nodes);
        g.value(loss).item()
    };
    let mut probe = params.clone();
    let mut worst = (0.0, String::new());
    for (name, t) in params.iter() {
        let grad = grads.get(name);
        for i in 0..t.len() {
            let orig = t.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = value(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = value(&probe);
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad.map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            if err > worst.0 {
                worst = (err, name.clone());
            }
        }
    }
    worst
}

/// Coefficient `k` of the Hamming-weighted orthonormal DCT-II of `x`,
/// summed term by term.
pub fn dct_oracle(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        let hamming = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n as f64 - 1.0)).cos();
        let angle = PI / n as f64 * (i as f64 + 0.5) * k as f64;
        acc += hamming * v * angle.cos();
    }
    let norm = if k == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
    acc * norm.sqrt()
}

pub fn recursive_distance(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = recursive_distance(ra, rb) + usize::from(x != y);
            sub.min(recursive_distance(ra, b) + 1)
                .min(recursive_distance(a, rb) + 1)
        }
    }
}

/// A seconds-long experiment touching every regime.
pub const TINY_SPEC: &str = "\
regimes = mono-fbank,mono-sbn,multi,multi-finetune,transfer
languages = alpha
train_utts = 6
eval_utts = 3
seeds = 1
fractions = 0.5,1.0
finetune_checkpoints = 1,2
variants = out,att-ctc-out
phase2_epochs = 1
phase3_epochs = 1
beam = 2
train.epochs = 1
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

/// Every file below `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Scalar `Σ w ⊙ node` with fixed pseudo-random weights, so no output
/// direction is trivially flat (plain sums of softmax rows would be).
pub fn readout(g: &mut Graph, node: NodeId, seed: u64) -> NodeId {
    let shape = g.value(node).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.input(rand_tensor(&mut rng, &shape));
    let m = g.mul(node, w).unwrap();
    g.sum(m).unwrap()
}
