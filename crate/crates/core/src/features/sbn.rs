//! Two-stage stacked bottleneck network with block-softmax outputs.
//!
//! Each stage is `in → H → H → BN (linear) → H → per-language softmax
//! blocks`, sigmoid hidden units. Stage 1 reads the 222-dim DCT context,
//! stage 2 reads 21 stacked stage-1 bottleneck frames taken every 5th frame.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::context::{
    stack_indices, stage1_input, DCT_COEFFS, DOWNSAMPLE, STAGE1_CONTEXT, STAGE2_CONTEXT,
};
use super::{FeatureSequence, PhoneTargetSequence, BN1_DIM, BN2_DIM, RAW_DIM, STAGE1_INPUT_DIM};
use crate::autodiff::{Graph, NodeId, ParamNodes, ParamStore, Tensor};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::checkpoint::{Reader, Writer};

#[derive(Clone, Debug, PartialEq)]
pub struct SbnConfig {
    pub mel_bands: usize,
    pub pitch_dims: usize,
    pub stack1: usize,
    pub dct_coeffs: usize,
    /// Hidden layers per stage, bottleneck included.
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub bn1_dim: usize,
    pub stack2: usize,
    pub downsample: usize,
    pub bn2_dim: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for SbnConfig {
    fn default() -> Self {
        SbnConfig {
            mel_bands: 24,
            pitch_dims: 13,
            stack1: STAGE1_CONTEXT,
            dct_coeffs: DCT_COEFFS,
            hidden_layers: 4,
            hidden_units: 64,
            bn1_dim: BN1_DIM,
            stack2: STAGE2_CONTEXT,
            downsample: DOWNSAMPLE,
            bn2_dim: BN2_DIM,
            learning_rate: 1.0,
            clip_norm: 1.0,
            pretrain_epochs: 3,
            joint_epochs: 3,
            init_scale: 0.3,
            seed: 0,
        }
    }
}

impl SbnConfig {
    pub fn validate(&self) -> Result<()> {
        let fixed = [
            ("mel_bands", self.mel_bands, 24),
            ("pitch_dims", self.pitch_dims, 13),
            ("stack1", self.stack1, STAGE1_CONTEXT),
            ("dct_coeffs", self.dct_coeffs, DCT_COEFFS),
            ("hidden_layers", self.hidden_layers, 4),
            ("bn1_dim", self.bn1_dim, BN1_DIM),
            ("stack2", self.stack2, STAGE2_CONTEXT),
            ("downsample", self.downsample, DOWNSAMPLE),
            ("bn2_dim", self.bn2_dim, BN2_DIM),
        ];
        for (name, got, want) in fixed {
            if got != want {
                return Err(Error::Config(format!(
                    "sbn {name} is fixed at {want}, got {got}"
                )));
            }
        }
        if (self.mel_bands + self.pitch_dims) * self.dct_coeffs != STAGE1_INPUT_DIM {
            return Err(Error::Config("stage-1 input must be 222-dim".into()));
        }
        if self.hidden_units == 0 || !(self.learning_rate > 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config(
                "sbn hidden_units and learning_rate must be positive, clip_norm non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("mel_bands", self.mel_bands);
        kv.set("pitch_dims", self.pitch_dims);
        kv.set("stack1", self.stack1);
        kv.set("dct_coeffs", self.dct_coeffs);
        kv.set("hidden_layers", self.hidden_layers);
        kv.set("hidden_units", self.hidden_units);
        kv.set("bn1_dim", self.bn1_dim);
        kv.set("stack2", self.stack2);
        kv.set("downsample", self.downsample);
        kv.set("bn2_dim", self.bn2_dim);
        kv.set("learning_rate", format!("{:?}", self.learning_rate));
        kv.set("clip_norm", format!("{:?}", self.clip_norm));
        kv.set("pretrain_epochs", self.pretrain_epochs);
        kv.set("joint_epochs", self.joint_epochs);
        kv.set("init_scale", format!("{:?}", self.init_scale));
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = SbnConfig::default();
        let cfg = SbnConfig {
            mel_bands: kv.get_or("mel_bands", d.mel_bands)?,
            pitch_dims: kv.get_or("pitch_dims", d.pitch_dims)?,
            stack1: kv.get_or("stack1", d.stack1)?,
            dct_coeffs: kv.get_or("dct_coeffs", d.dct_coeffs)?,
            hidden_layers: kv.get_or("hidden_layers", d.hidden_layers)?,
            hidden_units: kv.get_or("hidden_units", d.hidden_units)?,
            bn1_dim: kv.get_or("bn1_dim", d.bn1_dim)?,
            stack2: kv.get_or("stack2", d.stack2)?,
            downsample: kv.get_or("downsample", d.downsample)?,
            bn2_dim: kv.get_or("bn2_dim", d.bn2_dim)?,
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
            pretrain_epochs: kv.get_or("pretrain_epochs", d.pretrain_epochs)?,
            joint_epochs: kv.get_or("joint_epochs", d.joint_epochs)?,
            init_scale: kv.get_or("init_scale", d.init_scale)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training example: mean-subtracted 37-dim raw features with frame labels.
#[derive(Clone, Debug)]
pub struct SbnUtterance {
    pub features: FeatureSequence,
    pub targets: PhoneTargetSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SbnParams {
    pub config: SbnConfig,
    /// Softmax blocks as `(language, phone-state count)`, in output order.
    pub blocks: Vec<(String, usize)>,
    pub params: ParamStore,
}

#[derive(Clone, Debug, Default)]
pub struct SbnTrainReport {
    pub stage1_loss: Vec<f64>,
    pub joint_loss: Vec<f64>,
    /// Stage-2 frame accuracy on the training data after training.
    pub frame_accuracy: f64,
}

/// Per-block softmax of a concatenated logit vector; each block sums to 1.
pub fn block_softmax(logits: &[f64], sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.iter().sum::<usize>() != logits.len() {
        return Err(Error::Dimension(format!(
            "block sizes {sizes:?} do not cover {} logits",
            logits.len()
        )));
    }
    let mut out = logits.to_vec();
    let mut start = 0;
    for &s in sizes {
        crate::autodiff::softmax_in_place(&mut out[start..start + s]);
        start += s;
    }
    Ok(out)
}

const NORM_IN_MEAN: &str = "norm.in.mean";
const NORM_IN_SCALE: &str = "norm.in.scale";
const NORM_OUT_MEAN: &str = "norm.out.mean";
const NORM_OUT_SCALE: &str = "norm.out.scale";

fn init_stage(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    bn: usize,
    blocks: &[(String, usize)],
    scale: f64,
    rng: &mut ChaCha8Rng,
) {
    let layers = [
        ("h0", input, hidden),
        ("h1", hidden, hidden),
        ("bn", hidden, bn),
        ("h2", bn, hidden),
    ];
    for (name, i, o) in layers {
        store.insert(
            format!("{prefix}.{name}.w"),
            Tensor::uniform(&[o, i], scale, rng),
        );
        store.insert(
            format!("{prefix}.{name}.b"),
            Tensor::uniform(&[o], scale, rng),
        );
    }
    for (lang, size) in blocks {
        store.insert(
            format!("{prefix}.out.{lang}.w"),
            Tensor::uniform(&[*size, hidden], scale, rng),
        );
        store.insert(
            format!("{prefix}.out.{lang}.b"),
            Tensor::uniform(&[*size], scale, rng),
        );
    }
}

fn layer(g: &mut Graph, p: &ParamNodes, name: &str, x: NodeId) -> Result<NodeId> {
    g.affine(
        x,
        p.get(&format!("{name}.w"))?,
        Some(p.get(&format!("{name}.b"))?),
    )
}

/// Returns the bottleneck output and the top hidden layer.
fn stage_forward(
    g: &mut Graph,
    p: &ParamNodes,
    prefix: &str,
    x: NodeId,
) -> Result<(NodeId, NodeId)> {
    let h = layer(g, p, &format!("{prefix}.h0"), x)?;
    let h = g.sigmoid(h)?;
    let h = layer(g, p, &format!("{prefix}.h1"), h)?;
    let h = g.sigmoid(h)?;
    let bn = layer(g, p, &format!("{prefix}.bn"), h)?;
    let top = layer(g, p, &format!("{prefix}.h2"), bn)?;
    let top = g.sigmoid(top)?;
    Ok((bn, top))
}

fn block_log_probs(
    g: &mut Graph,
    p: &ParamNodes,
    prefix: &str,
    lang: &str,
    top: NodeId,
) -> Result<NodeId> {
    let logits = layer(g, p, &format!("{prefix}.out.{lang}"), top)?;
    g.log_softmax(logits)
}

fn normalize(x: &Tensor, mean: &Tensor, scale: &Tensor) -> Tensor {
    let d = x.cols();
    let (m, s) = (mean.data(), scale.data());
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - m[i % d]) * s[i % d])
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

fn column_stats(mats: &[Tensor]) -> (Tensor, Tensor) {
    let d = mats[0].cols();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0.0;
    for m in mats {
        for r in 0..m.rows() {
            for (c, v) in m.row(r).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| 1.0 / (q / n - m * m).max(1e-8).sqrt())
        .collect();
    (Tensor::vector(mean), Tensor::vector(scale))
}

fn sgd_step(params: &mut ParamStore, grads: &crate::autodiff::Gradients, lr: f64, clip: f64) {
    let norm = grads.global_norm();
    let lr = if clip > 0.0 && norm > clip { lr * clip / norm } else { lr };
    for (name, g) in grads.iter() {
        let t = params.get_mut(name).expect("gradient for known parameter");
        for (v, d) in t.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
}

impl SbnParams {
    fn block_size(&self, lang: &str) -> Result<usize> {
        self.blocks
            .iter()
            .find(|(l, _)| l == lang)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    /// Fails unless every tensor, including the post-training output
    /// normalisation, is present.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for name in [NORM_IN_MEAN, NORM_IN_SCALE, NORM_OUT_MEAN, NORM_OUT_SCALE] {
            if self.params.get(name).is_none() {
                return Err(Error::MissingStage {
                    stage: "sbn-train".into(),
                    detail: format!("SBN parameters lack {name}; train the extractor first"),
                });
            }
        }
        for prefix in ["s1", "s2"] {
            for l in ["h0", "h1", "bn", "h2"] {
                self.params.require(&format!("{prefix}.{l}.w"))?;
            }
        }
        Ok(())
    }

    fn stage1_normalized(&self, raw: &FeatureSequence) -> Result<Tensor> {
        raw.expect_dim(RAW_DIM, "SBN extractor")?;
        let x = stage1_input(raw)?;
        Ok(normalize(
            &x.frames,
            self.params.require(NORM_IN_MEAN)?,
            self.params.require(NORM_IN_SCALE)?,
        ))
    }

    /// Runs both stages on a graph; returns the stage-2 bottleneck and top hidden layer.
    fn forward(&self, g: &mut Graph, p: &ParamNodes, x: NodeId) -> Result<(NodeId, NodeId)> {
        let frames = g.value(x).rows();
        let (bn1, _) = stage_forward(g, p, "s1", x)?;
        let idx = stack_indices(frames, self.config.stack2, self.config.downsample);
        let stacked = g.gather_rows(bn1, &idx)?;
        let rows = idx.len() / self.config.stack2;
        let stacked = g.reshape(stacked, &[rows, self.config.stack2 * self.config.bn1_dim])?;
        stage_forward(g, p, "s2", stacked)
    }

    /// First-stage bottleneck features, `[T, 80]`.
    pub fn stage1_bottleneck(&self, raw: &FeatureSequence) -> Result<FeatureSequence> {
        let x = self.stage1_normalized(raw)?;
        let mut g = Graph::new();
        let p = self.params.register_frozen(&mut g);
        let x = g.input(x);
        let (bn, _) = stage_forward(&mut g, &p, "s1", x)?;
        FeatureSequence::new(raw.id.clone(), g.value(bn).clone())
    }

    fn bn2_unnormalized(&self, raw: &FeatureSequence) -> Result<Tensor> {
        let x = self.stage1_normalized(raw)?;
        let mut g = Graph::new();
        let p = self.params.register_frozen(&mut g);
        let x = g.input(x);
        let (bn2, _) = self.forward(&mut g, &p, x)?;
        Ok(g.value(bn2).clone())
    }

    /// Stage-2 phone-state predictions at the kept (every 5th) frames.
    pub fn predict_states(&self, raw: &FeatureSequence, language: &str) -> Result<Vec<usize>> {
        self.block_size(language)?;
        let x = self.stage1_normalized(raw)?;
        let mut g = Graph::new();
        let p = self.params.register_frozen(&mut g);
        let x = g.input(x);
        let (_, top) = self.forward(&mut g, &p, x)?;
        let lp = block_log_probs(&mut g, &p, "s2", language, top)?;
        let lp = g.value(lp);
        Ok((0..lp.rows())
            .map(|r| {
                lp.row(r)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect())
    }

    /// Fraction of kept frames whose predicted state matches the label.
    pub fn frame_accuracy(&self, data: &[SbnUtterance]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for u in data {
            let pred = self.predict_states(&u.features, &u.targets.language)?;
            for (j, p) in pred.iter().enumerate() {
                total += 1;
                hit += (*p == u.targets.labels[j * self.config.downsample]) as usize;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(b"SBNM");
        w.u32(1);
        w.str(&self.config.to_key_values().to_string());
        w.u32(self.blocks.len());
        for (lang, size) in &self.blocks {
            w.str(lang);
            w.u32(*size);
        }
        w.u32(self.params.len());
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape().len());
            for &d in t.shape() {
                w.u32(d);
            }
            for v in t.data() {
                w.bytes(&v.to_le_bytes());
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "sbn");
        if r.take(4)? != b"SBNM" || r.u32()? != 1 {
            return Err(Error::format("sbn", "bad magic or version"));
        }
        let config = SbnConfig::from_key_values(&KeyValues::parse(r.str()?)?)?;
        let n_blocks = r.u32()?;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let lang = r.str()?.to_string();
            blocks.push((lang, r.u32()?));
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.str()?.to_string();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if !r.at_end() {
            return Err(Error::format("sbn", "trailing bytes"));
        }
        Ok(SbnParams {
            config,
            blocks,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Trains both stages: stage 1 alone on per-frame targets, then both stages
/// jointly through the stage-2 loss. Each utterance only touches the softmax
/// block of its own language.
pub fn train_sbn(
    corpus: &[SbnUtterance],
    config: &SbnConfig,
    blocks: &[(String, usize)],
) -> Result<(SbnParams, SbnTrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Invalid("empty SBN training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let h = config.hidden_units;
    init_stage(
        &mut store,
        "s1",
        STAGE1_INPUT_DIM,
        h,
        config.bn1_dim,
        blocks,
        config.init_scale,
        &mut rng,
    );
    init_stage(
        &mut store,
        "s2",
        config.stack2 * config.bn1_dim,
        h,
        config.bn2_dim,
        blocks,
        config.init_scale,
        &mut rng,
    );
    let mut sbn = SbnParams {
        config: config.clone(),
        blocks: blocks.to_vec(),
        params: store,
    };

    for u in corpus {
        let size = sbn.block_size(&u.targets.language)?;
        u.features.expect_dim(RAW_DIM, "SBN training")?;
        if u.targets.labels.len() != u.features.len() {
            return Err(Error::Invalid(format!(
                "{}: {} labels for {} frames",
                u.features.id,
                u.targets.labels.len(),
                u.features.len()
            )));
        }
        if let Some(&bad) = u.targets.labels.iter().find(|&&l| l >= size) {
            return Err(Error::LabelOutOfRange { label: bad, size });
        }
    }

    let inputs: Vec<Tensor> = corpus
        .iter()
        .map(|u| stage1_input(&u.features).map(|s| s.frames))
        .collect::<Result<_>>()?;
    let (mean, scale) = column_stats(&inputs);
    let inputs: Vec<Tensor> = inputs.iter().map(|x| normalize(x, &mean, &scale)).collect();
    sbn.params.insert(NORM_IN_MEAN, mean);
    sbn.params.insert(NORM_IN_SCALE, scale);

    let mut report = SbnTrainReport::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let lr = config.learning_rate;
    let trainable_s1 = |n: &str| n.starts_with("s1.");
    let trainable_all = |n: &str| n.starts_with("s1.") || n.starts_with("s2.");

    for _ in 0..config.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let u = &corpus[i];
            let mut g = Graph::new();
            let p = sbn.params.register(&mut g, trainable_s1);
            let x = g.input(inputs[i].clone());
            let (_, top) = stage_forward(&mut g, &p, "s1", x)?;
            let lp = block_log_probs(&mut g, &p, "s1", &u.targets.language, top)?;
            let ll = g.gather_sum(lp, &u.targets.labels)?;
            let loss = g.scale(ll, -1.0 / u.targets.labels.len() as f64)?;
            total += g.value(loss).item();
            let grads = g.backward(loss)?;
            sgd_step(&mut sbn.params, &grads, lr, config.clip_norm);
        }
        report.stage1_loss.push(total / corpus.len() as f64);
    }

    for _ in 0..config.joint_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let u = &corpus[i];
            let mut g = Graph::new();
            let p = sbn.params.register(&mut g, trainable_all);
            let x = g.input(inputs[i].clone());
            let (_, top) = sbn.forward(&mut g, &p, x)?;
            let lp = block_log_probs(&mut g, &p, "s2", &u.targets.language, top)?;
            let kept: Vec<usize> = (0..u.targets.labels.len())
                .step_by(config.downsample)
                .map(|t| u.targets.labels[t])
                .collect();
            let ll = g.gather_sum(lp, &kept)?;
            let loss = g.scale(ll, -1.0 / kept.len() as f64)?;
            total += g.value(loss).item();
            let grads = g.backward(loss)?;
            sgd_step(&mut sbn.params, &grads, lr, config.clip_norm);
        }
        report.joint_loss.push(total / corpus.len() as f64);
    }

    let outputs: Vec<Tensor> = corpus
        .iter()
        .map(|u| sbn.bn2_unnormalized(&u.features))
        .collect::<Result<_>>()?;
    let (mean, scale) = column_stats(&outputs);
    sbn.params.insert(NORM_OUT_MEAN, mean);
    sbn.params.insert(NORM_OUT_SCALE, scale);
    report.frame_accuracy = sbn.frame_accuracy(corpus)?;
    Ok((sbn, report))
}

/// 30-dim standardised stage-2 bottleneck features at one fifth of the
/// input frame rate. Needs no language id.
pub fn extract_sbn(raw: &FeatureSequence, params: &SbnParams) -> Result<FeatureSequence> {
    params.validate()?;
    let bn2 = params.bn2_unnormalized(raw)?;
    let out = normalize(
        &bn2,
        params.params.require(NORM_OUT_MEAN)?,
        params.params.require(NORM_OUT_SCALE)?,
    );
    FeatureSequence::new(raw.id.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(langs: &[(&str, usize)], per_lang: usize) -> Vec<SbnUtterance> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (li, (lang, states)) in langs.iter().enumerate() {
            for u in 0..per_lang {
                let frames = 12;
                let labels: Vec<usize> = (0..frames).map(|t| (t / 4 + u) % states).collect();
                let rows: Vec<Vec<f64>> = labels
                    .iter()
                    .map(|&l| {
                        (0..RAW_DIM)
                            .map(|d| {
                                let proto = if d % (states + 1) == l { 2.0 } else { 0.0 };
                                proto + li as f64 + rand::Rng::random_range(&mut rng, -0.1..0.1)
                            })
                            .collect()
                    })
                    .collect();
                let id = format!("{lang}-{u}");
                out.push(SbnUtterance {
                    features: FeatureSequence::from_rows(&id, &rows).unwrap(),
                    targets: PhoneTargetSequence {
                        id,
                        labels,
                        language: lang.to_string(),
                    },
                });
            }
        }
        out
    }

    fn small_config() -> SbnConfig {
        SbnConfig {
            hidden_units: 8,
            pretrain_epochs: 1,
            joint_epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn block_softmax_blocks_sum_to_one() {
        let p = block_softmax(&[1.0, 2.0, 3.0, -1.0, 0.5], &[3, 2]).unwrap();
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(block_softmax(&[1.0], &[2]).is_err());
    }

    #[test]
    fn other_language_block_gets_zero_gradient() {
        let corpus = tiny_corpus(&[("A", 3), ("B", 4)], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blocks = vec![("A".to_string(), 3), ("B".to_string(), 4)];
        let mut store = ParamStore::new();
        init_stage(
            &mut store,
            "s1",
            STAGE1_INPUT_DIM,
            8,
            80,
            &blocks,
            0.1,
            &mut rng,
        );
        let x = stage1_input(&corpus[0].features).unwrap().frames;
        let mut g = Graph::new();
        let p = store.register_all(&mut g);
        let x = g.input(x);
        let (_, top) = stage_forward(&mut g, &p, "s1", x).unwrap();
        let lp = block_log_probs(&mut g, &p, "s1", "A", top).unwrap();
        let loss = g.gather_sum(lp, &corpus[0].targets.labels).unwrap();
        let grads = g.backward(loss).unwrap();
        for name in ["s1.out.B.w", "s1.out.B.b"] {
            assert!(grads.get(name).unwrap().data().iter().all(|&v| v == 0.0));
        }
        assert!(grads
            .get("s1.out.A.w")
            .unwrap()
            .data()
            .iter()
            .any(|&v| v != 0.0));
    }

    #[test]
    fn training_and_extraction_contracts() {
        let corpus = tiny_corpus(&[("A", 3)], 4);
        let blocks = vec![("A".to_string(), 3)];
        let (sbn, report) = train_sbn(&corpus, &small_config(), &blocks).unwrap();
        assert_eq!(report.stage1_loss.len(), 1);
        let f = extract_sbn(&corpus[0].features, &sbn).unwrap();
        assert_eq!((f.len(), f.dim()), (3, 30));
        let again = extract_sbn(&corpus[0].features, &sbn).unwrap();
        assert_eq!(f.frames.bits(), again.frames.bits());
        assert_eq!(SbnParams::from_bytes(&sbn.to_bytes()).unwrap(), sbn);

        let mut untrained = sbn.clone();
        untrained.params.remove(NORM_OUT_MEAN);
        assert!(extract_sbn(&corpus[0].features, &untrained).is_err());
    }

    #[test]
    fn unknown_language_is_rejected() {
        let corpus = tiny_corpus(&[("C", 3)], 1);
        let blocks = vec![("A".to_string(), 3)];
        assert!(matches!(
            train_sbn(&corpus, &small_config(), &blocks),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn config_invariants() {
        assert!(SbnConfig::default().validate().is_ok());
        let bad = SbnConfig {
            bn2_dim: 40,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let kv = SbnConfig::default().to_key_values();
        assert_eq!(
            SbnConfig::from_key_values(&kv).unwrap(),
            SbnConfig::default()
        );
    }
}
