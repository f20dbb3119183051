//! Joint CTC-attention network: a BLSTMP encoder shared by a CTC head and a
//! location-aware attention decoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::vocab::{Vocabulary, SPECIAL};
use crate::autodiff::{
    init_lstm, lstm_cell, lstm_step, Graph, LstmWeights, NodeId, ParamNodes, ParamStore, Tensor,
};
use crate::error::{Error, Result};

/// Parameter groups addressable by transfer plans. Tensor names start with
/// the group prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Attention,
    Decoder,
    /// Internal layer of the CTC head.
    Ctc,
    /// Every vocabulary-sized tensor: the attention output softmax, the CTC
    /// output projection and the previous-label embedding.
    Output,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::Attention,
        ParamGroup::Decoder,
        ParamGroup::Ctc,
        ParamGroup::Output,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "enc.",
            ParamGroup::Attention => "att.",
            ParamGroup::Decoder => "dec.",
            ParamGroup::Ctc => "ctc.",
            ParamGroup::Output => "out.",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        Self::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Attention => "attention",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Ctc => "ctc",
            ParamGroup::Output => "output",
        };
        f.write_str(s)
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter group {s:?}")))
    }
}

/// Encoder output `h`: `[T, P]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub h: Tensor,
}

impl EncoderState {
    pub fn frames(&self) -> usize {
        self.h.rows()
    }
}

/// Decoder recurrent state `(q, cell)`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub q: NodeId,
    pub cell: NodeId,
}

/// Encoder outputs on a graph together with the query-independent part of
/// the attention energies, `Lin(h_t)` for all `t`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    pub h: NodeId,
    pub h_proj: NodeId,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl Seq2SeqModel {
    /// Fresh model with every tensor uniform in `±config.init_scale`, drawn
    /// from a generator seeded with `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.size() == 0 {
            return Err(Error::Invalid("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(&config, vocab.width(), &mut rng);
        Ok(Seq2SeqModel {
            config,
            vocab,
            params,
        })
    }

    /// Expected shape of every tensor for this config and vocabulary.
    pub fn expected_shapes(config: &ModelConfig, width: usize) -> Vec<(String, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let store = init_params(config, width, &mut rng);
        store
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    /// Checks that the parameter set matches config and vocabulary.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::expected_shapes(&self.config, self.vocab.width());
        if expected.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn group_names(&self, group: ParamGroup) -> Vec<String> {
        self.params
            .names()
            .filter(|n| ParamGroup::of(n) == Some(group))
            .cloned()
            .collect()
    }

    /// Redraws every tensor of `group` uniformly in `±init_scale`.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, group: ParamGroup, rng: &mut R) {
        let scale = self.config.init_scale;
        for name in self.group_names(group) {
            let shape = self.params.get(&name).unwrap().shape().to_vec();
            self.params
                .insert(name, Tensor::uniform(&shape, scale, rng));
        }
    }

    /// Swaps in a new vocabulary; every vocabulary-sized tensor (the
    /// [`ParamGroup::Output`] group) is redrawn at the new width.
    pub fn replace_vocabulary<R: Rng + ?Sized>(&mut self, vocab: Vocabulary, rng: &mut R) {
        let shapes = Self::expected_shapes(&self.config, vocab.width());
        let scale = self.config.init_scale;
        for (name, shape) in shapes {
            if ParamGroup::of(&name) == Some(ParamGroup::Output) {
                self.params
                    .insert(name, Tensor::uniform(&shape, scale, rng));
            }
        }
        self.vocab = vocab;
    }

    pub fn graph_params(&self, g: &mut Graph) -> ParamNodes {
        self.params.register_frozen(g)
    }

    /// Runs the encoder on a `[T, input_dim]` feature matrix.
    pub fn encode(&self, features: &Tensor) -> Result<EncoderState> {
        let mut g = Graph::new();
        let p = self.graph_params(&mut g);
        let x = g.input(features.clone());
        let h = encode(&mut g, &p, &self.config, x)?;
        Ok(EncoderState {
            h: g.value(h).clone(),
        })
    }

    /// `[T, V+1]` CTC log-probabilities, blank in column 0.
    pub fn ctc_log_probs(&self, enc: &EncoderState) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.graph_params(&mut g);
        let h = g.input(enc.h.clone());
        let lp = ctc_head(&mut g, &p, h)?;
        Ok(g.value(lp).clone())
    }

    /// One attention step on values: returns the new weights and the context.
    pub fn attend(
        &self,
        enc: &EncoderState,
        a_prev: &Tensor,
        q_prev: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.graph_params(&mut g);
        let h = g.input(enc.h.clone());
        let mem = prepare_attention(&mut g, &p, h)?;
        let a = g.input(a_prev.clone());
        let q = g.input(q_prev.clone());
        let (a, r) = attend(&mut g, &p, &mem, a, q)?;
        Ok((g.value(a).clone(), g.value(r).clone()))
    }

    /// One decoder step on values: returns the output distribution (not
    /// log) over `V + 1` symbols and the new `(q, cell)`.
    pub fn decode_step(
        &self,
        context: &Tensor,
        q_prev: &Tensor,
        cell_prev: &Tensor,
        prev_label: usize,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.graph_params(&mut g);
        let r = g.input(context.clone());
        let state = DecoderState {
            q: g.input(q_prev.clone()),
            cell: g.input(cell_prev.clone()),
        };
        let (logp, next) = decode_step(&mut g, &p, r, state, prev_label)?;
        let probs = g.value(logp).data().iter().map(|v| v.exp()).collect();
        Ok((
            Tensor::vector(probs),
            g.value(next.q).clone(),
            g.value(next.cell).clone(),
        ))
    }

    /// `log p_att(C·eos | X)` under teacher forcing, plus the per-step terms.
    pub fn attention_log_likelihood(
        &self,
        features: &Tensor,
        target: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.graph_params(&mut g);
        let x = g.input(features.clone());
        let h = encode(&mut g, &p, &self.config, x)?;
        let steps = attention_step_log_probs(&mut g, &p, &self.config, h, target)?;
        let terms: Vec<f64> = steps.iter().map(|&n| g.value(n).item()).collect();
        Ok((terms.iter().sum(), terms))
    }
}

fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, width: usize, rng: &mut R) -> ParamStore {
    let s = cfg.init_scale;
    let mut store = ParamStore::new();
    let mut input = cfg.input_dim;
    for l in 0..cfg.encoder_layers {
        init_lstm(
            &mut store,
            &format!("enc.l{l}.fwd"),
            input,
            cfg.encoder_hidden,
            s,
            rng,
        );
        init_lstm(
            &mut store,
            &format!("enc.l{l}.bwd"),
            input,
            cfg.encoder_hidden,
            s,
            rng,
        );
        store.insert(
            format!("enc.l{l}.proj.w"),
            Tensor::uniform(&[cfg.encoder_proj, 2 * cfg.encoder_hidden], s, rng),
        );
        store.insert(
            format!("enc.l{l}.proj.b"),
            Tensor::uniform(&[cfg.encoder_proj], s, rng),
        );
        input = cfg.encoder_proj;
    }
    let (p, a, c) = (cfg.encoder_proj, cfg.attention_dim, cfg.attention_channels);
    store.insert("att.w_q", Tensor::uniform(&[a, cfg.decoder_hidden], s, rng));
    store.insert("att.w_h", Tensor::uniform(&[a, p], s, rng));
    store.insert(
        "att.conv",
        Tensor::uniform(&[c, cfg.attention_width], s, rng),
    );
    store.insert("att.w_f", Tensor::uniform(&[a, c], s, rng));
    store.insert("att.b_f", Tensor::uniform(&[a], s, rng));
    store.insert("att.g", Tensor::uniform(&[1, a], s, rng));
    init_lstm(
        &mut store,
        "dec.lstm",
        cfg.embed_dim + p,
        cfg.decoder_hidden,
        s,
        rng,
    );
    store.insert("ctc.proj.w", Tensor::uniform(&[cfg.ctc_hidden, p], s, rng));
    store.insert("ctc.proj.b", Tensor::uniform(&[cfg.ctc_hidden], s, rng));
    store.insert(
        "out.embed",
        Tensor::uniform(&[width, cfg.embed_dim], s, rng),
    );
    store.insert(
        "out.att.w",
        Tensor::uniform(&[width, cfg.decoder_hidden + p], s, rng),
    );
    store.insert("out.att.b", Tensor::uniform(&[width], s, rng));
    store.insert(
        "out.ctc.w",
        Tensor::uniform(&[width, cfg.ctc_hidden], s, rng),
    );
    store.insert("out.ctc.b", Tensor::uniform(&[width], s, rng));
    store
}

/// Runs a unidirectional LSTM over the rows of `x: [T, in]`, returning `[T, H]`.
fn run_lstm(g: &mut Graph, w: &LstmWeights, x: NodeId, reverse: bool) -> Result<NodeId> {
    let frames = g.value(x).rows();
    let hidden = w.hidden(g);
    let gates = g.affine(x, w.w_ih, Some(w.bias))?;
    let mut h = g.input(Tensor::zeros(&[hidden]));
    let mut c = g.input(Tensor::zeros(&[hidden]));
    let mut outputs = vec![h; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let gx = g.row(gates, t)?;
        let (h2, c2) = lstm_cell(g, gx, w.w_hh, h, c)?;
        h = h2;
        c = c2;
        outputs[t] = h;
    }
    g.stack_rows(&outputs)
}

/// One bidirectional layer before projection: `[T, 2H]`, forward channels first.
pub fn blstm_layer(g: &mut Graph, p: &ParamNodes, layer: usize, x: NodeId) -> Result<NodeId> {
    let fwd = LstmWeights::lookup(p, &format!("enc.l{layer}.fwd"))?;
    let bwd = LstmWeights::lookup(p, &format!("enc.l{layer}.bwd"))?;
    let in_dim = g.value(fwd.w_ih).cols();
    if g.value(x).cols() != in_dim {
        return Err(Error::Dimension(format!(
            "encoder layer {layer} expects {in_dim}-dim input, got {:?}",
            g.value(x).shape()
        )));
    }
    let f = run_lstm(g, &fwd, x, false)?;
    let b = run_lstm(g, &bwd, x, true)?;
    g.concat(&[f, b])
}

/// BLSTMP encoder: `[T, input_dim]` to `[T, encoder_proj]`.
pub fn encode(g: &mut Graph, p: &ParamNodes, cfg: &ModelConfig, x: NodeId) -> Result<NodeId> {
    if g.value(x).shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "features must be [T, D], got {:?}",
            g.value(x).shape()
        )));
    }
    let mut h = x;
    for l in 0..cfg.encoder_layers {
        let both = blstm_layer(g, p, l, h)?;
        let proj = g.affine(
            both,
            p.get(&format!("enc.l{l}.proj.w"))?,
            Some(p.get(&format!("enc.l{l}.proj.b"))?),
        )?;
        h = g.tanh(proj)?;
    }
    Ok(h)
}

/// `[T, V+1]` log-probabilities from encoder states `[T, P]`.
pub fn ctc_head(g: &mut Graph, p: &ParamNodes, h: NodeId) -> Result<NodeId> {
    let hid = g.affine(h, p.get("ctc.proj.w")?, Some(p.get("ctc.proj.b")?))?;
    let hid = g.tanh(hid)?;
    let logits = g.affine(hid, p.get("out.ctc.w")?, Some(p.get("out.ctc.b")?))?;
    g.log_softmax(logits)
}

pub fn prepare_attention(g: &mut Graph, p: &ParamNodes, h: NodeId) -> Result<AttentionMemory> {
    let h_proj = g.affine(h, p.get("att.w_h")?, None)?;
    Ok(AttentionMemory {
        h,
        h_proj,
        frames: g.value(h).rows(),
    })
}

/// Uniform initial attention over `frames`.
pub fn initial_attention(frames: usize) -> Tensor {
    Tensor::full(&[frames], 1.0 / frames as f64)
}

/// Location-aware attention. With `f = K * a_prev`, the energies are
/// `e_t = gᵀ tanh(W_q q + W_h h_t + W_f f_t + b_f)`; `a = softmax(e)` and the
/// context is `r = Σ_t a_t h_t`.
pub fn attend(
    g: &mut Graph,
    p: &ParamNodes,
    mem: &AttentionMemory,
    a_prev: NodeId,
    q_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    if g.value(a_prev).len() != mem.frames {
        return Err(Error::Dimension(format!(
            "previous attention covers {} frames, encoder has {}",
            g.value(a_prev).len(),
            mem.frames
        )));
    }
    let loc = g.conv1d(a_prev, p.get("att.conv")?)?;
    let loc = g.affine(loc, p.get("att.w_f")?, Some(p.get("att.b_f")?))?;
    let query = g.affine(q_prev, p.get("att.w_q")?, None)?;
    let pre = g.add(mem.h_proj, loc)?;
    let pre = g.add_row(pre, query)?;
    let act = g.tanh(pre)?;
    let energies = g.affine(act, p.get("att.g")?, None)?;
    let energies = g.reshape(energies, &[mem.frames])?;
    let a = g.softmax(energies)?;
    let r = g.matmul(a, mem.h)?;
    Ok((a, r))
}

pub fn initial_decoder_state(g: &mut Graph, p: &ParamNodes) -> Result<DecoderState> {
    let hidden = g.value(p.get("dec.lstm.w_hh")?).cols();
    Ok(DecoderState {
        q: g.input(Tensor::zeros(&[hidden])),
        cell: g.input(Tensor::zeros(&[hidden])),
    })
}

/// Consumes the context `r_l`, the previous label and `q_{l−1}`; returns
/// log-probabilities over the `V + 1` outputs (id 0 is end-of-sequence) and
/// the new state.
pub fn decode_step(
    g: &mut Graph,
    p: &ParamNodes,
    context: NodeId,
    state: DecoderState,
    prev_label: usize,
) -> Result<(NodeId, DecoderState)> {
    let embed = p.get("out.embed")?;
    let width = g.value(embed).rows();
    if prev_label >= width {
        return Err(Error::LabelOutOfRange {
            label: prev_label,
            size: width,
        });
    }
    let emb = g.row(embed, prev_label)?;
    let input = g.concat(&[emb, context])?;
    let w = LstmWeights::lookup(p, "dec.lstm")?;
    let (q, cell) = lstm_step(g, &w, input, state.q, state.cell)?;
    let feat = g.concat(&[q, context])?;
    let logits = g.affine(feat, p.get("out.att.w")?, Some(p.get("out.att.b")?))?;
    let logp = g.log_softmax(logits)?;
    Ok((logp, DecoderState { q, cell }))
}

/// Teacher-forced per-step `log p(c_l | c_<l, X)` nodes for `target`
/// followed by end-of-sequence.
pub fn attention_step_log_probs(
    g: &mut Graph,
    p: &ParamNodes,
    _cfg: &ModelConfig,
    h: NodeId,
    target: &[usize],
) -> Result<Vec<NodeId>> {
    let mem = prepare_attention(g, p, h)?;
    let mut a = g.input(initial_attention(mem.frames));
    let mut state = initial_decoder_state(g, p)?;
    let mut prev = SPECIAL;
    let mut out = Vec::with_capacity(target.len() + 1);
    for &next in target.iter().chain(std::iter::once(&SPECIAL)) {
        let (a2, r) = attend(g, p, &mem, a, state.q)?;
        let (logp, s2) = decode_step(g, p, r, state, prev)?;
        if next >= g.value(logp).len() {
            return Err(Error::LabelOutOfRange {
                label: next,
                size: g.value(logp).len(),
            });
        }
        let picked = g.gather_sum(logp, &[next])?;
        out.push(picked);
        a = a2;
        state = s2;
        prev = next;
    }
    Ok(out)
}

/// Summed teacher-forced attention log-likelihood `log p_att(C·eos | X)`.
pub fn attention_log_likelihood(
    g: &mut Graph,
    p: &ParamNodes,
    cfg: &ModelConfig,
    h: NodeId,
    target: &[usize],
) -> Result<NodeId> {
    let steps = attention_step_log_probs(g, p, cfg, h, target)?;
    let stacked = g.stack_rows(&steps)?;
    g.sum(stacked)
}
