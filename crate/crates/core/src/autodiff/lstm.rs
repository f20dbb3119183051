//! LSTM cell built from graph primitives. Gate layout in the stacked
//! `4H` pre-activation is input, forget, cell candidate, output.

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamNodes, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4H, in]`
    pub w_ih: NodeId,
    /// `[4H, H]`
    pub w_hh: NodeId,
    /// `[4H]`
    pub bias: NodeId,
}

impl LstmWeights {
    pub fn lookup(nodes: &ParamNodes, prefix: &str) -> Result<Self> {
        Ok(LstmWeights {
            w_ih: nodes.get(&format!("{prefix}.w_ih"))?,
            w_hh: nodes.get(&format!("{prefix}.w_hh"))?,
            bias: nodes.get(&format!("{prefix}.b"))?,
        })
    }

    pub fn hidden(&self, g: &Graph) -> usize {
        g.value(self.w_hh).cols()
    }
}

/// Adds `{prefix}.w_ih`, `{prefix}.w_hh`, `{prefix}.b` to `store`.
pub fn init_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut R,
) {
    store.insert(
        format!("{prefix}.w_ih"),
        Tensor::uniform(&[4 * hidden, input], scale, rng),
    );
    store.insert(
        format!("{prefix}.w_hh"),
        Tensor::uniform(&[4 * hidden, hidden], scale, rng),
    );
    store.insert(
        format!("{prefix}.b"),
        Tensor::uniform(&[4 * hidden], scale, rng),
    );
}

/// One recurrence step from an input vector.
pub fn lstm_step(
    g: &mut Graph,
    w: &LstmWeights,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden = w.hidden(g);
    if g.value(h).len() != hidden || g.value(c).len() != hidden {
        return Err(Error::Dimension(format!(
            "lstm state of size {}/{} for hidden size {hidden}",
            g.value(h).len(),
            g.value(c).len()
        )));
    }
    let gx = g.affine(x, w.w_ih, Some(w.bias))?;
    lstm_cell(g, gx, w.w_hh, h, c)
}

/// Recurrence step given the already projected input part `W_ih·x + b`.
pub fn lstm_cell(
    g: &mut Graph,
    input_gates: NodeId,
    w_hh: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden = g.value(w_hh).cols();
    let gh = g.affine(h, w_hh, None)?;
    let gates = g.add(input_gates, gh)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, hidden)?;
    let cand = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(store: &ParamStore, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let p = store.register_all(&mut g);
        let w = LstmWeights::lookup(&p, "l").unwrap();
        let (x, h, c) = (g.input(x.clone()), g.input(h.clone()), g.input(c.clone()));
        let (h2, c2) = lstm_step(&mut g, &w, x, h, c).unwrap();
        (g.value(h2).clone(), g.value(c2).clone())
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut store = ParamStore::new();
        store.insert("l.w_ih", Tensor::zeros(&[12, 2]));
        store.insert("l.w_hh", Tensor::zeros(&[12, 3]));
        store.insert("l.b", Tensor::zeros(&[12]));
        let (h, c) = run(
            &store,
            &Tensor::vector(vec![0.7, -3.0]),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[3]),
        );
        assert_eq!(h.data(), &[0.0; 3]);
        assert_eq!(c.data(), &[0.0; 3]);
    }

    #[test]
    fn output_is_bounded_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        init_lstm(&mut store, "l", 4, 5, 3.0, &mut rng);
        let x = Tensor::uniform(&[4], 10.0, &mut rng);
        let h = Tensor::uniform(&[5], 1.0, &mut rng);
        let c = Tensor::uniform(&[5], 5.0, &mut rng);
        let (h1, c1) = run(&store, &x, &h, &c);
        let (h2, c2) = run(&store, &x, &h, &c);
        assert_eq!(h1.bits(), h2.bits());
        assert_eq!(c1.bits(), c2.bits());
        assert!(h1.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_lstm(&mut store, "l", 2, 3, 0.1, &mut rng);
        let mut g = Graph::new();
        let p = store.register_all(&mut g);
        let w = LstmWeights::lookup(&p, "l").unwrap();
        let x = g.input(Tensor::zeros(&[2]));
        let h = g.input(Tensor::zeros(&[4]));
        let c = g.input(Tensor::zeros(&[3]));
        assert!(lstm_step(&mut g, &w, x, h, c).is_err());
    }
}
