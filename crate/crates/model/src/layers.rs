use rand::Rng;
use roadforge_autodiff::{AdError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// `w: [inp, out]`, bias zero.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) -> Result<Self, AdError> {
        let w = store.add_glorot(&format!("{name}.w"), &[inp, out], inp, out, rng)?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[out]), true)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var, AdError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self, AdError> {
        let gamma = store.add_const(&format!("{name}.gamma"), &[dim], 1.0, true)?;
        let beta = store.add_const(&format!("{name}.beta"), &[dim], 0.0, true)?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var, AdError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// The two output MLPs shared by the sequential decoders: adjacency logits
/// (`frontier + 1` columns, last one is the stop channel) and `tanh` coords.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    a1: Linear,
    a2: Linear,
    x1: Linear,
    x2: Linear,
}

impl Heads {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        inp: usize,
        hidden: usize,
        frontier: usize,
        rng: &mut R,
    ) -> Result<Self, AdError> {
        Ok(Self {
            a1: Linear::new(store, "head.a1", inp, hidden, rng)?,
            a2: Linear::new(store, "head.a2", hidden, frontier + 1, rng)?,
            x1: Linear::new(store, "head.x1", inp, hidden, rng)?,
            x2: Linear::new(store, "head.x2", hidden, 2, rng)?,
        })
    }

    /// Returns `(adjacency logits, coords)`.
    pub(crate) fn forward(&self, store: &ParamStore, tape: &mut Tape, h: Var) -> Result<(Var, Var), AdError> {
        let a = self.a1.forward(store, tape, h)?;
        let a = tape.relu(a);
        let logits = self.a2.forward(store, tape, a)?;
        let x = self.x1.forward(store, tape, h)?;
        let x = tape.relu(x);
        let x = self.x2.forward(store, tape, x)?;
        Ok((logits, tape.tanh(x)))
    }
}
