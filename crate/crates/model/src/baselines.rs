use rand::Rng;
use roadforge_autodiff::{BatchNormStats, ParamId, ParamStore, Tape, Tensor, Var};
use roadforge_core::geom::{from_sequence, Point2, RoadGraph, SoftStep};
use roadforge_core::raster::GrayImage;

use crate::batch::Sample;
use crate::config::ENCODER_OUT;
use crate::encoder::{Encoder, Mode};
use crate::ggt::{autoregress, read_steps, DecoderOutput, StepInput};
use crate::layers::{Heads, Linear};
use crate::loss::{combine, LossVars};
use crate::{ModelError, Result};

/// Position of `(i, j)`, `i <= j`, in the row-major upper triangle of an
/// `n x n` matrix (diagonal included).
fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// One-shot decoder: from the image code, emits the upper triangle of a
/// symmetric `n_max x n_max` adjacency matrix and `n_max` coordinates.
/// Diagonal entries act as node-presence probabilities.
#[derive(Debug, Clone)]
pub struct MlpBaseline {
    n_max: usize,
    encoder: Encoder,
    a1: Linear,
    a2: Linear,
    x1: Linear,
    x2: Linear,
}

/// Symmetric adjacency probabilities (row-major `n_max x n_max`) and coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpOutput {
    pub n_max: usize,
    pub adjacency: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
}

impl MlpOutput {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n_max + j]
    }

    /// Nodes with diagonal probability above 0.5, and edges above 0.5 between them.
    pub fn to_graph(&self) -> RoadGraph<f64> {
        let kept: Vec<usize> = (0..self.n_max).filter(|&i| self.get(i, i) > 0.5).collect();
        let nodes = kept.iter().map(|&i| Point2::new(self.coords[i][0], self.coords[i][1])).collect();
        let mut edges = Vec::new();
        for (a, &i) in kept.iter().enumerate() {
            for (b, &j) in kept.iter().enumerate().skip(a + 1) {
                if self.get(i, j) > 0.5 {
                    edges.push((a, b));
                }
            }
        }
        RoadGraph::new(nodes, edges).expect("indices come from the kept list")
    }
}

impl MlpBaseline {
    pub fn new<R: Rng>(store: &mut ParamStore, n_max: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(store, rng)?;
        let tri = n_max * (n_max + 1) / 2;
        Ok(Self {
            n_max,
            encoder,
            a1: Linear::new(store, "mlp.a1", ENCODER_OUT, hidden, rng)?,
            a2: Linear::new(store, "mlp.a2", hidden, tri, rng)?,
            x1: Linear::new(store, "mlp.x1", ENCODER_OUT, hidden, rng)?,
            x2: Linear::new(store, "mlp.x2", hidden, 2 * n_max, rng)?,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// `(triangle logits [B, n(n+1)/2], coords [B, 2n])`.
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        images: &[&GrayImage],
        mode: Mode,
    ) -> Result<(Var, Var, Vec<BatchNormStats>)> {
        let (c, stats) = self.encoder.forward(store, tape, images, mode)?;
        let a = self.a1.forward(store, tape, c)?;
        let a = tape.relu(a);
        let logits = self.a2.forward(store, tape, a)?;
        let x = self.x1.forward(store, tape, c)?;
        let x = tape.relu(x);
        let x = self.x2.forward(store, tape, x)?;
        Ok((logits, tape.tanh(x), stats))
    }

    /// BCE averaged over the triangle entries plus `sum ||x - x~||^2 / (2N)`
    /// over the `N` real nodes, both averaged over the batch.
    pub(crate) fn loss(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        samples: &[&Sample],
        lambda: f64,
        mode: Mode,
    ) -> Result<(LossVars, Vec<BatchNormStats>)> {
        let n = self.n_max;
        let tri = n * (n + 1) / 2;
        let batch = samples.len();
        let mut adj = vec![0.0; batch * tri];
        let mut coords = vec![0.0; batch * n * 2];
        let mut cw = vec![0.0; batch * n];
        for (b, s) in samples.iter().enumerate() {
            let g = &s.graph;
            let k = g.node_count();
            if k > n {
                return Err(ModelError::Graph(format!("{k} nodes exceed the MLP baseline's {n} slots")));
            }
            for (i, p) in g.nodes().iter().enumerate() {
                adj[b * tri + tri_index(n, i, i)] = 1.0;
                coords[(b * n + i) * 2] = p.x;
                coords[(b * n + i) * 2 + 1] = p.y;
                cw[b * n + i] = 1.0 / (batch * k) as f64;
            }
            for &(i, j) in g.edges() {
                adj[b * tri + tri_index(n, i, j)] = 1.0;
            }
        }
        let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
        let (logits, x, stats) = self.forward(store, tape, &images, mode)?;
        let bce = tape.bce_logits(logits, &Tensor::new(vec![batch, tri], adj)?, &vec![1.0 / batch as f64; batch], tri as f64)?;
        let x = tape.reshape(x, &[batch * n, 2])?;
        let mse = tape.squared_error(x, &Tensor::new(vec![batch * n, 2], coords)?, &cw, 2.0)?;
        Ok((combine(tape, bce, mse, lambda)?, stats))
    }

    pub fn predict(&self, store: &ParamStore, image: &GrayImage) -> Result<MlpOutput> {
        let mut tape = Tape::new();
        let (logits, x, _) = self.forward(store, &mut tape, &[image], Mode::Eval)?;
        let p = tape.sigmoid(logits);
        let (p, x) = (tape.value(p).data(), tape.value(x).data());
        let n = self.n_max;
        let mut adjacency = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = p[tri_index(n, i, j)];
                adjacency[i * n + j] = v;
                adjacency[j * n + i] = v;
            }
        }
        Ok(MlpOutput { n_max: n, adjacency, coords: x.chunks(2).map(|c| [c[0], c[1]]).collect() })
    }

    pub fn generate(&self, store: &ParamStore, image: &GrayImage) -> Result<RoadGraph<f64>> {
        Ok(self.predict(store, image)?.to_graph())
    }
}

/// Sequential baseline: a single-layer GRU over the teacher-forced steps,
/// with the image code appended to every input, followed by the same heads
/// as the transformer.
#[derive(Debug, Clone)]
pub struct RnnBaseline {
    frontier: usize,
    hidden: usize,
    encoder: Encoder,
    /// Input projection for the update, reset and candidate gates `[in, 3H]`.
    wx: Linear,
    /// Recurrent weights `[H, 3H]`.
    u: ParamId,
    /// Recurrent bias of the candidate gate, applied inside the reset product.
    b_hn: ParamId,
    heads: Heads,
}

impl RnnBaseline {
    pub fn new<R: Rng>(store: &mut ParamStore, frontier: usize, hidden: usize, head_hidden: usize, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(store, rng)?;
        let inp = frontier + 3 + ENCODER_OUT;
        let wx = Linear::new(store, "gru.x", inp, 3 * hidden, rng)?;
        let u = store.add_glorot("gru.u", &[hidden, 3 * hidden], hidden, 3 * hidden, rng)?;
        let b_hn = store.add("gru.b_hn", Tensor::zeros(&[hidden]), true)?;
        let heads = Heads::new(store, hidden, head_hidden, frontier, rng)?;
        Ok(Self { frontier, hidden, encoder, wx, u, b_hn, heads })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Teacher-forced pass with the same layout as [`crate::Ggt::decode`].
    pub fn decode(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        code: Var,
        prev: &Tensor,
        batch: usize,
        seq: usize,
    ) -> Result<DecoderOutput> {
        let h_dim = self.hidden;
        let owner: Vec<usize> = (0..batch * seq).map(|r| r / seq).collect();
        let c_rows = tape.gather_rows(code, &owner)?;
        let prev = tape.constant(prev.clone());
        let x = tape.concat_cols(&[prev, c_rows])?;
        let xw = self.wx.forward(store, tape, x)?;
        let u = tape.param(store, self.u);
        let b_hn = tape.param(store, self.b_hn);
        let mut h = tape.constant(Tensor::zeros(&[batch, h_dim]));
        let mut hs = Vec::with_capacity(seq);
        for t in 0..seq {
            let rows: Vec<usize> = (0..batch).map(|b| b * seq + t).collect();
            let xt = tape.gather_rows(xw, &rows)?;
            let hu = tape.matmul(h, u)?;
            let gate = |tape: &mut Tape, k: usize| -> Result<Var> {
                let a = tape.slice_cols(xt, k * h_dim, h_dim)?;
                let b = tape.slice_cols(hu, k * h_dim, h_dim)?;
                Ok(tape.add(a, b)?)
            };
            let z = gate(tape, 0)?;
            let z = tape.sigmoid(z);
            let r = gate(tape, 1)?;
            let r = tape.sigmoid(r);
            let hn = tape.slice_cols(hu, 2 * h_dim, h_dim)?;
            let hn = tape.add_bias(hn, b_hn)?;
            let hn = tape.mul(r, hn)?;
            let xn = tape.slice_cols(xt, 2 * h_dim, h_dim)?;
            let n = tape.add(xn, hn)?;
            let n = tape.tanh(n);
            // h' = (1 - z) * n + z * h = n + z * (h - n)
            let d = tape.sub(h, n)?;
            let d = tape.mul(z, d)?;
            h = tape.add(n, d)?;
            hs.push(h);
        }
        let all = tape.concat_cols(&hs)?;
        let all = tape.reshape(all, &[batch * seq, h_dim])?;
        let (adj_logits, coords) = self.heads.forward(store, tape, all)?;
        Ok(DecoderOutput { adj_logits, coords })
    }

    pub fn decoder_forward(
        &self,
        store: &ParamStore,
        code: &[f64],
        inputs: &[StepInput],
    ) -> Result<Vec<(Vec<f64>, [f64; 2])>> {
        let mut tape = Tape::new();
        let code = tape.constant(Tensor::new(vec![1, code.len()], code.to_vec())?);
        let prev = StepInput::stack(inputs, self.frontier)?;
        let out = self.decode(store, &mut tape, code, &prev, 1, inputs.len())?;
        let probs = tape.sigmoid(out.adj_logits);
        Ok(read_steps(&tape, probs, out.coords))
    }

    pub fn generate(&self, store: &ParamStore, image: &GrayImage, max_steps: usize) -> Result<(RoadGraph<f64>, Vec<SoftStep<f64>>)> {
        let code = self.encoder.encode(store, image)?;
        let steps = autoregress(self.frontier, max_steps, |inputs| {
            let mut out = self.decoder_forward(store, &code, inputs)?;
            Ok(out.pop().expect("one output per input"))
        })?;
        Ok((from_sequence(&steps, 0.5), steps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_indices_are_a_bijection() {
        for n in [1, 2, 5, 10] {
            let mut seen = vec![false; n * (n + 1) / 2];
            let mut expected = 0;
            for i in 0..n {
                for j in i..n {
                    let k = tri_index(n, i, j);
                    assert_eq!(k, expected);
                    assert!(!seen[k]);
                    seen[k] = true;
                    expected += 1;
                }
            }
        }
    }

    fn zero_trainable(store: &mut ParamStore) {
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.trainable {
                p.value = p.value.map(|_| 0.0);
            }
        }
    }

    #[test]
    fn mlp_output_is_symmetric_with_fixed_shapes() {
        let mut store = ParamStore::new();
        let mlp = MlpBaseline::new(&mut store, 10, 32, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut img = GrayImage::zeros(64, 64);
        for c in 5..60 {
            img.set(30, c, 1.0);
        }
        let out = mlp.predict(&store, &img).unwrap();
        assert_eq!((out.adjacency.len(), out.coords.len()), (100, 10));
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(out.get(i, j), out.get(j, i));
            }
        }
        zero_trainable(&mut store);
        let out = mlp.predict(&store, &img).unwrap();
        assert!(out.adjacency.iter().all(|&v| v == 0.5));
        assert!(out.coords.iter().all(|c| *c == [0.0, 0.0]));
        assert!(out.to_graph().is_empty());
    }

    #[test]
    fn mlp_decoding_keeps_present_nodes_only() {
        let n = 3;
        let mut adjacency = vec![0.0; 9];
        for (i, j, v) in [(0, 0, 0.9), (2, 2, 0.8), (0, 2, 0.7), (0, 1, 0.9), (1, 1, 0.2)] {
            adjacency[i * n + j] = v;
            adjacency[j * n + i] = v;
        }
        let out = MlpOutput { n_max: n, adjacency, coords: vec![[0.0, 0.0], [0.5, 0.5], [1.0, 0.0]] };
        let g = out.to_graph();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.nodes()[1], Point2::new(1.0, 0.0));
    }

    #[test]
    fn rnn_zero_weights_and_hidden_size() {
        let mut store = ParamStore::new();
        let rnn = RnnBaseline::new(&mut store, 3, 256, 128, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(rnn.hidden(), 256);
        assert_eq!(store.value(store.id("gru.u").unwrap()).shape(), &[256, 768]);
        zero_trainable(&mut store);
        let out = rnn.decoder_forward(&store, &[0.2; 900], &[StepInput::start(3), StepInput::start(3)]).unwrap();
        assert!(out.iter().all(|(p, x)| p.iter().all(|&v| v == 0.5) && *x == [0.0, 0.0]));
    }
}
