use rand::Rng;
use roadforge_autodiff::{BatchNormStats, ParamStore, Tape, Tensor, Var};
use roadforge_core::geom::{from_sequence, Point2, RoadGraph, SoftStep};
use roadforge_core::raster::GrayImage;

use crate::config::{GgtConfig, CA_HIDDEN, ENCODER_OUT};
use crate::encoder::{Encoder, Mode};
use crate::layers::{Heads, LayerNorm, Linear};
use crate::{ModelError, Result};

/// Sinusoidal position code: `p[2i] = sin(t / 10000^(2i/dim))`,
/// `p[2i+1] = cos(t / 10000^(2i/dim))`.
pub fn positional_encoding(t: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let i2 = (k - k % 2) as f64;
            let angle = t as f64 / 10000f64.powf(i2 / dim as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// What the decoder sees of the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    /// Length `M + 1`, stop channel last.
    pub prev_adjacency: Vec<f64>,
    pub prev_coords: [f64; 2],
}

impl StepInput {
    /// The all-zero input of the first step.
    pub fn start(frontier: usize) -> Self {
        Self { prev_adjacency: vec![0.0; frontier + 1], prev_coords: [0.0; 2] }
    }

    /// Input row `[adjacency.., x, y]` for a batch of decoder steps.
    pub(crate) fn stack(inputs: &[StepInput], frontier: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(inputs.len() * (frontier + 3));
        for s in inputs {
            if s.prev_adjacency.len() != frontier + 1 {
                return Err(ModelError::Config(format!(
                    "step input has {} adjacency values, expected {}",
                    s.prev_adjacency.len(),
                    frontier + 1
                )));
            }
            data.extend_from_slice(&s.prev_adjacency);
            data.extend_from_slice(&s.prev_coords);
        }
        Ok(Tensor::new(vec![inputs.len(), frontier + 3], data)?)
    }
}

/// Per-row decoder outputs of a teacher-forced pass.
#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// `[rows, M+1]` pre-sigmoid adjacency and stop scores.
    pub adj_logits: Var,
    /// `[rows, 2]` coordinates in `(-1, 1)`.
    pub coords: Var,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    wm: Linear,
    wn: Linear,
    ln2: LayerNorm,
}

/// Graph-generating transformer.
#[derive(Debug, Clone)]
pub struct Ggt {
    cfg: GgtConfig,
    encoder: Encoder,
    context: Option<(Linear, Linear)>,
    w_in: Linear,
    blocks: Vec<Block>,
    heads: Heads,
}

impl Ggt {
    pub fn new<R: Rng>(cfg: GgtConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, rng)?;
        let inp = cfg.input_width();
        let context = if cfg.context_attention {
            Some((
                Linear::new(store, "ca.c1", inp, CA_HIDDEN, rng)?,
                Linear::new(store, "ca.c2", CA_HIDDEN, ENCODER_OUT, rng)?,
            ))
        } else {
            None
        };
        let d = cfg.d_model;
        let w_in = Linear::new(store, "dec.in", inp, d, rng)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("dec.block{l}");
            blocks.push(Block {
                wq: Linear::new(store, &format!("{p}.q"), d, d, rng)?,
                wk: Linear::new(store, &format!("{p}.k"), d, d, rng)?,
                wv: Linear::new(store, &format!("{p}.v"), d, d, rng)?,
                wo: Linear::new(store, &format!("{p}.o"), d, d, rng)?,
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), d)?,
                wm: Linear::new(store, &format!("{p}.m"), d, cfg.mlp_inner, rng)?,
                wn: Linear::new(store, &format!("{p}.n"), cfg.mlp_inner, d, rng)?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
            });
        }
        let heads = Heads::new(store, d, cfg.head_hidden, cfg.frontier, rng)?;
        Ok(Self { cfg, encoder, context, w_in, blocks, heads })
    }

    pub fn config(&self) -> &GgtConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Image codes `[B, 900]` for a batch.
    pub fn encode(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        images: &[&GrayImage],
        mode: Mode,
    ) -> Result<(Var, Vec<BatchNormStats>)> {
        self.encoder.forward(store, tape, images, mode)
    }

    /// Mask `m_t = softmax(W_c2 ReLU(W_c1 x))` over the image code, one row per
    /// input row of `x: [rows, (M+1) + 2 + 900]`.
    fn context_mask(&self, store: &ParamStore, tape: &mut Tape, ca: (Linear, Linear), x: Var) -> Result<Var> {
        let s = ca.0.forward(store, tape, x)?;
        let s = tape.relu(s);
        let s = ca.1.forward(store, tape, s)?;
        Ok(tape.softmax(s))
    }

    /// Teacher-forced decoder pass.
    ///
    /// `code` is `[batch, 900]`; `prev` is `[batch * seq, M+3]` with rows
    /// `b * seq + t`. When `valid_rows` is given, the context attention is
    /// evaluated only on those rows and the rest reuse the first valid row's
    /// mask; callers must give such rows zero loss weight.
    pub fn decode(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        code: Var,
        prev: &Tensor,
        batch: usize,
        seq: usize,
        valid_rows: Option<&[usize]>,
    ) -> Result<DecoderOutput> {
        let rows = batch * seq;
        let m1 = self.cfg.frontier + 1;
        if prev.shape() != [rows, m1 + 2] || tape.shape(code) != [batch, ENCODER_OUT] {
            return Err(roadforge_autodiff::AdError::ShapeMismatch {
                op: "decode",
                left: prev.shape().to_vec(),
                right: tape.shape(code).to_vec(),
            }
            .into());
        }
        let owner: Vec<usize> = (0..rows).map(|r| r / seq).collect();
        let c_rows = tape.gather_rows(code, &owner)?;
        let prev = tape.constant(prev.clone());
        let c_t = match self.context {
            None => c_rows,
            Some(ca) => {
                let x = tape.concat_cols(&[prev, c_rows])?;
                let mask = match valid_rows {
                    Some(valid) if !valid.is_empty() && valid.len() < rows => {
                        let mut slot = vec![0; rows];
                        for (i, &r) in valid.iter().enumerate() {
                            slot[r] = i;
                        }
                        let xv = tape.gather_rows(x, valid)?;
                        let mv = self.context_mask(store, tape, ca, xv)?;
                        tape.gather_rows(mv, &slot)?
                    }
                    _ => self.context_mask(store, tape, ca, x)?,
                };
                tape.mul(c_rows, mask)?
            }
        };
        let x = tape.concat_cols(&[prev, c_t])?;
        let width = self.cfg.input_width();
        let mut pos = Vec::with_capacity(rows * width);
        let codes: Vec<Vec<f64>> = (0..seq).map(|t| positional_encoding(t, width)).collect();
        for _ in 0..batch {
            for p in &codes {
                pos.extend_from_slice(p);
            }
        }
        let pos = tape.constant(Tensor::new(vec![rows, width], pos)?);
        let x = tape.add(x, pos)?;
        let mut h = self.w_in.forward(store, tape, x)?;
        for b in &self.blocks {
            let q = b.wq.forward(store, tape, h)?;
            let k = b.wk.forward(store, tape, h)?;
            let v = b.wv.forward(store, tape, h)?;
            let a = tape.causal_attention(q, k, v, seq, self.cfg.heads, self.cfg.exclude_self_attention)?;
            let a = b.wo.forward(store, tape, a)?;
            let r = tape.add(h, a)?;
            h = b.ln1.forward(store, tape, r)?;
            let f = b.wm.forward(store, tape, h)?;
            let f = tape.relu(f);
            let f = b.wn.forward(store, tape, f)?;
            let r = tape.add(h, f)?;
            h = b.ln2.forward(store, tape, r)?;
        }
        let (adj_logits, coords) = self.heads.forward(store, tape, h)?;
        Ok(DecoderOutput { adj_logits, coords })
    }

    /// Inference pass over one sequence of step inputs; returns per step the
    /// adjacency/stop probabilities and the coordinates.
    pub fn decoder_forward(
        &self,
        store: &ParamStore,
        code: &[f64],
        inputs: &[StepInput],
    ) -> Result<Vec<(Vec<f64>, [f64; 2])>> {
        let mut tape = Tape::new();
        let code = tape.constant(Tensor::new(vec![1, code.len()], code.to_vec())?);
        let prev = StepInput::stack(inputs, self.cfg.frontier)?;
        let out = self.decode(store, &mut tape, code, &prev, 1, inputs.len(), None)?;
        let probs = tape.sigmoid(out.adj_logits);
        Ok(read_steps(&tape, probs, out.coords))
    }

    /// Autoregressive generation from an image; see [`autoregress`].
    pub fn generate(&self, store: &ParamStore, image: &GrayImage, max_steps: usize) -> Result<(RoadGraph<f64>, Vec<SoftStep<f64>>)> {
        let code = self.encoder.encode(store, image)?;
        let steps = autoregress(self.cfg.frontier, max_steps, |inputs| {
            let mut out = self.decoder_forward(store, &code, inputs)?;
            Ok(out.pop().expect("one output per input"))
        })?;
        Ok((from_sequence(&steps, 0.5), steps))
    }
}

pub(crate) fn read_steps(tape: &Tape, probs: Var, coords: Var) -> Vec<(Vec<f64>, [f64; 2])> {
    let (p, x) = (tape.value(probs), tape.value(coords));
    (0..p.shape()[0]).map(|r| (p.row(r).to_vec(), [x.row(r)[0], x.row(r)[1]])).collect()
}

/// Generation loop shared by the sequential decoders.
///
/// `step` receives all inputs so far and returns the newest step's
/// probabilities (stop last) and coordinates. The next input feeds back the
/// adjacency thresholded at 0.5 and the raw coordinates. Stops after the
/// first step whose stop probability exceeds 0.5, or after `max_steps`.
pub(crate) fn autoregress<F>(frontier: usize, max_steps: usize, mut step: F) -> Result<Vec<SoftStep<f64>>>
where
    F: FnMut(&[StepInput]) -> Result<(Vec<f64>, [f64; 2])>,
{
    let mut inputs = vec![StepInput::start(frontier)];
    let mut steps = Vec::new();
    for _ in 0..max_steps {
        let (p, x) = step(&inputs)?;
        let stop = p[frontier];
        steps.push(SoftStep { adjacency: p[..frontier].to_vec(), stop, coords: Point2::new(x[0], x[1]) });
        if stop > 0.5 {
            break;
        }
        let bits = p.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        inputs.push(StepInput { prev_adjacency: bits, prev_coords: x });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_encoding_values() {
        let p0 = positional_encoding(0, 6);
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = positional_encoding(1, 903);
        assert!((p1[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((p1[1] - 1f64.cos()).abs() < 1e-15);
        // index 2 uses exponent 2/dim
        assert!((p1[2] - (1.0 / 10000f64.powf(2.0 / 903.0)).sin()).abs() < 1e-15);
        for t in [0, 3, 50, 1000] {
            assert!(positional_encoding(t, 17).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    fn zeroed(cfg: GgtConfig) -> (ParamStore, Ggt) {
        let mut store = ParamStore::new();
        let model = Ggt::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.trainable {
                p.value = p.value.map(|_| 0.0);
            }
        }
        (store, model)
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let (store, model) = zeroed(GgtConfig::tiny(3));
        let out = model.decoder_forward(&store, &[0.3; 900], &[StepInput::start(3)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, vec![0.5; 4]);
        assert_eq!(out[0].1, [0.0, 0.0]);
    }

    #[test]
    fn zero_weight_model_runs_to_max_steps() {
        let (store, model) = zeroed(GgtConfig::tiny(3));
        let (g, steps) = model.generate(&store, &GrayImage::zeros(64, 64), 6).unwrap();
        assert_eq!(steps.len(), 6);
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.edge_count(), 0);
        let (g, _) = model.generate(&store, &GrayImage::zeros(64, 64), 1).unwrap();
        assert!(g.node_count() <= 1);
    }

    #[test]
    fn context_mask_off_and_zero_weights() {
        // with CA off the code reaches W_in unchanged; with zero CA weights
        // the mask is uniform, so the code is scaled by 1/900
        let mut store = ParamStore::new();
        let cfg = GgtConfig::tiny(2);
        let model = Ggt::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (c1, c2) = model.context.unwrap();
        for id in [c1.w, c1.b, c2.w, c2.b] {
            let p = store.get_mut(id);
            p.value = p.value.map(|_| 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, cfg.input_width()], 0.7));
        let m = model.context_mask(&store, &mut tape, (c1, c2), x).unwrap();
        assert!(tape.value(m).data().iter().all(|&v| (v - 1.0 / 900.0).abs() < 1e-18));
        let sum: f64 = tape.value(m).row(1).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let mut store = ParamStore::new();
        let off = Ggt::new(GgtConfig { context_attention: false, ..cfg }, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(off.context.is_none());
        assert!(store.id("ca.c1.w").is_err());
    }

    #[test]
    fn random_mask_sums_to_one() {
        let mut store = ParamStore::new();
        let cfg = GgtConfig::tiny(2);
        let model = Ggt::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let data = (0..3 * cfg.input_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.constant(Tensor::new(vec![3, cfg.input_width()], data).unwrap());
        let m = model.context_mask(&store, &mut tape, model.context.unwrap(), x).unwrap();
        for r in 0..3 {
            assert!((tape.value(m).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_rows_do_not_change_valid_outputs() {
        let mut store = ParamStore::new();
        let cfg = GgtConfig::tiny(2);
        let model = Ggt::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = Tensor::new(vec![8, 5], (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let code = Tensor::new(vec![2, 900], (0..1800).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let run = |valid: Option<&[usize]>| {
            let mut tape = Tape::new();
            let c = tape.constant(code.clone());
            let out = model.decode(&store, &mut tape, c, &prev, 2, 4, valid).unwrap();
            tape.value(out.coords).clone()
        };
        let full = run(None);
        let packed = run(Some(&[0, 1, 2, 4, 5]));
        for r in [0, 1, 2, 4, 5] {
            assert_eq!(full.row(r), packed.row(r));
        }
    }
}
