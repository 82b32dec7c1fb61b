use rand::Rng;
use roadforge_autodiff::{BatchNormStats, ParamId, ParamStore, Tape, Tensor, Var};
use roadforge_core::raster::GrayImage;

use crate::config::{ENCODER_OUT, IMAGE_SIDE};
use crate::{ModelError, Result};

const LEAKY_SLOPE: f64 = 0.01;
/// Weight of the newest batch in the running batch-norm statistics.
const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm behaviour: batch statistics (training) or running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// `conv3x3(pad 1, 1->8) -> BN -> LeakyReLU -> maxpool 2 -> conv3x3(valid, 8->16)
/// -> BN -> LeakyReLU -> conv1x1(16->1)`, flattened to 900 values.
#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    conv3: Conv,
}

fn conv<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Result<Conv> {
    let w = store.add_glorot(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k, cout * k * k, rng)?;
    let b = store.add(&format!("{name}.b"), Tensor::zeros(&[cout]), true)?;
    Ok(Conv { w, b })
}

fn batch_norm(store: &mut ParamStore, name: &str, ch: usize) -> Result<BatchNorm> {
    Ok(BatchNorm {
        gamma: store.add_const(&format!("{name}.gamma"), &[ch], 1.0, true)?,
        beta: store.add_const(&format!("{name}.beta"), &[ch], 0.0, true)?,
        mean: store.add_const(&format!("{name}.running_mean"), &[ch], 0.0, false)?,
        var: store.add_const(&format!("{name}.running_var"), &[ch], 1.0, false)?,
    })
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1: conv(store, "enc.conv1", 1, 8, 3, rng)?,
            bn1: batch_norm(store, "enc.bn1", 8)?,
            conv2: conv(store, "enc.conv2", 8, 16, 3, rng)?,
            bn2: batch_norm(store, "enc.bn2", 16)?,
            conv3: conv(store, "enc.conv3", 16, 1, 1, rng)?,
        })
    }

    /// Encodes a batch of images into `[B, 900]`. In [`Mode::Train`] the
    /// returned statistics feed [`Encoder::update_running_stats`].
    pub fn forward(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        images: &[&GrayImage],
        mode: Mode,
    ) -> Result<(Var, Vec<BatchNormStats>)> {
        let mut data = Vec::with_capacity(images.len() * IMAGE_SIDE * IMAGE_SIDE);
        for img in images {
            if img.width() != IMAGE_SIDE || img.height() != IMAGE_SIDE {
                return Err(ModelError::ImageSize { expected: IMAGE_SIDE, width: img.width(), height: img.height() });
            }
            data.extend_from_slice(img.pixels());
        }
        let x = tape.constant(Tensor::new(vec![images.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)?);
        let mut stats = Vec::new();
        let x = self.conv_bn(store, tape, x, self.conv1, self.bn1, 1, mode, &mut stats)?;
        let x = tape.max_pool2(x)?;
        let x = self.conv_bn(store, tape, x, self.conv2, self.bn2, 0, mode, &mut stats)?;
        let (w, b) = (tape.param(store, self.conv3.w), tape.param(store, self.conv3.b));
        let x = tape.conv2d(x, w, b, 0)?;
        Ok((tape.reshape(x, &[images.len(), ENCODER_OUT])?, stats))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: Var,
        c: Conv,
        bn: BatchNorm,
        pad: usize,
        mode: Mode,
        stats: &mut Vec<BatchNormStats>,
    ) -> Result<Var> {
        let (w, b) = (tape.param(store, c.w), tape.param(store, c.b));
        let x = tape.conv2d(x, w, b, pad)?;
        let (g, beta) = (tape.param(store, bn.gamma), tape.param(store, bn.beta));
        let x = match mode {
            Mode::Train => {
                let (y, s) = tape.batch_norm_train(x, g, beta)?;
                stats.push(s);
                y
            }
            Mode::Eval => {
                tape.batch_norm_eval(x, g, beta, store.value(bn.mean).data(), store.value(bn.var).data())?
            }
        };
        Ok(tape.leaky_relu(x, LEAKY_SLOPE))
    }

    /// Exponential moving average of the batch statistics from a training pass.
    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &[BatchNormStats]) {
        for (bn, s) in [self.bn1, self.bn2].iter().zip(stats) {
            for (id, batch) in [(bn.mean, &s.mean), (bn.var, &s.var)] {
                for (r, &v) in store.get_mut(id).value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
        }
    }

    /// Inference-mode code of a single image.
    pub fn encode(&self, store: &ParamStore, image: &GrayImage) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (c, _) = self.forward(store, &mut tape, &[image], Mode::Eval)?;
        Ok(tape.value(c).data().to_vec())
    }
}
