use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_autodiff::{BatchNormStats, ParamStore, Tape, Var};
use roadforge_core::geom::RoadGraph;
use roadforge_core::raster::GrayImage;

use crate::baselines::{MlpBaseline, RnnBaseline};
use crate::batch::{Sample, SeqBatch};
use crate::config::{ModelConfig, ModelKind};
use crate::encoder::{Encoder, Mode};
use crate::ggt::Ggt;
use crate::loss::{sequence_batch_loss, LossParts, LossVars};
use crate::Result;

/// Generation step cap: one past the largest accepted node count plus the
/// stop step, with slack.
pub const DEFAULT_MAX_STEPS: usize = 12;

#[derive(Debug, Clone)]
enum Net {
    Ggt(Ggt),
    Mlp(MlpBaseline),
    Rnn(RnnBaseline),
}

/// Any of the trainable generators, with the configuration it was built from.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    net: Net,
}

impl Model {
    /// Registers the model's parameters in `store`, initialized from `config.seed`.
    pub fn new(config: ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = match config.kind {
            ModelKind::Ggt | ModelKind::GgtNoCa => Net::Ggt(Ggt::new(config.ggt, store, &mut rng)?),
            ModelKind::Mlp => Net::Mlp(MlpBaseline::new(store, config.n_max, config.mlp_hidden, &mut rng)?),
            ModelKind::Rnn => Net::Rnn(RnnBaseline::new(
                store,
                config.ggt.frontier,
                config.rnn_hidden,
                config.ggt.head_hidden,
                &mut rng,
            )?),
        };
        Ok(Self { config, net })
    }

    /// A fresh store holding only this model's parameters.
    pub fn build(config: ModelConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::new(config, &mut store)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn as_ggt(&self) -> Option<&Ggt> {
        match &self.net {
            Net::Ggt(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_mlp(&self) -> Option<&MlpBaseline> {
        match &self.net {
            Net::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_rnn(&self) -> Option<&RnnBaseline> {
        match &self.net {
            Net::Rnn(r) => Some(r),
            _ => None,
        }
    }

    pub fn encoder(&self) -> &Encoder {
        match &self.net {
            Net::Ggt(g) => g.encoder(),
            Net::Mlp(m) => m.encoder(),
            Net::Rnn(r) => r.encoder(),
        }
    }

    pub(crate) fn loss_vars(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        samples: &[&Sample],
        lambda: f64,
        mode: Mode,
    ) -> Result<(LossVars, Vec<BatchNormStats>)> {
        if let Net::Mlp(m) = &self.net {
            return m.loss(store, tape, samples, lambda, mode);
        }
        let batch = SeqBatch::new(samples)?;
        let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
        let (code, stats) = self.encoder().forward(store, tape, &images, mode)?;
        let out = match &self.net {
            Net::Ggt(g) => g.decode(store, tape, code, &batch.prev, batch.batch, batch.seq, Some(&batch.valid_rows))?,
            Net::Rnn(r) => r.decode(store, tape, code, &batch.prev, batch.batch, batch.seq)?,
            Net::Mlp(_) => unreachable!(),
        };
        Ok((sequence_batch_loss(tape, out.adj_logits, out.coords, &batch, lambda)?, stats))
    }

    /// Scalar training loss of a batch recorded on `tape`.
    pub fn loss(&self, store: &ParamStore, tape: &mut Tape, samples: &[&Sample], lambda: f64, mode: Mode) -> Result<Var> {
        Ok(self.loss_vars(store, tape, samples, lambda, mode)?.0.total)
    }

    /// Teacher-forced loss of a batch with running batch-norm statistics.
    pub fn eval_loss(&self, store: &ParamStore, samples: &[&Sample], lambda: f64) -> Result<LossParts> {
        let mut tape = Tape::new();
        let (l, _) = self.loss_vars(store, &mut tape, samples, lambda, Mode::Eval)?;
        Ok(l.values(&tape))
    }

    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &[BatchNormStats]) {
        self.encoder().update_running_stats(store, stats);
    }

    /// Predicted graph for one image. `max_steps` bounds the sequential
    /// decoders and is ignored by the one-shot baseline.
    pub fn generate(&self, store: &ParamStore, image: &GrayImage, max_steps: usize) -> Result<RoadGraph<f64>> {
        match &self.net {
            Net::Ggt(g) => Ok(g.generate(store, image, max_steps)?.0),
            Net::Rnn(r) => Ok(r.generate(store, image, max_steps)?.0),
            Net::Mlp(m) => m.generate(store, image),
        }
    }
}
