use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_autodiff::{Adam, AdamConfig, ParamStore, Tape};
use roadforge_core::kv::KvMap;
use roadforge_core::streetmover::StreetMoverParams;
use serde::{Deserialize, Serialize};

use crate::batch::Sample;
use crate::config::{ModelConfig, ModelKind};
use crate::encoder::Mode;
use crate::eval::{evaluate_with, EvalSummary};
use crate::loss::LossParts;
use crate::model::{Model, DEFAULT_MAX_STEPS};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Weight of the adjacency BCE; the coordinate term gets `1 - lambda`.
    pub lambda: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    /// Shuffling seed.
    pub seed: u64,
    /// Epochs without a new best validation StreetMover before stopping.
    pub patience: usize,
    /// Validation graphs scored by StreetMover after each epoch.
    pub valid_subsample: usize,
    pub gen_max_steps: usize,
    pub metric: StreetMoverParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-5,
            lambda: 0.5,
            batch: 64,
            epochs: 50,
            max_steps: None,
            seed: 0,
            patience: 5,
            valid_subsample: 64,
            gen_max_steps: DEFAULT_MAX_STEPS,
            metric: StreetMoverParams::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "lambda",
        "batch",
        "epochs",
        "max_steps",
        "seed",
        "patience",
        "valid_subsample",
        "gen_max_steps",
        "metric_points",
    ];

    /// Defaults for a model kind: the GRU baseline trains with batch 16.
    pub fn for_kind(kind: ModelKind) -> Self {
        let batch = if kind == ModelKind::Rnn { 16 } else { 64 };
        Self { batch, ..Self::default() }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.lr > 0.0) || self.batch == 0 || self.epochs == 0 || self.gen_max_steps == 0 {
            return Err(ModelError::Config("lr, batch, epochs and gen_max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("lr", self.lr);
        kv.insert("beta1", self.beta1);
        kv.insert("beta2", self.beta2);
        kv.insert("eps", self.eps);
        kv.insert("weight_decay", self.weight_decay);
        kv.insert("lambda", self.lambda);
        kv.insert("batch", self.batch);
        kv.insert("epochs", self.epochs);
        kv.insert("max_steps", self.max_steps.map_or("none".to_string(), |s| s.to_string()));
        kv.insert("seed", self.seed);
        kv.insert("patience", self.patience);
        kv.insert("valid_subsample", self.valid_subsample);
        kv.insert("gen_max_steps", self.gen_max_steps);
        kv.insert("metric_points", self.metric.points);
        kv
    }

    /// Overrides `base` with the keys present in `kv`.
    pub fn from_kv(kv: &KvMap, base: TrainConfig) -> Result<Self> {
        let cfg_err = |e: roadforge_core::kv::KvError| ModelError::Config(e.to_string());
        let mut c = base;
        macro_rules! read {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parse_value($key).map_err(cfg_err)? {
                    $field = v;
                }
            };
        }
        read!("lr", c.lr);
        read!("beta1", c.beta1);
        read!("beta2", c.beta2);
        read!("eps", c.eps);
        read!("weight_decay", c.weight_decay);
        read!("lambda", c.lambda);
        read!("batch", c.batch);
        read!("epochs", c.epochs);
        match kv.get("max_steps") {
            None => {}
            Some("none") => c.max_steps = None,
            Some(_) => c.max_steps = kv.parse_value("max_steps").map_err(cfg_err)?,
        }
        read!("seed", c.seed);
        read!("patience", c.patience);
        read!("valid_subsample", c.valid_subsample);
        read!("gen_max_steps", c.gen_max_steps);
        read!("metric_points", c.metric.points);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Mean over the epoch's batches.
    pub train: LossParts,
    pub valid: Option<LossParts>,
    pub valid_sm: Option<f64>,
    pub valid_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// Epoch with the lowest validation StreetMover (earliest on ties); the
    /// last epoch when there is no validation set.
    pub best_epoch: usize,
    pub best_valid_sm: Option<f64>,
    pub stopped_early: bool,
    pub total_steps: u64,
}

/// Optimizer state around a model and its parameters.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    store: ParamStore,
    adam: Adam,
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, config: TrainConfig) -> Result<Self> {
        let (model, store) = Model::build(model_cfg)?;
        Self::from_parts(model, store, config)
    }

    pub fn from_parts(model: Model, store: ParamStore, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, store, adam: Adam::new(config.adam()), config, rng: ChaCha8Rng::seed_from_u64(config.seed) })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.adam.step
    }

    pub fn into_parts(self) -> (Model, ParamStore) {
        (self.model, self.store)
    }

    /// One teacher-forced optimizer step on `batch`.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<LossParts> {
        let mut tape = Tape::new();
        let (loss, stats) = self.model.loss_vars(&self.store, &mut tape, batch, self.config.lambda, Mode::Train)?;
        let grads = tape.backward(loss.total)?;
        self.store.zero_grad();
        self.store.accumulate(&grads);
        self.adam.step(&mut self.store);
        self.model.update_running_stats(&mut self.store, &stats);
        Ok(loss.values(&tape))
    }

    /// One shuffled pass over `train`. Returns the mean batch loss and
    /// whether the step cap was hit.
    pub fn run_epoch(&mut self, train: &[Sample]) -> Result<(LossParts, bool)> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        let mut capped = false;
        for chunk in order.chunks(self.config.batch) {
            if self.config.max_steps.is_some_and(|cap| self.adam.step >= cap) {
                capped = true;
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let l = self.step(&batch)?;
            sum.total += l.total;
            sum.bce += l.bce;
            sum.mse += l.mse;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        capped |= self.config.max_steps.is_some_and(|cap| self.adam.step >= cap);
        Ok((LossParts { total: sum.total / n, bce: sum.bce / n, mse: sum.mse / n }, capped))
    }

    /// StreetMover of generated graphs against `samples` with the current parameters.
    pub fn streetmover(&self, samples: &[Sample]) -> Result<EvalSummary> {
        evaluate_with(samples, &self.config.metric, |s| {
            Ok((self.model.generate(&self.store, &s.image, self.config.gen_max_steps)?, None))
        })
    }

    /// Mean teacher-forced loss over `samples`, in batches, with running statistics.
    pub fn eval_loss(&self, samples: &[Sample]) -> Result<LossParts> {
        let mut sum = LossParts::default();
        for chunk in samples.chunks(self.config.batch) {
            let batch: Vec<&Sample> = chunk.iter().collect();
            let l = self.model.eval_loss(&self.store, &batch, self.config.lambda)?;
            let w = chunk.len() as f64 / samples.len() as f64;
            sum.total += w * l.total;
            sum.bce += w * l.bce;
            sum.mse += w * l.mse;
        }
        Ok(sum)
    }
}

/// Fixed validation subset, chosen once from the training seed.
fn subsample(valid: &[Sample], k: usize, seed: u64) -> Vec<Sample> {
    if valid.len() <= k {
        return valid.to_vec();
    }
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), valid.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| valid[i].clone()).collect()
}

/// Trains with early stopping on validation StreetMover.
///
/// `on_epoch` sees each epoch report together with the parameters at the end
/// of that epoch. Returns the report, the model and the parameters of the
/// best epoch.
pub fn train<F>(
    model_cfg: ModelConfig,
    config: TrainConfig,
    train: &[Sample],
    valid: &[Sample],
    mut on_epoch: F,
) -> Result<(TrainReport, Model, ParamStore)>
where
    F: FnMut(&EpochReport, &ParamStore) -> Result<()>,
{
    if train.is_empty() {
        return Err(ModelError::Config("empty training set".into()));
    }
    let mut trainer = Trainer::new(model_cfg, config)?;
    let probe = subsample(valid, config.valid_subsample, config.seed);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stopped_early = false;
    let mut last_store = None;
    for epoch in 0..config.epochs {
        let (train_loss, capped) = trainer.run_epoch(train)?;
        let (valid_loss, valid_sm, flagged) = if valid.is_empty() {
            (None, None, 0)
        } else {
            let sm = trainer.streetmover(&probe)?;
            (Some(trainer.eval_loss(valid)?), Some(sm.sm_mean), sm.flagged)
        };
        let report = EpochReport {
            epoch,
            steps: trainer.steps(),
            train: train_loss,
            valid: valid_loss,
            valid_sm,
            valid_flagged: flagged,
        };
        on_epoch(&report, trainer.store())?;
        epochs.push(report);
        match valid_sm {
            Some(sm) if best.as_ref().map_or(true, |b| sm < b.1) => best = Some((epoch, sm, trainer.store().clone())),
            Some(_) => {}
            None => last_store = Some(epoch),
        }
        if capped {
            break;
        }
        if let Some((b, _, _)) = &best {
            if epoch - b >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let total_steps = trainer.steps();
    let (model, store) = trainer.into_parts();
    let (best_epoch, best_valid_sm, store) = match best {
        Some((e, sm, s)) => (e, Some(sm), s),
        None => (last_store.unwrap_or(0), None, store),
    };
    Ok((TrainReport { epochs, best_epoch, best_valid_sm, stopped_early, total_steps }, model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GgtConfig;

    #[test]
    fn config_round_trip_and_ranges() {
        let c = TrainConfig { lr: 3e-4, max_steps: Some(7), ..TrainConfig::for_kind(ModelKind::Rnn) };
        assert_eq!(c.batch, 16);
        assert_eq!(TrainConfig::from_kv(&c.to_kv(), TrainConfig::default()).unwrap(), c);
        assert!(TrainConfig { lambda: 1.5, ..c }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..c }.validate().is_err());
        let _ = ModelConfig::new(ModelKind::Ggt, GgtConfig::tiny(2));
    }
}
