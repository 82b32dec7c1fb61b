mod dataset;
mod eval;
mod generate;
mod gradcheck;
mod metric;
mod noise;
mod stitch;
mod train;

use std::path::Path;

use anyhow::{Context as _, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_autodiff::{load_checkpoint, ParamStore};
use roadforge_core::dataset::{load_dataset, Split};
use roadforge_core::kv::KvMap;
use roadforge_core::streetmover::StreetMoverParams;
use roadforge_model::{EvalConfig, GgtConfig, Model, ModelConfig, ModelKind, Sample, DEFAULT_MAX_STEPS};

pub use dataset::{BuildArgs, DatasetCommand};
pub use eval::EvalArgs;
pub use generate::GenerateArgs;
pub use gradcheck::GradcheckArgs;
pub use metric::MetricArgs;
pub use noise::NoiseBenchArgs;
pub use stitch::StitchArgs;
pub use train::TrainArgs;

use crate::{Command, Context};

pub fn dispatch(cmd: &Command, ctx: &mut Context) -> Result<()> {
    match cmd {
        Command::Dataset(DatasetCommand::Build(a)) => dataset::build(a, ctx),
        Command::Train(a) => train::run(a, ctx),
        Command::Eval(a) => eval::run(a, ctx),
        Command::Generate(a) => generate::run(a, ctx),
        Command::Metric(a) => metric::run(a, ctx),
        Command::Stitch(a) => stitch::run(a, ctx),
        Command::Gradcheck(a) => gradcheck::run(a, ctx),
        Command::NoiseBench(a) => noise::run(a, ctx),
    }
}

pub(crate) const MODEL_CFG: &str = "model.cfg";
pub(crate) const TRAIN_CFG: &str = "train.cfg";
pub(crate) const REPORT_JSONL: &str = "train_report.jsonl";
pub(crate) const SUMMARY_JSON: &str = "train_summary.json";
pub(crate) const BEST_CKPT: &str = "best.ckpt";
pub(crate) const LAST_CKPT: &str = "last.ckpt";

/// Model layout from `<run_dir>/model.cfg` with weights from `checkpoint`
/// (relative to the run directory).
pub(crate) fn load_model(run_dir: &Path, checkpoint: &Path) -> Result<(Model, ParamStore)> {
    let cfg_path = run_dir.join(MODEL_CFG);
    let text = std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let kv = KvMap::parse(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let cfg = ModelConfig::from_kv(&kv, ModelConfig::new(ModelKind::Ggt, GgtConfig::default()))?;
    let (model, mut store) = Model::build(cfg)?;
    let ckpt = run_dir.join(checkpoint);
    load_checkpoint(&mut store, &ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Ok((model, store))
}

pub(crate) fn metric_params(kv: &KvMap) -> Result<StreetMoverParams> {
    let mut p = StreetMoverParams::default();
    if let Some(v) = kv.parse_value("metric_points")? {
        p.points = v;
    }
    if let Some(v) = kv.parse_value("sinkhorn_eps")? {
        p.sinkhorn.eps = v;
    }
    if let Some(v) = kv.parse_value("sinkhorn_max_iter")? {
        p.sinkhorn.max_iter = v;
    }
    if let Some(v) = kv.parse_value("sinkhorn_tol")? {
        p.sinkhorn.tol = v;
    }
    anyhow::ensure!(p.points > 0 && p.sinkhorn.eps > 0.0, "metric_points and sinkhorn_eps must be positive");
    Ok(p)
}

pub(crate) fn eval_config(kv: &KvMap) -> Result<EvalConfig> {
    let cfg = EvalConfig {
        metric: metric_params(kv)?,
        max_steps: kv.parse_value("gen_max_steps")?.unwrap_or(DEFAULT_MAX_STEPS),
        lambda: kv.parse_value("lambda")?.unwrap_or(0.5),
    };
    anyhow::ensure!(cfg.max_steps > 0, "gen_max_steps must be positive");
    anyhow::ensure!((0.0..=1.0).contains(&cfg.lambda), "lambda must lie in [0, 1]");
    Ok(cfg)
}

/// At most `limit` items chosen with `seed`, in their original order.
pub(crate) fn subset<T: Clone>(items: &[T], limit: Option<usize>, seed: u64) -> Vec<T> {
    match limit {
        Some(k) if k < items.len() => {
            let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), items.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| items[i].clone()).collect()
        }
        _ => items.to_vec(),
    }
}

/// Samples of one split, optionally limited to a seeded subset; returns the
/// dataset frontier with them.
pub(crate) fn load_split(dir: &Path, split: Split, limit: Option<usize>, seed: u64) -> Result<(usize, Vec<Sample>)> {
    let data = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let records = subset(&data.split(split), limit, seed);
    let samples = records.iter().map(|r| Sample::from_record(r, data.frontier)).collect::<Result<Vec<_>, _>>()?;
    Ok((data.frontier, samples))
}
