use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use roadforge_core::dataset::Split;
use roadforge_core::geom::rgf::to_rgf_string;
use roadforge_core::kv::KvMap;
use roadforge_model::{comparison_svg, evaluate_predictions, histogram_csv};

use super::{eval_config, load_model, load_split, BEST_CKPT};
use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "dataset")]
    pub dataset: PathBuf,
    /// Run directory written by `train`.
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    /// Checkpoint file inside the run directory.
    #[arg(long, default_value = BEST_CKPT)]
    pub checkpoint: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Evaluate a seeded subset of at most N records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Report directory; defaults to `<run-dir>/eval-<split>`.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    /// Write comparison SVGs for the first N samples only.
    #[arg(long)]
    pub svg_limit: Option<usize>,
    /// Maximum number of generated nodes.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

pub fn run(args: &EvalArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "limit", args.limit);
    put(&mut flags, "svg_limit", args.svg_limit);
    put(&mut flags, "gen_max_steps", args.max_steps);
    let kv = ctx.config(&flags);
    let seed = ctx.seed(&kv)?;
    let cfg = eval_config(&kv)?;
    let limit: Option<usize> = kv.parse_value("limit")?;
    let svg_limit: Option<usize> = kv.parse_value("svg_limit")?;

    let run_dir = ctx.path(&args.run_dir);
    let (model, store) = load_model(&run_dir, &args.checkpoint)?;
    let (frontier, samples) = load_split(&ctx.path(&args.dataset), args.split, limit, seed)?;
    anyhow::ensure!(
        frontier == model.config().frontier(),
        "dataset frontier {frontier} differs from the model's {}",
        model.config().frontier()
    );
    let mut resolved = KvMap::default();
    resolved.insert("metric_points", cfg.metric.points);
    resolved.insert("gen_max_steps", cfg.max_steps);
    resolved.insert("lambda", cfg.lambda);
    put(&mut resolved, "limit", limit);
    put(&mut resolved, "svg_limit", svg_limit);
    ctx.echo_config(&resolved);
    ctx.echo("seed", seed);
    ctx.echo("split", args.split);

    let (summary, preds) = ctx.install(|| evaluate_predictions(&model, &store, &samples, &cfg))??;
    let dir = match &args.report_dir {
        Some(d) => ctx.path(d),
        None => run_dir.join(format!("eval-{}", args.split.as_str())),
    };
    ctx.write_json(&dir.join("summary.json"), &summary)?;
    ctx.write(&dir.join("histogram.csv"), histogram_csv(&summary))?;
    let shown = svg_limit.unwrap_or(samples.len()).min(samples.len());
    for (i, (s, pred)) in samples.iter().zip(&preds).take(shown).enumerate() {
        ctx.write(&dir.join("svg").join(format!("{i:05}.svg")), comparison_svg(&s.graph, pred))?;
        ctx.write(&dir.join("pred").join(format!("{i:05}.rgf")), to_rgf_string(pred))?;
    }

    println!(
        "{} samples: streetmover {:.5} +- {:.5}, valid loss {}, dV {:.3}, dE {:.3}, flagged {}",
        summary.count,
        summary.sm_mean,
        summary.sm_std,
        summary.valid_loss_mean.map_or("n/a".to_string(), |v| format!("{v:.5}")),
        summary.delta_v_mean,
        summary.delta_e_mean,
        summary.flagged
    );
    ctx.echo(
        "result",
        serde_json::json!({
            "count": summary.count,
            "sm_mean": summary.sm_mean,
            "sm_std": summary.sm_std,
            "valid_loss_mean": summary.valid_loss_mean,
            "delta_v_mean": summary.delta_v_mean,
            "delta_e_mean": summary.delta_e_mean,
            "flagged": summary.flagged,
        }),
    );
    Ok(())
}
