use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use roadforge_core::dataset::Split;
use roadforge_core::kv::KvMap;
use roadforge_core::raster::{inject_noise, NoiseLevel, NoiseSpec};
use roadforge_model::{evaluate, histogram_csv, Sample};
use serde_json::json;

use super::{eval_config, load_model, load_split, BEST_CKPT};
use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct NoiseBenchArgs {
    #[arg(long, default_value = "dataset")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    #[arg(long, default_value = BEST_CKPT)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Comma-separated noise levels (none, low, medium).
    #[arg(long, value_delimiter = ',', default_value = "none,low,medium")]
    pub levels: Vec<NoiseLevel>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Report directory; defaults to `<run-dir>/noise-bench`.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

/// Per-sample noise seed.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn run(args: &NoiseBenchArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "limit", args.limit);
    let kv = ctx.config(&flags);
    let seed = ctx.seed(&kv)?;
    let cfg = eval_config(&kv)?;
    let limit: Option<usize> = kv.parse_value("limit")?;
    let mut resolved = KvMap::default();
    resolved.insert("metric_points", cfg.metric.points);
    resolved.insert("gen_max_steps", cfg.max_steps);
    resolved.insert("lambda", cfg.lambda);
    put(&mut resolved, "limit", limit);
    ctx.echo_config(&resolved);
    ctx.echo("seed", seed);

    let run_dir = ctx.path(&args.run_dir);
    let (model, store) = load_model(&run_dir, &args.checkpoint)?;
    let (_, clean) = load_split(&ctx.path(&args.dataset), args.split, limit, seed)?;
    let dir = args.report_dir.as_ref().map_or_else(|| run_dir.join("noise-bench"), |d| ctx.path(d));

    let mut rows = Vec::new();
    for &level in &args.levels {
        let noisy: Vec<Sample> = clean
            .iter()
            .enumerate()
            .map(|(i, s)| Sample { image: inject_noise(&s.image, level, sample_seed(seed, i)), ..s.clone() })
            .collect();
        let summary = ctx.install(|| evaluate(&model, &store, &noisy, &cfg))??;
        ctx.write_json(&dir.join(format!("summary-{level}.json")), &summary)?;
        ctx.write(&dir.join(format!("histogram-{level}.csv")), histogram_csv(&summary))?;
        println!(
            "{:<7} flip fraction {:.3}  streetmover {:.5} +- {:.5}  dV {:.3}  dE {:.3}  flagged {}",
            level.to_string(),
            NoiseSpec::default().fraction(level),
            summary.sm_mean,
            summary.sm_std,
            summary.delta_v_mean,
            summary.delta_e_mean,
            summary.flagged
        );
        rows.push(json!({
            "level": level,
            "fraction": NoiseSpec::default().fraction(level),
            "count": summary.count,
            "sm_mean": summary.sm_mean,
            "sm_std": summary.sm_std,
            "delta_v_mean": summary.delta_v_mean,
            "delta_e_mean": summary.delta_e_mean,
            "flagged": summary.flagged,
        }));
    }
    let means: Vec<f64> = rows.iter().map(|r| r["sm_mean"].as_f64().unwrap_or(f64::NAN)).collect();
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    println!("streetmover non-decreasing with noise: {}", if monotone { "yes" } else { "no" });
    let report = json!({ "levels": rows, "monotone": monotone });
    ctx.write_json(&dir.join("noise_bench.json"), &report)?;
    ctx.echo("result", report);
    Ok(())
}
