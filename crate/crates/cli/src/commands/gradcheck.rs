use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_core::dataset::random_tile_graph;
use roadforge_core::geom::max_span;
use roadforge_core::kv::KvMap;
use roadforge_model::{check_model, model_grad_check_config, GgtConfig, ModelConfig, ModelKind, Sample};
use serde_json::json;

use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', default_value = "ggt,ggt_no_ca,mlp,rnn")]
    pub models: Vec<ModelKind>,
    /// Frontier size of the checked decoders.
    #[arg(long, default_value_t = 3)]
    pub frontier: usize,
    /// Random graphs in the checked batch.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Coordinates sampled per parameter tensor (0 checks all).
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long, default_value = "gradcheck.json")]
    pub report: PathBuf,
}

/// `n` random tile graphs that fit the frontier.
fn graphs(n: usize, frontier: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = random_tile_graph(&mut rng);
        if max_span(&g) <= frontier {
            out.push(Sample::from_graph(&g, frontier)?);
        }
    }
    Ok(out)
}

pub fn run(args: &GradcheckArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "gradcheck_samples", args.samples);
    put(&mut flags, "gradcheck_coords", args.coords);
    let kv = ctx.config(&flags);
    let seed = ctx.seed(&kv)?;
    let n: usize = kv.parse_value("gradcheck_samples")?.unwrap_or(2);
    let coords: usize = kv.parse_value("gradcheck_coords")?.unwrap_or(12);
    if n == 0 || args.frontier == 0 {
        bail!("gradcheck needs at least one sample and a positive frontier");
    }
    let samples = graphs(n, args.frontier, seed)?;
    let gc = model_grad_check_config((coords > 0).then_some(coords), seed);
    let mut resolved = KvMap::default();
    resolved.insert("gradcheck_samples", n);
    resolved.insert("gradcheck_coords", coords);
    resolved.insert("frontier", args.frontier);
    resolved.insert("fd_step", gc.step);
    resolved.insert("tolerance", gc.tol);
    resolved.insert("floor", gc.floor);
    ctx.echo_config(&resolved);
    ctx.echo("seed", seed);

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for &kind in &args.models {
        let start = Instant::now();
        let cfg = ModelConfig::new(kind, GgtConfig::tiny(args.frontier)).with_seed(seed);
        let r = check_model(cfg, &samples, &gc)?;
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{:<10} checked {:>5}  excluded {:>3}  max rel err {:.3e}  {:.1}s  {}",
            kind.name(),
            r.checked,
            r.excluded.len(),
            r.max_rel_error,
            secs,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(kind.name());
        }
        let worst = r.worst.as_ref().map(|w| {
            json!({ "param": w.param, "index": w.index, "analytic": w.analytic, "numeric": w.numeric, "rel_error": w.rel_error })
        });
        rows.push(json!({
            "model": kind.name(),
            "checked": r.checked,
            "excluded": r.excluded.len(),
            "failures": r.failures.len(),
            "max_rel_error": r.max_rel_error,
            "worst": worst,
            "passed": r.passed,
            "seconds": secs,
        }));
    }
    ctx.write_json(&ctx.path(&args.report), &rows)?;
    ctx.echo("result", &rows);
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
