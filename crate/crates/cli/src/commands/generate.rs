use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;
use roadforge_core::geom::rgf::{read_rgf, to_rgf_string};
use roadforge_core::kv::KvMap;
use roadforge_core::raster::{rasterize, read_pgm, DEFAULT_HALF_WIDTH};
use roadforge_model::{comparison_svg, graph_svg, score_prediction, IMAGE_SIDE};

use super::{eval_config, load_model, BEST_CKPT};
use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    #[arg(long, default_value = BEST_CKPT)]
    pub checkpoint: PathBuf,
    /// 64x64 binary PGM segmentation.
    #[arg(long, required_unless_present = "graph", conflicts_with = "graph")]
    pub image: Option<PathBuf>,
    /// Rasterize this graph as the input and score the output against it.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value = "generated.rgf")]
    pub out: PathBuf,
    /// Also draw the result (under the input graph when given).
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

pub fn run(args: &GenerateArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "gen_max_steps", args.max_steps);
    let kv = ctx.config(&flags);
    let cfg = eval_config(&kv)?;
    let mut resolved = KvMap::default();
    resolved.insert("gen_max_steps", cfg.max_steps);
    resolved.insert("metric_points", cfg.metric.points);
    ctx.echo_config(&resolved);

    let (model, store) = load_model(&ctx.path(&args.run_dir), &args.checkpoint)?;
    let (image, truth) = match (&args.image, &args.graph) {
        (Some(p), _) => {
            let p = ctx.path(p);
            (read_pgm(&p).with_context(|| format!("reading {}", p.display()))?, None)
        }
        (None, Some(p)) => {
            let p = ctx.path(p);
            let g = read_rgf(&p).with_context(|| format!("reading {}", p.display()))?;
            (rasterize(&g, IMAGE_SIDE, DEFAULT_HALF_WIDTH), Some(g))
        }
        (None, None) => unreachable!("clap requires --image or --graph"),
    };
    let pred = model.generate(&store, &image, cfg.max_steps)?;
    let out = ctx.path(&args.out);
    ctx.write(&out, to_rgf_string(&pred))?;
    println!("generated {} nodes, {} edges -> {}", pred.node_count(), pred.edge_count(), out.display());
    let mut result = serde_json::json!({ "nodes": pred.node_count(), "edges": pred.edge_count() });
    if let Some(gt) = &truth {
        let (sm, flagged) = score_prediction(&pred, gt, &cfg.metric)?;
        println!("streetmover to input graph {sm:.6}{}", if flagged { " (empty prediction)" } else { "" });
        result["streetmover"] = serde_json::json!(sm);
    }
    if let Some(svg) = &args.svg {
        let text = match &truth {
            Some(gt) => comparison_svg(gt, &pred),
            None => graph_svg(&pred),
        };
        ctx.write(&ctx.path(svg), text)?;
    }
    ctx.echo("result", result);
    Ok(())
}
