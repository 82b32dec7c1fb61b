use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;
use roadforge_core::geom::rgf::read_rgf;
use roadforge_core::kv::KvMap;
use roadforge_core::streetmover::{render_transport_svg, streetmover_detailed, TransportResult};

use super::metric_params;
use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Predicted graph (.rgf).
    pub predicted: PathBuf,
    /// Target graph (.rgf).
    pub target: PathBuf,
    /// Points sampled along each graph.
    #[arg(long)]
    pub points: Option<usize>,
    /// Entropic regularization of the Sinkhorn solver.
    #[arg(long)]
    pub sinkhorn_eps: Option<f64>,
    /// Write the transport plan as a dense CSV matrix.
    #[arg(long)]
    pub dump_coupling: Option<PathBuf>,
    /// Draw both clouds and the heaviest coupling entries.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Coupling entries drawn in the SVG.
    #[arg(long)]
    pub top_k: Option<usize>,
}

fn coupling_csv(t: &TransportResult<f64>) -> String {
    let mut out = String::new();
    for i in 0..t.rows {
        let row: Vec<String> = (0..t.cols).map(|j| format!("{:e}", t.get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn run(args: &MetricArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "metric_points", args.points);
    put(&mut flags, "sinkhorn_eps", args.sinkhorn_eps);
    put(&mut flags, "top_k", args.top_k);
    let kv = ctx.config(&flags);
    let params = metric_params(&kv)?;
    let top_k: usize = kv.parse_value("top_k")?.unwrap_or(200);
    let mut resolved = KvMap::default();
    resolved.insert("metric_points", params.points);
    resolved.insert("sinkhorn_eps", params.sinkhorn.eps);
    resolved.insert("sinkhorn_max_iter", params.sinkhorn.max_iter);
    resolved.insert("sinkhorn_tol", params.sinkhorn.tol);
    resolved.insert("top_k", top_k);
    ctx.echo_config(&resolved);

    let read = |p: &PathBuf| {
        let p = ctx.path(p);
        read_rgf(&p).with_context(|| format!("reading {}", p.display()))
    };
    let (pred, target) = (read(&args.predicted)?, read(&args.target)?);
    let detail = streetmover_detailed(&pred, &target, &params)?;
    println!("{}", detail.transport.cost);
    if let Some(p) = &args.dump_coupling {
        ctx.write(&ctx.path(p), coupling_csv(&detail.transport))?;
    }
    if let Some(p) = &args.svg {
        ctx.write(&ctx.path(p), render_transport_svg(&detail.predicted, &detail.target, &detail.transport, top_k))?;
    }
    ctx.echo(
        "result",
        serde_json::json!({ "streetmover": detail.transport.cost, "iterations": detail.transport.iterations }),
    );
    Ok(())
}
