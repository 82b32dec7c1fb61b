use std::path::PathBuf;

use anyhow::{ensure, Context as _, Result};
use clap::Args;
use roadforge_core::geom::rgf::{read_rgf, to_rgf_string};
use roadforge_core::kv::KvMap;
use roadforge_core::stitch::{stitch, DEFAULT_BOUNDARY_TOL};
use roadforge_model::graph_svg;

use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct StitchArgs {
    /// Text file listing R*C tile graphs in row-major order, one path per
    /// line, relative to the manifest's directory. Row 0 is the top row.
    pub manifest: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Merge distance across tile borders, in tile half-widths.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value = "stitched.rgf")]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn run(args: &StitchArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "boundary_tol", args.tol);
    let kv = ctx.config(&flags);
    let tol = kv.parse_value("boundary_tol")?.unwrap_or(DEFAULT_BOUNDARY_TOL);
    let mut resolved = KvMap::default();
    resolved.insert("boundary_tol", tol);
    ctx.echo_config(&resolved);

    let manifest = ctx.path(&args.manifest);
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
    let paths: Vec<PathBuf> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect();
    ensure!(
        args.rows > 0 && args.cols > 0 && paths.len() == args.rows * args.cols,
        "manifest lists {} tiles, grid is {}x{}",
        paths.len(),
        args.rows,
        args.cols
    );
    let tiles = paths
        .iter()
        .map(|p| read_rgf(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<Vec<_>> = tiles.chunks(args.cols).map(<[_]>::to_vec).collect();
    let g = stitch(&grid, tol)?;
    let out = ctx.path(&args.out);
    ctx.write(&out, to_rgf_string(&g))?;
    if let Some(svg) = &args.svg {
        ctx.write(&ctx.path(svg), graph_svg(&g))?;
    }
    println!("stitched {}x{} tiles: {} nodes, {} edges -> {}", args.rows, args.cols, g.node_count(), g.edge_count(), out.display());
    ctx.echo("result", serde_json::json!({ "nodes": g.node_count(), "edges": g.edge_count() }));
    Ok(())
}
