use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Args, Subcommand};
use roadforge_core::dataset::{build_dataset, generate_synthetic_map, DatasetConfig, MapSource, Split};
use roadforge_core::kv::KvMap;

use crate::context::put;
use crate::Context;

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Tile a segment map into graph, image and sequence records.
    Build(BuildArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// Segment map CSV, one `lon0,lat0,lon1,lat1` segment per line.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub map: Option<PathBuf>,
    /// Generate a synthetic map of N x N tiles from the seed instead.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Dataset directory.
    #[arg(long, default_value = "dataset")]
    pub dir: PathBuf,
    /// Tile side in degrees.
    #[arg(long)]
    pub tile_side: Option<f64>,
    /// Fixed frontier size instead of the one computed from the train split.
    #[arg(long)]
    pub frontier: Option<usize>,
    /// Skip the translation and dihedral augmentation of train tiles.
    #[arg(long)]
    pub no_augment: bool,
}

pub fn build(args: &BuildArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "tile_side", args.tile_side);
    put(&mut flags, "frontier", args.frontier);
    if args.no_augment {
        flags.insert("augment", false);
    }
    let mut kv = ctx.config(&flags);
    let seed = ctx.seed(&kv)?;
    kv.insert("seed", seed);
    let only: KvMap = {
        let mut m = KvMap::default();
        for (k, v) in kv.iter().filter(|(k, _)| DatasetConfig::KEYS.contains(k)) {
            m.insert(k, v);
        }
        m
    };
    let config = DatasetConfig::from_kv(&only)?;
    ctx.echo_config(&config.to_kv());
    ctx.echo("seed", seed);

    let map = match (&args.map, args.synthetic) {
        (Some(path), _) => {
            let path = ctx.path(path);
            MapSource::read_csv(&path).with_context(|| format!("reading map {}", path.display()))?
        }
        (None, Some(size)) => {
            ctx.echo("synthetic_map_size", size);
            generate_synthetic_map(seed, size)?
        }
        (None, None) => unreachable!("clap requires --map or --synthetic"),
    };
    let dir = ctx.path(&args.dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = build_dataset(&map, &config, &dir, ctx.workers)?;
    let s = &out.stats;
    println!(
        "{} tiles ({} discarded), records train {} valid {} test {}, frontier {}",
        s.tiles,
        s.tiles_discarded,
        s.records.get(Split::Train),
        s.records.get(Split::Valid),
        s.records.get(Split::Test),
        s.frontier
    );
    ctx.echo("stats", s);
    ctx.wrote(&dir);
    Ok(())
}
