use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use roadforge_autodiff::save_checkpoint;
use roadforge_core::dataset::Split;
use roadforge_core::kv::KvMap;
use roadforge_model::{train, GgtConfig, ModelConfig, ModelKind, TrainConfig};

use super::{load_split, BEST_CKPT, LAST_CKPT, MODEL_CFG, REPORT_JSONL, SUMMARY_JSON, TRAIN_CFG};
use crate::context::put;
use crate::Context;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `dataset build`.
    #[arg(long, default_value = "dataset")]
    pub dataset: PathBuf,
    /// Directory for the configs, report and checkpoints.
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    /// ggt, ggt_no_ca, mlp or rnn.
    #[arg(long)]
    pub model: Option<String>,
    /// Decoder size: desk (4 layers, width 64), tiny (2 layers, width 16) or full (12 layers, width 256).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Weight of the adjacency term; the coordinate term gets 1 - lambda.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train on a seeded subset of at most N records.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Validate on a seeded subset of at most N records.
    #[arg(long)]
    pub valid_limit: Option<usize>,
}

fn preset(name: &str, frontier: usize) -> Result<GgtConfig> {
    Ok(match name {
        "desk" => GgtConfig::desk(frontier),
        "tiny" => GgtConfig::tiny(frontier),
        "full" => GgtConfig { frontier, ..GgtConfig::default() },
        other => bail!("unknown preset `{other}` (desk, tiny, full)"),
    })
}

pub fn run(args: &TrainArgs, ctx: &mut Context) -> Result<()> {
    let mut flags = KvMap::default();
    put(&mut flags, "kind", args.model.as_deref());
    put(&mut flags, "preset", args.preset.as_deref());
    put(&mut flags, "lr", args.lr);
    put(&mut flags, "weight_decay", args.weight_decay);
    put(&mut flags, "lambda", args.lambda);
    put(&mut flags, "batch", args.batch);
    put(&mut flags, "epochs", args.epochs);
    put(&mut flags, "max_steps", args.max_steps);
    put(&mut flags, "patience", args.patience);
    put(&mut flags, "train_limit", args.train_limit);
    put(&mut flags, "valid_limit", args.valid_limit);
    let mut kv = ctx.config(&flags);
    let seed = ctx.seed(&kv)?;
    kv.insert("seed", seed);
    if kv.get("init_seed").is_none() {
        kv.insert("init_seed", seed);
    }

    let dataset = ctx.path(&args.dataset);
    let train_limit = kv.parse_value("train_limit")?;
    let valid_limit = kv.parse_value("valid_limit")?;
    let (frontier, train_set) = load_split(&dataset, Split::Train, train_limit, seed)?;
    let (_, valid_set) = load_split(&dataset, Split::Valid, valid_limit, seed ^ 1)?;
    match kv.parse_value::<usize>("frontier")? {
        Some(m) if m != frontier => bail!("config frontier {m} differs from the dataset frontier {frontier}"),
        _ => kv.insert("frontier", frontier),
    }

    let kind: ModelKind = kv.get("kind").unwrap_or("ggt").parse()?;
    let preset_name = kv.get("preset").unwrap_or("desk").to_string();
    let base = ModelConfig::new(kind, preset(&preset_name, frontier)?);
    let model_cfg = ModelConfig::from_kv(&kv, base)?;
    let train_cfg = TrainConfig::from_kv(&kv, TrainConfig::for_kind(kind))?;

    let mut resolved = model_cfg.to_kv().merged(&train_cfg.to_kv());
    resolved.insert("preset", &preset_name);
    put(&mut resolved, "train_limit", train_limit);
    put(&mut resolved, "valid_limit", valid_limit);
    ctx.echo_config(&resolved);
    ctx.echo("seed", seed);
    ctx.echo("dataset", dataset.display().to_string());
    ctx.echo("records", serde_json::json!({ "train": train_set.len(), "valid": valid_set.len() }));

    let run_dir = ctx.path(&args.run_dir);
    std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    ctx.write(&run_dir.join(MODEL_CFG), model_cfg.to_kv().to_text())?;
    ctx.write(&run_dir.join(TRAIN_CFG), train_cfg.to_kv().to_text())?;
    let report_path = run_dir.join(REPORT_JSONL);
    let mut report_out = BufWriter::new(File::create(&report_path)?);
    let last = run_dir.join(LAST_CKPT);
    println!(
        "training {kind} on {} records ({} valid), frontier {frontier}, batch {}",
        train_set.len(),
        valid_set.len(),
        train_cfg.batch
    );

    let (report, _, best) = ctx.install(|| {
        train(model_cfg, train_cfg, &train_set, &valid_set, |epoch, store| {
            serde_json::to_writer(&mut report_out, epoch).map_err(std::io::Error::from)?;
            report_out.write_all(b"\n")?;
            report_out.flush()?;
            save_checkpoint(store, &last)?;
            let valid = epoch.valid.map_or("-".to_string(), |v| format!("{:.5}", v.total));
            let sm = epoch.valid_sm.map_or("-".to_string(), |v| format!("{v:.5}"));
            println!(
                "epoch {:>3}  steps {:>6}  train {:.5} (bce {:.5} mse {:.5})  valid {valid}  sm {sm}",
                epoch.epoch, epoch.steps, epoch.train.total, epoch.train.bce, epoch.train.mse
            );
            Ok(())
        })
    })??;
    ctx.wrote(&report_path);
    ctx.wrote(&last);
    let best_path = run_dir.join(BEST_CKPT);
    save_checkpoint(&best, &best_path)?;
    ctx.wrote(&best_path);
    ctx.write_json(&run_dir.join(SUMMARY_JSON), &report)?;

    let best_sm = report.best_valid_sm.map_or("n/a".to_string(), |v| format!("{v:.5}"));
    println!(
        "best epoch {} (valid sm {best_sm}), {} steps{}",
        report.best_epoch,
        report.total_steps,
        if report.stopped_early { ", stopped early" } else { "" }
    );
    ctx.echo(
        "result",
        serde_json::json!({
            "best_epoch": report.best_epoch,
            "best_valid_sm": report.best_valid_sm,
            "total_steps": report.total_steps,
            "stopped_early": report.stopped_early,
        }),
    );
    Ok(())
}
