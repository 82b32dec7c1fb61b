use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context as _, Result};
use roadforge_core::dataset::DatasetConfig;
use roadforge_core::kv::KvMap;
use roadforge_model::{ModelConfig, TrainConfig};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::runlog;
use crate::GlobalArgs;

pub const SEED_ENV: &str = "ROADFORGE_SEED";

/// Keys read by the executable itself on top of the library configs.
const CLI_KEYS: &[&str] = &[
    "preset",
    "train_limit",
    "valid_limit",
    "limit",
    "svg_limit",
    "boundary_tol",
    "sinkhorn_eps",
    "sinkhorn_max_iter",
    "sinkhorn_tol",
    "top_k",
    "gradcheck_coords",
    "gradcheck_samples",
];

/// Every key a configuration file may hold. One file can serve all
/// subcommands; each reads the keys it needs.
pub static ALL_KEYS: std::sync::LazyLock<Vec<&'static str>> = std::sync::LazyLock::new(|| {
    let mut keys: Vec<&str> =
        [DatasetConfig::KEYS, ModelConfig::KEYS, TrainConfig::KEYS, CLI_KEYS].into_iter().flatten().copied().collect();
    keys.sort_unstable();
    keys.dedup();
    keys
});

/// Per-invocation state: resolved paths, configuration layers and the run
/// log record being assembled.
pub struct Context {
    pub out_dir: PathBuf,
    pub workers: usize,
    seed_flag: Option<u64>,
    base: KvMap,
    log_path: PathBuf,
    record: Map<String, Value>,
    outputs: Vec<String>,
}

impl Context {
    pub fn new(global: &GlobalArgs, command: &str, argv: Vec<String>) -> Result<Self> {
        let out_dir = global.out_dir.clone();
        fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { out_dir.join(p) };
        let file = match &global.config {
            Some(p) => {
                let path = resolve(p);
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                KvMap::parse(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => KvMap::default(),
        };
        let mut sets = KvMap::default();
        for s in &global.set {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
            sets.insert(k.trim(), v.trim());
        }
        let base = file.merged(&sets);
        base.check_known(&ALL_KEYS)?;

        let mut record = Map::new();
        record.insert("command".into(), json!(command));
        record.insert("argv".into(), json!(argv));
        record.insert("out_dir".into(), json!(out_dir.display().to_string()));
        record.insert("workers".into(), json!(global.workers));
        record.insert("versions".into(), runlog::versions());
        Ok(Self {
            log_path: resolve(&global.log),
            out_dir,
            workers: global.workers,
            seed_flag: global.seed,
            base,
            record,
            outputs: Vec::new(),
        })
    }

    /// `p` relative to the output directory unless absolute.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// Config file and `--set` values with `flags` on top.
    pub fn config(&self, flags: &KvMap) -> KvMap {
        self.base.merged(flags)
    }

    /// `--seed`, else the `seed` key, else `ROADFORGE_SEED`, else 0.
    pub fn seed(&self, kv: &KvMap) -> Result<u64> {
        if let Some(s) = self.seed_flag {
            return Ok(s);
        }
        if let Some(s) = kv.parse_value("seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|e| anyhow!("{SEED_ENV}=`{v}`: {e}")),
            Err(_) => Ok(0),
        }
    }

    pub fn echo(&mut self, key: &str, value: impl Serialize) {
        self.record.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Records the fully resolved configuration.
    pub fn echo_config(&mut self, kv: &KvMap) {
        let map: Map<String, Value> = kv.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        self.record.insert("config".into(), Value::Object(map));
    }

    pub fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.wrote(path);
        Ok(())
    }

    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text)
    }

    /// Runs `f` on a pool of `--workers` threads (the global pool for 0).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        if self.workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build()?;
        Ok(pool.install(f))
    }

    pub fn finish(mut self, code: i32, err: Option<&anyhow::Error>, elapsed: Duration) -> Result<()> {
        self.record.insert("outputs".into(), json!(self.outputs));
        self.record.insert("exit_code".into(), json!(code));
        self.record.insert("error".into(), err.map_or(Value::Null, |e| json!(format!("{e:#}"))));
        self.record.insert("wall_time_s".into(), json!(elapsed.as_secs_f64()));
        runlog::append(&self.log_path, &Value::Object(self.record))
    }
}

/// Inserts `value` under `key` when present.
pub(crate) fn put<T: Display>(kv: &mut KvMap, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.insert(key, v);
    }
}
