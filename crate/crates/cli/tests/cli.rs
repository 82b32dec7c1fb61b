use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_core::dataset::random_tile_graph;
use roadforge_core::geom::rgf::{read_rgf, write_rgf};
use roadforge_core::stitch::split_into_grid;
use roadforge_core::streetmover::{streetmover, streetmover_detailed, StreetMoverParams};

fn roadforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadforge"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove(roadforge_cli::SEED_ENV)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn log_lines(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("run.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_graph(dir: &Path, name: &str, seed: u64) {
    let g = random_tile_graph(&mut ChaCha8Rng::seed_from_u64(seed));
    write_rgf(&dir.join(name), &g).unwrap();
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = roadforge(dir, &["metric", "a.rgf", "b.rgf", "--bogus"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(roadforge(dir, &["noise-bench", "--levels", "loud"]).status.code(), Some(64));
    assert_eq!(roadforge(dir, &["--help"]).status.code(), Some(0));

    assert_eq!(roadforge(dir, &["metric", "missing.rgf", "missing.rgf"]).status.code(), Some(2));
    fs::write(dir.join("bad.rgf"), "RGF1 2 1\nv 0 0\n").unwrap();
    write_graph(dir, "a.rgf", 1);
    assert_eq!(roadforge(dir, &["metric", "a.rgf", "bad.rgf"]).status.code(), Some(1));
    assert_eq!(roadforge(dir, &["--set", "no_such_key=1", "metric", "a.rgf", "a.rgf"]).status.code(), Some(1));
    assert_eq!(roadforge(dir, &["--set", "metric_points=many", "metric", "a.rgf", "a.rgf"]).status.code(), Some(1));

    let log = log_lines(dir);
    assert_eq!(log.len(), 3, "validation failures after parsing the config are logged too");
    assert_eq!(log[0]["exit_code"], 2);
    assert!(log[0]["error"].as_str().unwrap().contains("missing.rgf"));
}

#[test]
fn metric_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_graph(dir, "a.rgf", 3);
    write_graph(dir, "b.rgf", 4);
    let o = roadforge(dir, &["metric", "a.rgf", "a.rgf"]);
    assert_eq!(o.status.code(), Some(0));
    let self_cost: f64 = stdout(&o).trim().parse().unwrap();
    assert!((0.0..1e-3).contains(&self_cost));

    let o = roadforge(dir, &["metric", "a.rgf", "b.rgf", "--dump-coupling", "plan.csv", "--svg", "plan.svg", "--top-k", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let cost: f64 = stdout(&o).trim().parse().unwrap();
    let (a, b) = (read_rgf(&dir.join("a.rgf")).unwrap(), read_rgf(&dir.join("b.rgf")).unwrap());
    let detail = streetmover_detailed(&a, &b, &StreetMoverParams::default()).unwrap();
    assert_eq!(cost, detail.transport.cost);
    let plan = fs::read_to_string(dir.join("plan.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        plan.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), detail.transport.rows);
    assert!(rows.iter().all(|r| r.len() == detail.transport.cols));
    let mass: f64 = rows.iter().flatten().sum();
    assert!((mass - 1.0).abs() < 1e-6);
    let svg = fs::read_to_string(dir.join("plan.svg")).unwrap();
    assert_eq!(svg.matches("<line").count(), 5);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_roadforge"));
        c.arg("--out-dir").arg(dir).args(extra).args(["dataset", "build", "--synthetic", "4", "--no-augment"]);
        match env {
            Some(v) => c.env(roadforge_cli::SEED_ENV, v),
            None => c.env_remove(roadforge_cli::SEED_ENV),
        };
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        log_lines(dir).last().unwrap()["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], None), 0);
    assert_eq!(run(&[], Some("11")), 11);
    assert_eq!(run(&["--set", "seed=12"], Some("11")), 12);
    assert_eq!(run(&["--seed", "13", "--set", "seed=12"], Some("11")), 13);
    let last = log_lines(dir).pop().unwrap();
    assert_eq!(last["config"]["seed"], "13");
    assert_eq!(last["config"]["augment"], "false");
    assert!(last["versions"]["roadforge"].is_string());
    assert!(last["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn stitch_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let g = random_tile_graph(&mut ChaCha8Rng::seed_from_u64(8));
    let tiles = dir.join("tiles");
    fs::create_dir_all(&tiles).unwrap();
    let mut manifest = String::from("# row-major\n");
    for (r, row) in split_into_grid(&g, 2, 2).iter().enumerate() {
        for (c, t) in row.iter().enumerate() {
            write_rgf(&tiles.join(format!("{r}{c}.rgf")), t).unwrap();
            manifest.push_str(&format!("{r}{c}.rgf\n"));
        }
    }
    fs::write(tiles.join("grid.txt"), manifest).unwrap();
    let o = roadforge(dir, &["stitch", "tiles/grid.txt", "--rows", "2", "--cols", "2", "--svg", "s.svg"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = read_rgf(&dir.join("stitched.rgf")).unwrap();
    assert!(streetmover(&merged, &g, &StreetMoverParams::default()).unwrap() < 1e-3);
    assert!(dir.join("s.svg").exists());
    let o = roadforge(dir, &["stitch", "tiles/grid.txt", "--rows", "1", "--cols", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_generate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(roadforge(dir, &["--seed", "2", "dataset", "build", "--synthetic", "20"]));
    fs::write(dir.join("desk.cfg"), "# shared config\npreset = tiny\nbatch = 8\nepochs = 2\nlimit = 5\n").unwrap();
    let out = ok(roadforge(dir, &["--config", "desk.cfg", "train", "--train-limit", "16", "--valid-limit", "4"]));
    assert!(out.contains("epoch   1"));
    for f in ["model.cfg", "train.cfg", "best.ckpt", "last.ckpt", "train_report.jsonl", "train_summary.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let epochs = fs::read_to_string(dir.join("run/train_report.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 2);

    ok(roadforge(dir, &["--config", "desk.cfg", "eval", "--report-dir", "e1"]));
    ok(roadforge(dir, &["--config", "desk.cfg", "--workers", "2", "eval", "--report-dir", "e2"]));
    let summary = fs::read(dir.join("e1/summary.json")).unwrap();
    assert_eq!(summary, fs::read(dir.join("e2/summary.json")).unwrap());
    let parsed: serde_json::Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(parsed["count"], 5);
    assert_eq!(fs::read_dir(dir.join("e1/svg")).unwrap().count(), 5);
    assert!(fs::read_to_string(dir.join("e1/histogram.csv")).unwrap().starts_with("bin_start,bin_end,count"));

    let pred = dir.join("e1/pred/00000.rgf");
    let out = ok(roadforge(dir, &["generate", "--graph", pred.to_str().unwrap(), "--out", "g.rgf", "--svg", "g.svg"]));
    assert!(out.contains("generated"));
    assert!(dir.join("g.rgf").exists() && dir.join("g.svg").exists());

    let out = ok(roadforge(dir, &["--config", "desk.cfg", "noise-bench", "--levels", "none,medium", "--limit", "3"]));
    assert!(out.contains("non-decreasing"));
    let bench: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/noise-bench/noise_bench.json")).unwrap()).unwrap();
    assert_eq!(bench["levels"].as_array().unwrap().len(), 2);

    let o = roadforge(dir, &["--set", "frontier=99", "train", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
