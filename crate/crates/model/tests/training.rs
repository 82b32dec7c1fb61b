use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadforge_autodiff::{load_checkpoint, save_checkpoint, ParamStore, Tape};
use roadforge_core::dataset::random_tile_graph;
use roadforge_core::geom::max_span;
use roadforge_model::{evaluate, train, EvalConfig, GgtConfig, Mode, Model, ModelConfig, ModelKind, Sample, TrainConfig, Trainer};

fn samples(n: usize, seed: u64, frontier: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let g = random_tile_graph(&mut rng);
        if max_span(&g) <= frontier {
            out.push(Sample::from_graph(&g, frontier).unwrap());
        }
    }
    out
}

fn small_run() -> TrainConfig {
    TrainConfig { batch: 4, epochs: 4, patience: 10, lr: 5e-4, ..TrainConfig::default() }
}

#[test]
fn same_seed_same_report_and_best_is_argmin() {
    let m = 4;
    let (tr, va) = (samples(8, 1, m), samples(4, 2, m));
    let cfg = ModelConfig::new(ModelKind::GgtNoCa, GgtConfig::tiny(m)).with_seed(3);
    let mut snapshots: Vec<ParamStore> = Vec::new();
    let (a, _, best) = train(cfg, small_run(), &tr, &va, |_, s| {
        snapshots.push(s.clone());
        Ok(())
    })
    .unwrap();
    let (b, _, _) = train(cfg, small_run(), &tr, &va, |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.epochs.len(), 4);
    assert_eq!(a.total_steps, 8);

    let sms: Vec<f64> = a.epochs.iter().map(|e| e.valid_sm.unwrap()).collect();
    let argmin = (0..sms.len()).fold(0, |best, i| if sms[i] < sms[best] { i } else { best });
    assert_eq!(a.best_epoch, argmin);
    assert_eq!(a.best_valid_sm, Some(sms[argmin]));
    let values = |s: &ParamStore| s.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<f64>>();
    assert_eq!(values(&best), values(&snapshots[argmin]));
    let line = serde_json::to_string(&a.epochs[0]).unwrap();
    assert!(line.contains("\"valid_sm\""));
}

#[test]
fn patience_and_step_cap_stop_training() {
    let m = 4;
    let (tr, va) = (samples(8, 4, m), samples(2, 5, m));
    let cfg = ModelConfig::new(ModelKind::GgtNoCa, GgtConfig::tiny(m));
    let (r, _, _) = train(cfg, TrainConfig { patience: 0, ..small_run() }, &tr, &va, |_, _| Ok(())).unwrap();
    assert!(r.stopped_early);
    assert!(r.epochs.len() < 4);
    let (r, _, _) = train(cfg, TrainConfig { max_steps: Some(3), ..small_run() }, &tr, &[], |_, _| Ok(())).unwrap();
    assert_eq!((r.total_steps, r.epochs.len(), r.best_valid_sm), (3, 2, None));
}

#[test]
fn lambda_one_ignores_coordinates() {
    let m = 4;
    let data = samples(3, 6, m);
    let refs: Vec<&Sample> = data.iter().collect();
    for kind in [ModelKind::Ggt, ModelKind::Rnn, ModelKind::Mlp] {
        let (model, store) = Model::build(ModelConfig::new(kind, GgtConfig::tiny(m))).unwrap();
        let mut tape = Tape::new();
        let loss = model.loss(&store, &mut tape, &refs, 1.0, Mode::Train).unwrap();
        let grads = tape.backward(loss).unwrap();
        let coord_head = if kind == ModelKind::Mlp { "mlp.x" } else { "head.x" };
        let mut seen = 0;
        for (id, g) in grads.params() {
            if store.get(id).name.starts_with(coord_head) {
                assert!(g.data().iter().all(|&v| v == 0.0), "{kind} {}", store.get(id).name);
                seen += 1;
            }
        }
        assert_eq!(seen, 4);
    }
}

#[test]
fn checkpoint_reproduces_evaluation() {
    let m = 4;
    let (tr, te) = (samples(6, 7, m), samples(3, 8, m));
    let cfg = ModelConfig::new(ModelKind::Ggt, GgtConfig::tiny(m)).with_seed(2);
    let (_, model, store) = train(cfg, TrainConfig { epochs: 2, ..small_run() }, &tr, &[], |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&store, &path).unwrap();
    let (fresh, mut loaded) = Model::build(cfg).unwrap();
    load_checkpoint(&mut loaded, &path).unwrap();
    let a = evaluate(&model, &store, &te, &EvalConfig::default()).unwrap();
    let b = evaluate(&fresh, &loaded, &te, &EvalConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.count, 3);
    assert!(a.valid_loss_mean.unwrap() > 0.0);
}

#[test]
fn overfits_a_single_sample() {
    let m = 4;
    let sample = samples(1, 9, m);
    let cfg = ModelConfig::new(ModelKind::Ggt, GgtConfig::desk(m)).with_seed(2);
    let mut t = Trainer::new(cfg, TrainConfig { batch: 1, lr: 1e-3, ..TrainConfig::default() }).unwrap();
    let mut sm = f64::INFINITY;
    while t.steps() < 600 && sm >= 0.01 {
        t.step(&[&sample[0]]).unwrap();
        if t.steps().is_multiple_of(25) {
            sm = t.streetmover(&sample).unwrap().sm_mean;
        }
    }
    assert!(sm < 0.01, "streetmover {sm} after {} steps", t.steps());
}
