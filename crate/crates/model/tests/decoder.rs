use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadforge_autodiff::ParamStore;
use roadforge_core::dataset::random_tile_graph;
use roadforge_core::geom::{max_span, Point2, SoftStep};
use roadforge_model::{
    sequence_loss, GgtConfig, Model, ModelConfig, ModelKind, Sample, StepInput, CA_HIDDEN, ENCODER_OUT,
};

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, frontier: usize) -> Vec<StepInput> {
    (0..n)
        .map(|_| StepInput {
            prev_adjacency: (0..=frontier).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect(),
            prev_coords: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        })
        .collect()
}

type Forward = dyn Fn(&ParamStore, &[f64], &[StepInput]) -> Vec<(Vec<f64>, [f64; 2])>;

fn forward_of(model: &Model) -> Box<Forward> {
    let model = model.clone();
    Box::new(move |store, code, inputs| {
        if let Some(g) = model.as_ggt() {
            g.decoder_forward(store, code, inputs).unwrap()
        } else {
            model.as_rnn().unwrap().decoder_forward(store, code, inputs).unwrap()
        }
    })
}

/// Outputs at steps `<= t` are bit-identical when inputs after `t` change.
fn assert_causal(cfg: ModelConfig, trials: usize) {
    let (model, store) = Model::build(cfg).unwrap();
    let forward = forward_of(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 100);
    let m = cfg.frontier();
    for _ in 0..trials {
        let len = rng.gen_range(2..9);
        let t = rng.gen_range(0..len - 1);
        let code: Vec<f64> = (0..ENCODER_OUT).map(|_| rng.gen_range(0.0..1.0)).collect();
        let inputs = random_inputs(&mut rng, len, m);
        let mut perturbed = inputs.clone();
        perturbed[t + 1..].clone_from_slice(&random_inputs(&mut rng, len - t - 1, m));
        let a = forward(&store, &code, &inputs);
        let b = forward(&store, &code, &perturbed);
        assert_eq!(a[..=t], b[..=t]);
        assert_ne!(a[t + 1..], b[t + 1..]);
        for (p, x) in &a {
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(x.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}

#[test]
fn ggt_is_causal() {
    assert_causal(ModelConfig::new(ModelKind::Ggt, GgtConfig::tiny(3)).with_seed(1), 20);
}

#[test]
fn ggt_excluding_self_is_causal() {
    let ggt = GgtConfig { exclude_self_attention: true, ..GgtConfig::tiny(3) };
    assert_causal(ModelConfig::new(ModelKind::Ggt, ggt).with_seed(2), 20);
}

#[test]
fn ggt_without_context_attention_is_causal() {
    assert_causal(ModelConfig::new(ModelKind::GgtNoCa, GgtConfig::tiny(3)).with_seed(3), 20);
}

#[test]
fn rnn_is_causal() {
    assert_causal(ModelConfig::new(ModelKind::Rnn, GgtConfig::tiny(3)).with_seed(4), 20);
}

fn samples(n: usize, seed: u64) -> (Vec<Sample>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs: Vec<_> = (0..n).map(|_| random_tile_graph(&mut rng)).collect();
    let m = graphs.iter().map(max_span).max().unwrap();
    (graphs.iter().map(|g| Sample::from_graph(g, m).unwrap()).collect(), m)
}

/// Teacher-forced inputs of one sample, built independently of the batch code.
fn teacher_inputs(s: &Sample) -> Vec<StepInput> {
    let m = s.frontier();
    let mut out = vec![StepInput::start(m)];
    for step in &s.sequence.steps[..s.sequence.len() - 1] {
        let mut adj: Vec<f64> = step.adjacency.iter().map(|&b| f64::from(u8::from(b))).collect();
        adj.push(0.0);
        out.push(StepInput { prev_adjacency: adj, prev_coords: [step.coords.x, step.coords.y] });
    }
    out
}

#[test]
fn batched_loss_matches_per_sequence_oracle() {
    for kind in [ModelKind::Ggt, ModelKind::Rnn] {
        let (data, m) = samples(3, 21);
        let (model, store) = Model::build(ModelConfig::new(kind, GgtConfig::tiny(m)).with_seed(9)).unwrap();
        let forward = forward_of(&model);
        let mut oracle = Vec::new();
        for s in &data {
            let code = model.encoder().encode(&store, &s.image).unwrap();
            let pred: Vec<SoftStep<f64>> = forward(&store, &code, &teacher_inputs(s))
                .into_iter()
                .map(|(p, x)| SoftStep { adjacency: p[..m].to_vec(), stop: p[m], coords: Point2::new(x[0], x[1]) })
                .collect();
            let expect = sequence_loss(&pred, &s.sequence, 0.5).unwrap();
            let got = model.eval_loss(&store, &[s], 0.5).unwrap();
            assert!((expect.total - got.total).abs() < 1e-12, "{kind}: {expect:?} vs {got:?}");
            assert!((expect.bce - got.bce).abs() < 1e-12 && (expect.mse - got.mse).abs() < 1e-12);
            oracle.push(expect.total);
        }
        // padded batch = mean of the per-sequence losses
        let refs: Vec<&Sample> = data.iter().collect();
        let batch = model.eval_loss(&store, &refs, 0.5).unwrap();
        let mean = oracle.iter().sum::<f64>() / 3.0;
        assert!((batch.total - mean).abs() < 1e-12, "{kind}: {} vs {mean}", batch.total);
    }
}

/// Independent count of trainable values from the architecture description.
fn expected_trainable(cfg: &ModelConfig) -> usize {
    let lin = |i: usize, o: usize| i * o + o;
    let encoder = lin(9, 8) + 2 * 8 + lin(8 * 9, 16) + 2 * 16 + lin(16, 1);
    let g = &cfg.ggt;
    let m = g.frontier;
    let inp = m + 3 + ENCODER_OUT;
    let heads = |h: usize| lin(h, g.head_hidden) + lin(g.head_hidden, m + 1) + lin(h, g.head_hidden) + lin(g.head_hidden, 2);
    match cfg.kind {
        ModelKind::Ggt | ModelKind::GgtNoCa => {
            let d = g.d_model;
            let ca = if g.context_attention { lin(inp, CA_HIDDEN) + lin(CA_HIDDEN, ENCODER_OUT) } else { 0 };
            let block = 4 * lin(d, d) + lin(d, g.mlp_inner) + lin(g.mlp_inner, d) + 4 * d;
            encoder + ca + lin(inp, d) + g.layers * block + heads(d)
        }
        ModelKind::Mlp => {
            let n = cfg.n_max;
            encoder + lin(ENCODER_OUT, cfg.mlp_hidden) * 2 + cfg.mlp_hidden * (n * (n + 1) / 2 + 2 * n) + n * (n + 1) / 2 + 2 * n
        }
        ModelKind::Rnn => {
            let h = cfg.rnn_hidden;
            encoder + lin(inp, 3 * h) + h * 3 * h + h + heads(h)
        }
    }
}

fn trainable(store: &ParamStore) -> usize {
    store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
}

#[test]
fn parameter_counts() {
    for kind in ModelKind::ALL {
        for ggt in [GgtConfig::default(), GgtConfig::desk(5), GgtConfig::tiny(3)] {
            let cfg = ModelConfig::new(kind, ggt);
            let (_, store) = Model::build(cfg).unwrap();
            assert_eq!(trainable(&store), expected_trainable(&cfg), "{kind} {ggt:?}");
        }
    }
    let (_, store) = Model::build(ModelConfig::new(ModelKind::Ggt, GgtConfig::default())).unwrap();
    assert_eq!(trainable(&store), 19_336_620);
    // batch-norm running mean and variance for 8 and 16 channels
    assert_eq!(store.iter().filter(|(_, p)| !p.trainable).map(|(_, p)| p.value.len()).sum::<usize>(), 48);
}

#[test]
fn initialization_is_seeded() {
    let cfg = ModelConfig::new(ModelKind::Ggt, GgtConfig::tiny(3));
    let (_, a) = Model::build(cfg.with_seed(5)).unwrap();
    let (_, b) = Model::build(cfg.with_seed(5)).unwrap();
    let (_, c) = Model::build(cfg.with_seed(6)).unwrap();
    let values = |s: &ParamStore| s.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<f64>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}
