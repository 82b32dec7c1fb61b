use rayon::prelude::*;
use roadforge_autodiff::ParamStore;
use roadforge_core::geom::{Point2, RoadGraph};
use roadforge_core::streetmover::{sample_point_cloud, sinkhorn, streetmover, PointCloud, StreetMoverParams};
use serde::{Deserialize, Serialize};

use crate::batch::Sample;
use crate::model::{Model, DEFAULT_MAX_STEPS};
use crate::Result;

pub const HISTOGRAM_BIN: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metric: StreetMoverParams,
    pub max_steps: usize,
    /// Weight of the adjacency term in the reported validation loss.
    pub lambda: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { metric: StreetMoverParams::default(), max_steps: DEFAULT_MAX_STEPS, lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub index: usize,
    pub streetmover: f64,
    /// The prediction had no edges and was scored against a single point at
    /// the image centre.
    pub flagged: bool,
    pub pred_nodes: usize,
    pub pred_edges: usize,
    pub gt_nodes: usize,
    pub gt_edges: usize,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub sm_mean: f64,
    /// Population standard deviation over samples.
    pub sm_std: f64,
    pub valid_loss_mean: Option<f64>,
    pub delta_v_mean: f64,
    pub delta_e_mean: f64,
    pub flagged: usize,
    /// Counts per bin of width [`HISTOGRAM_BIN`] starting at 0.
    pub histogram: Vec<usize>,
    pub samples: Vec<SampleEval>,
}

/// StreetMover of a prediction against the ground truth. A prediction
/// without edges is scored against a single point at the image centre and
/// flagged.
pub fn score_prediction(pred: &RoadGraph<f64>, gt: &RoadGraph<f64>, params: &StreetMoverParams) -> Result<(f64, bool)> {
    if pred.edge_count() == 0 {
        let proxy = PointCloud::single(Point2::origin());
        let target = sample_point_cloud(gt, params.points)?;
        return Ok((sinkhorn(&proxy, &target, &params.sinkhorn).cost, true));
    }
    Ok((streetmover(pred, gt, params)?, false))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Aggregates per-sample results in the given order.
pub fn summarize(samples: Vec<SampleEval>) -> EvalSummary {
    let count = samples.len();
    let sm_mean = mean(samples.iter().map(|s| s.streetmover));
    let sm_std = mean(samples.iter().map(|s| (s.streetmover - sm_mean).powi(2))).sqrt();
    let valid_loss_mean = samples.iter().map(|s| s.valid_loss).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()));
    let delta_v_mean = mean(samples.iter().map(|s| s.pred_nodes.abs_diff(s.gt_nodes) as f64));
    let delta_e_mean = mean(samples.iter().map(|s| s.pred_edges.abs_diff(s.gt_edges) as f64));
    let bin = |v: f64| (v.max(0.0) / HISTOGRAM_BIN).floor() as usize;
    let mut histogram = vec![0; samples.iter().map(|s| bin(s.streetmover) + 1).max().unwrap_or(0)];
    for s in &samples {
        histogram[bin(s.streetmover)] += 1;
    }
    EvalSummary {
        count,
        sm_mean,
        sm_std,
        valid_loss_mean: if count == 0 { None } else { valid_loss_mean },
        delta_v_mean,
        delta_e_mean,
        flagged: samples.iter().filter(|s| s.flagged).count(),
        histogram,
        samples,
    }
}

/// Scores an arbitrary generator. `generate` returns the predicted graph and
/// optionally the sample's validation loss. Runs on the current rayon pool;
/// the result does not depend on the number of threads.
pub fn evaluate_with<F>(samples: &[Sample], metric: &StreetMoverParams, generate: F) -> Result<EvalSummary>
where
    F: Fn(&Sample) -> Result<(RoadGraph<f64>, Option<f64>)> + Sync,
{
    score_all(samples, metric, generate).map(|(summary, _)| summary)
}

/// Like [`evaluate_with`], also returning the predicted graphs in sample order.
pub fn score_all<F>(samples: &[Sample], metric: &StreetMoverParams, generate: F) -> Result<(EvalSummary, Vec<RoadGraph<f64>>)>
where
    F: Fn(&Sample) -> Result<(RoadGraph<f64>, Option<f64>)> + Sync,
{
    let per: Vec<(SampleEval, RoadGraph<f64>)> = samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let (pred, valid_loss) = generate(s)?;
            let (sm, flagged) = score_prediction(&pred, &s.graph, metric)?;
            let eval = SampleEval {
                index,
                streetmover: sm,
                flagged,
                pred_nodes: pred.node_count(),
                pred_edges: pred.edge_count(),
                gt_nodes: s.graph.node_count(),
                gt_edges: s.graph.edge_count(),
                valid_loss,
            };
            Ok((eval, pred))
        })
        .collect::<Result<_>>()?;
    let (evals, preds) = per.into_iter().unzip();
    Ok((summarize(evals), preds))
}

/// Generates a graph per sample and computes every metric, including the
/// teacher-forced loss with running batch-norm statistics.
pub fn evaluate(model: &Model, store: &ParamStore, samples: &[Sample], cfg: &EvalConfig) -> Result<EvalSummary> {
    evaluate_predictions(model, store, samples, cfg).map(|(summary, _)| summary)
}

/// [`evaluate`] plus the predicted graphs in sample order.
pub fn evaluate_predictions(
    model: &Model,
    store: &ParamStore,
    samples: &[Sample],
    cfg: &EvalConfig,
) -> Result<(EvalSummary, Vec<RoadGraph<f64>>)> {
    score_all(samples, &cfg.metric, |s| {
        let pred = model.generate(store, &s.image, cfg.max_steps)?;
        let loss = model.eval_loss(store, &[s], cfg.lambda)?;
        Ok((pred, Some(loss.total)))
    })
}

/// `bin_start,bin_end,count` rows.
pub fn histogram_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in summary.histogram.iter().enumerate() {
        out.push_str(&format!("{:.3},{:.3},{c}\n", i as f64 * HISTOGRAM_BIN, (i + 1) as f64 * HISTOGRAM_BIN));
    }
    out
}

/// Mean and sample standard deviation of `sm_mean` across runs (for example
/// different seeds); `None` with fewer than two runs.
pub fn aggregate_runs(runs: &[EvalSummary]) -> Option<(f64, f64)> {
    if runs.len() < 2 {
        return None;
    }
    let m = mean(runs.iter().map(|r| r.sm_mean));
    let var = runs.iter().map(|r| (r.sm_mean - m).powi(2)).sum::<f64>() / (runs.len() - 1) as f64;
    Some((m, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use roadforge_core::dataset::random_tile_graph;

    fn samples(n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n).map(|_| Sample::from_graph(&random_tile_graph(&mut rng), 8).unwrap()).collect()
    }

    #[test]
    fn echoing_generator_is_perfect() {
        let s = samples(6);
        let sum = evaluate_with(&s, &StreetMoverParams::default(), |x| Ok((x.graph.clone(), None))).unwrap();
        assert!(sum.sm_mean < 1e-3);
        assert_eq!((sum.delta_v_mean, sum.delta_e_mean, sum.flagged), (0.0, 0.0, 0));
        assert_eq!(sum.histogram.iter().sum::<usize>(), 6);
        assert_eq!(sum.valid_loss_mean, None);
    }

    #[test]
    fn empty_generator_is_flagged() {
        let s = samples(5);
        let sum = evaluate_with(&s, &StreetMoverParams::default(), |_| Ok((RoadGraph::empty(), Some(1.0)))).unwrap();
        assert_eq!(sum.flagged, 5);
        let mean_v = s.iter().map(|x| x.graph.node_count() as f64).sum::<f64>() / 5.0;
        assert!((sum.delta_v_mean - mean_v).abs() < 1e-12);
        assert!(sum.sm_mean > 0.0);
        assert_eq!(sum.valid_loss_mean, Some(1.0));
        assert_eq!(sum.histogram.iter().sum::<usize>(), 5);
    }

    #[test]
    fn histogram_bins() {
        let mk = |sm: f64| SampleEval {
            index: 0,
            streetmover: sm,
            flagged: false,
            pred_nodes: 1,
            pred_edges: 3,
            gt_nodes: 4,
            gt_edges: 2,
            valid_loss: None,
        };
        let sum = summarize(vec![mk(0.0), mk(0.0049), mk(0.0051), mk(0.0123)]);
        assert_eq!(sum.histogram, vec![2, 1, 1]);
        assert_eq!((sum.delta_v_mean, sum.delta_e_mean), (3.0, 1.0));
        assert!(histogram_csv(&sum).starts_with("bin_start,bin_end,count\n0.000,0.005,2\n"));
        assert_eq!(aggregate_runs(&[sum.clone()]), None);
        let (m, sd) = aggregate_runs(&[sum.clone(), summarize(vec![mk(0.1)])]).unwrap();
        assert!((m - (sum.sm_mean + 0.1) / 2.0).abs() < 1e-15 && sd > 0.0);
    }
}
