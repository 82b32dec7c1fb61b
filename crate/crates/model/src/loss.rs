use roadforge_autodiff::{Tape, Var};
use roadforge_core::geom::{CanonicalSequence, SoftStep};
use serde::{Deserialize, Serialize};

use crate::batch::SeqBatch;
use crate::{ModelError, Result};

/// Probabilities are clamped this far from 0 and 1 before taking logs.
const PROB_CLAMP: f64 = 1e-12;

/// Loss value with its two terms; `total = lambda * bce + (1 - lambda) * mse`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub bce: f64,
    pub mse: f64,
}

impl LossParts {
    pub fn combine(bce: f64, mse: f64, lambda: f64) -> Self {
        Self { total: lambda * bce + (1.0 - lambda) * mse, bce, mse }
    }
}

/// Binary cross-entropy of probability `p` against target `a`.
pub fn bce(p: f64, a: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(a * p.ln() + (1.0 - a) * (1.0 - p).ln())
}

/// Sequence loss on probabilities: BCE averaged over the `N * (M + 1)`
/// adjacency and stop entries, plus `sum ||x - x~||^2 / (2N)`, with `N` the
/// number of steps including the stop step.
pub fn sequence_loss(pred: &[SoftStep<f64>], target: &CanonicalSequence<f64>, lambda: f64) -> Result<LossParts> {
    if pred.len() != target.steps.len() {
        return Err(ModelError::LengthMismatch { predicted: pred.len(), target: target.steps.len() });
    }
    let m = target.frontier_size;
    let n = pred.len() as f64;
    let (mut b, mut sq) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(&target.steps) {
        if p.adjacency.len() != m {
            return Err(ModelError::Graph(format!("predicted step has {} adjacency values, frontier is {m}", p.adjacency.len())));
        }
        b += p.adjacency.iter().zip(&t.adjacency).map(|(&q, &a)| bce(q, f64::from(u8::from(a)))).sum::<f64>();
        b += bce(p.stop, f64::from(u8::from(t.stop)));
        sq += p.coords.dist_sq(t.coords);
    }
    Ok(LossParts::combine(b / (n * (m + 1) as f64), sq / (2.0 * n), lambda))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LossVars {
    pub total: Var,
    pub bce: Var,
    pub mse: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossParts {
        LossParts { total: tape.value(self.total).item(), bce: tape.value(self.bce).item(), mse: tape.value(self.mse).item() }
    }
}

pub(crate) fn combine(tape: &mut Tape, bce: Var, mse: Var, lambda: f64) -> Result<LossVars> {
    let a = tape.scale(bce, lambda);
    let b = tape.scale(mse, 1.0 - lambda);
    Ok(LossVars { total: tape.add(a, b)?, bce, mse })
}

/// Batch loss of a sequential decoder: the per-sequence loss averaged over
/// the batch, padding rows excluded through their zero weight.
pub(crate) fn sequence_batch_loss(
    tape: &mut Tape,
    logits: Var,
    coords: Var,
    batch: &SeqBatch,
    lambda: f64,
) -> Result<LossVars> {
    let b = tape.bce_logits(logits, &batch.adj_target, &batch.weights, (batch.frontier + 1) as f64)?;
    let m = tape.squared_error(coords, &batch.coord_target, &batch.weights, 2.0)?;
    combine(tape, b, m, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use roadforge_core::geom::{to_sequence, Point2, RoadGraph};

    fn target() -> CanonicalSequence<f64> {
        let g = RoadGraph::new(vec![Point2::new(0.1, -0.2), Point2::new(0.5, 0.4)], vec![(0, 1)]).unwrap();
        to_sequence(&g, 2).unwrap()
    }

    #[test]
    fn exact_prediction_is_zero() {
        let t = target();
        let l = sequence_loss(&t.to_soft(), &t, 0.5).unwrap();
        assert!(l.total.abs() < 1e-10, "{l:?}");
        assert!(l.bce >= 0.0 && l.mse == 0.0);
    }

    #[test]
    fn convex_combination() {
        assert!((LossParts::combine(0.2, 0.1, 0.5).total - 0.15).abs() < 1e-15);
    }

    #[test]
    fn one_step_half_probabilities() {
        // M + 1 = 2 with targets (1, 0): -(ln 0.5 + ln 0.5) / 2 = ln 2
        let t = CanonicalSequence {
            steps: vec![roadforge_core::geom::SequenceStep { adjacency: vec![true], coords: Point2::origin(), stop: false }],
            frontier_size: 1,
        };
        let pred = [SoftStep { adjacency: vec![0.5], stop: 0.5, coords: Point2::origin() }];
        let l = sequence_loss(&pred, &t, 1.0).unwrap();
        assert!((l.bce - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let t = target();
        let soft = t.to_soft();
        assert!(matches!(
            sequence_loss(&soft[..2], &t, 0.5),
            Err(ModelError::LengthMismatch { predicted: 2, target: 3 })
        ));
    }
}
