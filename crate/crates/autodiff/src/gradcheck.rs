use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::{AdError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Lower bound of the relative-error denominator, so derivatives that
    /// are zero up to rounding compare on an absolute scale.
    pub floor: f64,
    /// Coordinates checked per tensor; larger tensors are sampled.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-6, tol: 1e-4, floor: 1e-6, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink (ReLU sign or pooling
    /// winner change); reported, not counted as failures.
    pub excluded: Vec<(String, usize)>,
    pub max_rel_error: f64,
    pub worst: Option<CoordCheck>,
    pub failures: Vec<CoordCheck>,
    pub passed: bool,
}

/// Compares the tape gradient of `f` against central differences for every
/// trainable parameter coordinate (or a seeded sample per tensor).
///
/// `f` must build the same scalar loss on a fresh tape each time it is called.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, AdError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let base_sig = tape.signature();
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, g) in grads.params() {
        analytic[id.index()] = Some(g.data().to_vec());
    }
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<(f64, u64), AdError> {
        let mut t = Tape::new();
        let l = f(store, &mut t)?;
        Ok((t.value(l).item(), t.signature()))
    };

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        checked: 0,
        excluded: Vec::new(),
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        passed: true,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(k) if k < n => {
                let mut c = rand::seq::index::sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let name = store.get(id).name.clone();
        for i in coords {
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + cfg.step;
            let (fp, sp) = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - cfg.step;
            let (fm, sm) = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.excluded.push((name.clone(), i));
                continue;
            }
            let num = (fp - fm) / (2.0 * cfg.step);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(cfg.floor);
            let c = CoordCheck { param: name.clone(), index: i, analytic: a, numeric: num, rel_error: rel };
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(c.clone());
            }
            if rel >= cfg.tol {
                report.failures.push(c);
            }
        }
    }
    report.passed = report.failures.is_empty();
    Ok(report)
}
