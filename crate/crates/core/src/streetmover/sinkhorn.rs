//! Entropy-regularized optimal transport between uniform point clouds,
//! solved with log-domain Sinkhorn iterations.
//!
//! At small `eps` plain Sinkhorn converges slowly on clouds sampled along
//! lines, so once the marginal error drops below [`NEWTON_SWITCH`] the same
//! dual problem is finished with damped Newton steps. Both kinds of step count
//! as iterations.

use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::Real;

/// Marginal error at which Sinkhorn sweeps hand over to Newton steps.
pub const NEWTON_SWITCH: f64 = 1e-1;

const STAGE_TOL: f64 = 1e-2;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub eps: f64,
    pub max_iter: usize,
    /// Target L1 violation of the row plus column marginals.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { eps: 1e-3, max_iter: 10_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult<T> {
    pub cost: T,
    /// Row-major `n x m` transport plan.
    pub coupling: Vec<T>,
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub converged: bool,
    /// L1 violation of the row and column marginals at exit.
    pub marginal_error: T,
}

impl<T: Real> TransportResult<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.coupling[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.coupling.chunks(self.cols).map(|r| r.iter().fold(T::zero(), |a, &b| a + b)).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.coupling.chunks(self.cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Squared Euclidean cost matrix, row-major.
pub fn cost_matrix<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Vec<T> {
    let mut c = Vec::with_capacity(p.len() * q.len());
    for a in p.points() {
        for b in q.points() {
            c.push(a.dist_sq(*b));
        }
    }
    c
}

fn log_sum_exp<T: Real>(vals: impl Iterator<Item = T> + Clone) -> T {
    let mx = vals.clone().fold(T::neg_infinity(), |a, b| a.max(b));
    if mx == T::neg_infinity() {
        return mx;
    }
    let s = vals.fold(T::zero(), |acc, v| acc + (v - mx).exp());
    mx + s.ln()
}

fn sum<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x)
}

struct Problem<'a, T> {
    c: &'a [T],
    n: usize,
    m: usize,
    a: T,
    b: T,
}

impl<T: Real> Problem<'_, T> {
    fn plan(&self, f: &[T], g: &[T], eps: T) -> Vec<T> {
        let mut p = Vec::with_capacity(self.n * self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                p.push(((f[i] + g[j] - self.c[i * self.m + j]) / eps).exp());
            }
        }
        p
    }

    fn marginals(&self, plan: &[T]) -> (Vec<T>, Vec<T>) {
        let mut rows = vec![T::zero(); self.n];
        let mut cols = vec![T::zero(); self.m];
        for i in 0..self.n {
            for j in 0..self.m {
                let v = plan[i * self.m + j];
                rows[i] += v;
                cols[j] += v;
            }
        }
        (rows, cols)
    }

    fn error(&self, f: &[T], g: &[T], eps: T) -> T {
        let (rows, cols) = self.marginals(&self.plan(f, g, eps));
        let r = rows.iter().fold(T::zero(), |acc, &s| acc + (s - self.a).abs());
        cols.iter().fold(r, |acc, &s| acc + (s - self.b).abs())
    }

    fn sweep(&self, f: &mut [T], g: &mut [T], eps: T) {
        let (log_a, log_b) = (self.a.ln(), self.b.ln());
        for i in 0..self.n {
            let row = &self.c[i * self.m..(i + 1) * self.m];
            f[i] = eps * (log_a - log_sum_exp(row.iter().zip(g.iter()).map(|(&cij, &gj)| (gj - cij) / eps)));
        }
        for j in 0..self.m {
            g[j] = eps * (log_b - log_sum_exp((0..self.n).map(|i| (f[i] - self.c[i * self.m + j]) / eps)));
        }
    }

    /// Dual objective, maximized at the entropic optimum.
    fn dual(&self, f: &[T], g: &[T], eps: T) -> T {
        self.a * sum(f) + self.b * sum(g) - eps * sum(&self.plan(f, g, eps))
    }

    /// One damped Newton ascent step on the dual. Returns `false` when no
    /// acceptable step exists.
    fn newton_step(&self, f: &mut [T], g: &mut [T], eps: T) -> bool {
        let (n, m) = (self.n, self.m);
        let plan = self.plan(f, g, eps);
        let (rows, cols) = self.marginals(&plan);
        // Unknowns df[..n] and dg[..m-1]; dg[m-1] = 0 pins the constant shift.
        let k = n + m - 1;
        let mut h = vec![T::zero(); k * k];
        let mut rhs = vec![T::zero(); k];
        for i in 0..n {
            h[i * k + i] = rows[i];
            rhs[i] = (self.a - rows[i]) * eps;
            for j in 0..m - 1 {
                let v = plan[i * m + j];
                h[i * k + n + j] = v;
                h[(n + j) * k + i] = v;
            }
        }
        for j in 0..m - 1 {
            h[(n + j) * k + n + j] = cols[j];
            rhs[n + j] = (self.b - cols[j]) * eps;
        }
        // Nearly deterministic plans split into weakly coupled blocks; a small
        // ridge keeps the system positive definite.
        let ridge = T::lit(RIDGE) * self.a.min(self.b);
        for d in 0..k {
            h[d * k + d] += ridge;
        }
        let Some(step) = cholesky_solve(&mut h, &rhs, k) else {
            return false;
        };
        let base = self.dual(f, g, eps);
        let base_err = self.error(f, g, eps);
        let slope = step.iter().zip(&rhs).fold(T::zero(), |acc, (&s, &r)| acc + s * r) / eps;
        if !(slope > T::zero()) {
            return false;
        }
        let mut alpha = T::one();
        for _ in 0..30 {
            let nf: Vec<T> = (0..n).map(|i| f[i] + alpha * step[i]).collect();
            let ng: Vec<T> = (0..m).map(|j| if j + 1 < m { g[j] + alpha * step[n + j] } else { g[j] }).collect();
            let value = self.dual(&nf, &ng, eps);
            // Near the optimum the dual gain drops below rounding; a smaller
            // marginal error is then the deciding test.
            let accept = value.is_finite()
                && (value >= base + T::lit(1e-4) * alpha * slope || self.error(&nf, &ng, eps) < base_err);
            if accept {
                f.copy_from_slice(&nf);
                g.copy_from_slice(&ng);
                return true;
            }
            alpha = alpha * T::half();
        }
        false
    }
}

/// Cholesky factorization in place, then solve. `None` if not positive definite.
fn cholesky_solve<T: Real>(h: &mut [T], rhs: &[T], k: usize) -> Option<Vec<T>> {
    for j in 0..k {
        let mut d = h[j * k + j];
        for p in 0..j {
            d -= h[j * k + p] * h[j * k + p];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        h[j * k + j] = d;
        for i in j + 1..k {
            let mut s = h[i * k + j];
            for p in 0..j {
                s -= h[i * k + p] * h[j * k + p];
            }
            h[i * k + j] = s / d;
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..k {
        for p in 0..i {
            let v = h[i * k + p] * y[p];
            y[i] -= v;
        }
        y[i] = y[i] / h[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            let v = h[p * k + i] * y[p];
            y[i] -= v;
        }
        y[i] = y[i] / h[i * k + i];
    }
    Some(y)
}

/// Entropic transport between uniform clouds under squared Euclidean cost.
///
/// Potentials are warm-started through the schedule `c_max / 2^k` down to
/// `eps`; at the target `eps` iteration continues until the L1 marginal
/// violation is below `tol` or `max_iter` iterations have been spent in total.
/// The returned cost is `sum_ij P_ij C_ij`.
pub fn sinkhorn<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>, params: &SinkhornParams) -> TransportResult<T> {
    assert!(params.eps > 0.0, "eps must be positive");
    let (n, m) = (p.len(), q.len());
    let c = cost_matrix(p, q);
    let prob = Problem { c: &c, n, m, a: p.weight(), b: q.weight() };
    let eps = T::lit(params.eps);
    let tol = T::lit(params.tol);

    let c_max = c.iter().fold(T::zero(), |acc, &v| acc.max(v));
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    let mut iterations = 0;
    let mut stage_eps = c_max;
    'stages: while stage_eps > eps {
        loop {
            if iterations >= params.max_iter {
                break 'stages;
            }
            prob.sweep(&mut f, &mut g, stage_eps);
            iterations += 1;
            if iterations % 5 == 0 && prob.error(&f, &g, stage_eps) < T::lit(STAGE_TOL) {
                break;
            }
        }
        stage_eps = stage_eps * T::half();
    }

    let switch = T::lit(NEWTON_SWITCH);
    let mut err = prob.error(&f, &g, eps);
    let mut newton_ok = true;
    while !(err < tol) && iterations < params.max_iter {
        // After a failed Newton step one sweep runs before the next attempt.
        if m > 1 && newton_ok && err < switch {
            newton_ok = prob.newton_step(&mut f, &mut g, eps);
        } else {
            prob.sweep(&mut f, &mut g, eps);
            newton_ok = true;
        }
        iterations += 1;
        err = prob.error(&f, &g, eps);
    }

    let coupling = prob.plan(&f, &g, eps);
    let cost = coupling.iter().zip(&c).fold(T::zero(), |acc, (&pij, &cij)| acc + pij * cij);
    TransportResult {
        cost,
        coupling,
        rows: n,
        cols: m,
        iterations,
        converged: err < tol,
        marginal_error: err,
    }
}
