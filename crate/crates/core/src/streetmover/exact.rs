//! Exact transport between equal-size uniform clouds via minimum-cost
//! assignment (Hungarian algorithm with row/column potentials).

use super::cloud::PointCloud;
use super::sinkhorn::cost_matrix;
use super::MetricError;
use crate::Real;

/// Largest cloud accepted by [`exact_ot`].
pub const EXACT_OT_MAX_POINTS: usize = 64;

/// Minimum assignment for a square row-major cost matrix.
///
/// Returns `assignment[row] = col` and the total cost.
pub fn min_cost_assignment<T: Real>(cost: &[T], n: usize) -> (Vec<usize>, T) {
    assert_eq!(cost.len(), n * n, "cost matrix must be square");
    // 1-based potentials formulation; column 0 is a virtual start column.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + cost[i * n + j]);
    (assignment, total)
}

/// Exact optimal transport cost between equal-size uniform clouds under
/// squared Euclidean cost, `(1/n) * min_sigma sum_i C[i, sigma(i)]`.
pub fn exact_ot<T: Real>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::SizeMismatch { left: p.len(), right: q.len() });
    }
    if p.len() > EXACT_OT_MAX_POINTS {
        return Err(MetricError::TooLarge { points: p.len(), max: EXACT_OT_MAX_POINTS });
    }
    let c = cost_matrix(p, q);
    let (_, total) = min_cost_assignment(&c, p.len());
    Ok(total * p.weight())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn cloud(pts: &[(f64, f64)]) -> PointCloud<f64> {
        PointCloud::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row * n + j] + rec(cost, n, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, n, 0, &mut vec![false; n])
    }

    #[test]
    fn two_point_example() {
        // straight-up matching: both points move by 1, weights 1/2 each
        let p = cloud(&[(0., 0.), (1., 0.)]);
        let q = cloud(&[(0., 1.), (1., 1.)]);
        assert_eq!(exact_ot(&p, &q).unwrap(), 1.0);
        assert_eq!(exact_ot(&q, &p).unwrap(), 1.0);
    }

    #[test]
    fn identical_is_zero() {
        let p = cloud(&[(0.3, 0.1), (-0.2, 0.9), (0.5, -0.5)]);
        assert_eq!(exact_ot(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn matches_enumeration() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for n in 1..=6 {
            let cost: Vec<f64> = (0..n * n).map(|_| next().abs() * 10.0).collect();
            let (assign, total) = min_cost_assignment(&cost, n);
            let mut seen = assign.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert!((total - brute_force(&cost, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn size_errors() {
        let p = cloud(&[(0., 0.)]);
        let q = cloud(&[(0., 0.), (1., 1.)]);
        assert_eq!(exact_ot(&p, &q), Err(MetricError::SizeMismatch { left: 1, right: 2 }));
    }
}
