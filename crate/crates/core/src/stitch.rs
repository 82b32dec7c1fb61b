//! Merging per-tile graphs into one larger network, and the inverse cut.
//!
//! Cell `(r, c)` of an `R x C` grid is placed at offset `(2c, 2r)`, so it
//! covers `[2c-1, 2c+1] x [2r-1, 2r+1]` in grid units. The stitched graph is
//! rescaled per axis back to `[-1, 1]`.

use std::collections::BTreeSet;

use crate::geom::{bend_deviation_deg, Point2, RoadGraph, UnionFind};
use crate::Real;

/// Default merge tolerance in cell units (the node-merge eps of a tile).
pub const DEFAULT_BOUNDARY_TOL: f64 = 0.1;

/// Merged border nodes of degree 2 bending less than this are dissolved.
pub const BORDER_COLLINEAR_DEG: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StitchError {
    #[error("grid has no cells")]
    EmptyGrid,
    #[error("grid row {row} has {got} cells, expected {expected}")]
    RaggedGrid { row: usize, got: usize, expected: usize },
    #[error("boundary tolerance must be positive")]
    BadTolerance,
}

fn grid_shape<T>(grid: &[Vec<RoadGraph<T>>]) -> Result<(usize, usize), StitchError> {
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(StitchError::EmptyGrid);
    }
    for (row, cells) in grid.iter().enumerate() {
        if cells.len() != cols {
            return Err(StitchError::RaggedGrid { row, got: cells.len(), expected: cols });
        }
    }
    Ok((rows, cols))
}

fn box_distance<T: Real>(p: Point2<T>, r: usize, c: usize) -> T {
    let two = T::two();
    let (cx, cy) = (two * T::from_usize(c).unwrap(), two * T::from_usize(r).unwrap());
    let dx = ((p.x - cx).abs() - T::one()).max(T::zero());
    let dy = ((p.y - cy).abs() - T::one()).max(T::zero());
    (dx * dx + dy * dy).sqrt()
}

/// Stitches an `R x C` grid of tile graphs (each in `[-1, 1]` coordinates).
///
/// Nodes of neighbouring cells that are mutual nearest neighbours within
/// `boundary_tol` (cell units) near their shared border are merged at their
/// centroid. A merged node left with degree 2 on an almost straight line
/// (below [`BORDER_COLLINEAR_DEG`]) is a cut artifact and is dissolved.
pub fn stitch<T: Real>(grid: &[Vec<RoadGraph<T>>], boundary_tol: T) -> Result<RoadGraph<T>, StitchError> {
    let (rows, cols) = grid_shape(grid)?;
    if !(boundary_tol > T::zero()) {
        return Err(StitchError::BadTolerance);
    }
    let two = T::two();

    let mut nodes: Vec<Point2<T>> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut ranges = Vec::with_capacity(rows * cols);
    for (r, cells) in grid.iter().enumerate() {
        for (c, g) in cells.iter().enumerate() {
            let off = Point2::new(two * T::from_usize(c).unwrap(), two * T::from_usize(r).unwrap());
            let base = nodes.len();
            nodes.extend(g.nodes().iter().map(|&p| p + off));
            edges.extend(g.edges().iter().map(|&(i, j)| (i + base, j + base)));
            ranges.push((r, c, base..nodes.len()));
        }
    }

    let mut uf = UnionFind::new(nodes.len());
    for (a, (ra, ca, range_a)) in ranges.iter().enumerate() {
        for (rb, cb, range_b) in &ranges[a + 1..] {
            if ra.abs_diff(*rb) > 1 || ca.abs_diff(*cb) > 1 {
                continue;
            }
            let near_a: Vec<usize> =
                range_a.clone().filter(|&i| box_distance(nodes[i], *rb, *cb) <= boundary_tol).collect();
            let near_b: Vec<usize> =
                range_b.clone().filter(|&j| box_distance(nodes[j], *ra, *ca) <= boundary_tol).collect();
            let nearest = |i: usize, pool: &[usize]| -> Option<usize> {
                pool.iter()
                    .copied()
                    .filter(|&j| nodes[i].dist(nodes[j]) <= boundary_tol)
                    .min_by(|&x, &y| nodes[i].dist_sq(nodes[x]).partial_cmp(&nodes[i].dist_sq(nodes[y])).unwrap())
            };
            for &i in &near_a {
                if let Some(j) = nearest(i, &near_b) {
                    if nearest(j, &near_a) == Some(i) {
                        uf.union(i, j);
                    }
                }
            }
        }
    }

    // Contract clusters; numbering follows the smallest member.
    let mut cluster_of = vec![usize::MAX; nodes.len()];
    let mut sums: Vec<(Point2<T>, usize)> = Vec::new();
    for i in 0..nodes.len() {
        let root = uf.find(i);
        if cluster_of[root] == usize::MAX {
            cluster_of[root] = sums.len();
            sums.push((Point2::origin(), 0));
        }
        let k = cluster_of[root];
        cluster_of[i] = k;
        sums[k].0 = sums[k].0 + nodes[i];
        sums[k].1 += 1;
    }
    let merged: Vec<bool> = sums.iter().map(|&(_, k)| k > 1).collect();
    let points: Vec<Point2<T>> =
        sums.iter().map(|&(s, k)| s * (T::one() / T::from_usize(k).unwrap())).collect();
    let contracted = RoadGraph::from_raw(points, edges.iter().map(|&(i, j)| (cluster_of[i], cluster_of[j])));
    let dissolved = dissolve_cut_nodes(&contracted, &merged);

    let (sx, sy) = (T::from_usize(cols).unwrap(), T::from_usize(rows).unwrap());
    Ok(dissolved.map_points(|p| Point2::new((p.x + T::one()) / sx - T::one(), (p.y + T::one()) / sy - T::one())))
}

fn dissolve_cut_nodes<T: Real>(g: &RoadGraph<T>, merged: &[bool]) -> RoadGraph<T> {
    let limit = T::lit(BORDER_COLLINEAR_DEG);
    let mut alive = vec![true; g.node_count()];
    let mut edges: BTreeSet<(usize, usize)> = g.edges().iter().copied().collect();
    loop {
        let mut adj = vec![Vec::new(); g.node_count()];
        for &(i, j) in &edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let candidate = (0..g.node_count()).find(|&v| {
            alive[v] && merged[v] && adj[v].len() == 2 && {
                let (u, w) = (adj[v][0], adj[v][1]);
                !edges.contains(&(u.min(w), u.max(w)))
                    && bend_deviation_deg(g.nodes()[u], g.nodes()[v], g.nodes()[w]) < limit
            }
        });
        let Some(v) = candidate else { break };
        let (u, w) = (adj[v][0], adj[v][1]);
        edges.remove(&(u.min(v), u.max(v)));
        edges.remove(&(w.min(v), w.max(v)));
        edges.insert((u.min(w), u.max(w)));
        alive[v] = false;
    }
    let mut index = vec![usize::MAX; g.node_count()];
    let mut nodes = Vec::new();
    for (i, &keep) in alive.iter().enumerate() {
        if keep {
            index[i] = nodes.len();
            nodes.push(g.nodes()[i]);
        }
    }
    RoadGraph::from_raw(nodes, edges.into_iter().map(|(i, j)| (index[i], index[j])))
}

/// Cuts a graph in `[-1, 1]` coordinates into an `rows x cols` grid of tile
/// graphs, inserting a node wherever an edge crosses a cell border.
///
/// Each piece goes to the cell containing its midpoint; nodes on a border are
/// copied into every cell that uses them.
pub fn split_into_grid<T: Real>(g: &RoadGraph<T>, rows: usize, cols: usize) -> Vec<Vec<RoadGraph<T>>> {
    assert!(rows > 0 && cols > 0, "grid must have at least one cell");
    let (sx, sy) = (T::from_usize(cols).unwrap(), T::from_usize(rows).unwrap());
    let two = T::two();
    let to_grid = |p: Point2<T>| Point2::new((p.x + T::one()) * sx - T::one(), (p.y + T::one()) * sy - T::one());
    let cell_of = |v: T, n: usize| -> usize {
        let k = ((v + T::one()) / two).floor().to_isize().unwrap_or(0);
        k.clamp(0, n as isize - 1) as usize
    };

    let mut nodes: Vec<Point2<T>> = g.nodes().iter().map(|&p| to_grid(p)).collect();
    // (cell row, cell col, a, b) pieces in global node ids
    let mut pieces: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut used = vec![false; nodes.len()];
    for &(i, j) in g.edges() {
        let (a, b) = (nodes[i], nodes[j]);
        let mut cuts: Vec<(T, Point2<T>)> = Vec::new();
        for k in 1..cols {
            let line = two * T::from_usize(k).unwrap() - T::one();
            if (a.x - line) * (b.x - line) < T::zero() {
                let t = (line - a.x) / (b.x - a.x);
                cuts.push((t, Point2::new(line, a.y + t * (b.y - a.y))));
            }
        }
        for k in 1..rows {
            let line = two * T::from_usize(k).unwrap() - T::one();
            if (a.y - line) * (b.y - line) < T::zero() {
                let t = (line - a.y) / (b.y - a.y);
                cuts.push((t, Point2::new(a.x + t * (b.x - a.x), line)));
            }
        }
        cuts.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        let mut chain = vec![i];
        for (_, p) in cuts {
            nodes.push(p);
            used.push(false);
            chain.push(nodes.len() - 1);
        }
        chain.push(j);
        for w in chain.windows(2) {
            let mid = nodes[w[0]].lerp(nodes[w[1]], T::half());
            pieces.push((cell_of(mid.y, rows), cell_of(mid.x, cols), w[0], w[1]));
            used[w[0]] = true;
            used[w[1]] = true;
        }
    }

    let mut out = vec![vec![RoadGraph::empty(); cols]; rows];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let off = Point2::new(two * T::from_usize(c).unwrap(), two * T::from_usize(r).unwrap());
            let mut local = vec![usize::MAX; nodes.len()];
            let mut pts = Vec::new();
            let mut add = |v: usize, pts: &mut Vec<Point2<T>>| {
                if local[v] == usize::MAX {
                    local[v] = pts.len();
                    pts.push(nodes[v] - off);
                }
                local[v]
            };
            let mut es = Vec::new();
            for &(pr, pc, a, b) in &pieces {
                if (pr, pc) == (r, c) {
                    let (la, lb) = (add(a, &mut pts), add(b, &mut pts));
                    es.push((la, lb));
                }
            }
            for v in 0..g.node_count() {
                if !used[v] && (cell_of(nodes[v].y, rows), cell_of(nodes[v].x, cols)) == (r, c) {
                    add(v, &mut pts);
                }
            }
            *cell = RoadGraph::from_raw(pts, es);
        }
    }
    out
}
