//! `.rgf` text format.
//!
//! ```text
//! RGF1 <V> <E>
//! v <x> <y>      (V lines)
//! e <i> <j>      (E lines, i < j, 0-based)
//! ```
//!
//! Coordinates are written with the shortest representation that round-trips
//! exactly, padded to at least six fractional digits.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::graph::RoadGraph;
use super::point::Point2;
use super::sequence::canonicalize;

#[derive(Debug, thiserror::Error)]
pub enum RgfError {
    #[error("rgf parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] super::graph::GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Decimal text for `v` with at least six fractional digits, exact on re-parse.
pub fn format_decimal(v: f64) -> String {
    let mut s = format!("{v}");
    if v == 0.0 {
        s = "0".into();
    }
    match s.find('.') {
        Some(dot) => {
            let frac = s.len() - dot - 1;
            for _ in frac..6 {
                s.push('0');
            }
        }
        None => s.push_str(".000000"),
    }
    s
}

/// Serializes `g` with nodes in canonical order.
pub fn to_rgf_string(g: &RoadGraph<f64>) -> String {
    let g = canonicalize(g);
    let mut out = String::new();
    let _ = writeln!(out, "RGF1 {} {}", g.node_count(), g.edge_count());
    for p in g.nodes() {
        let _ = writeln!(out, "v {} {}", format_decimal(p.x), format_decimal(p.y));
    }
    let mut edges = g.edges().to_vec();
    edges.sort_unstable();
    for (i, j) in edges {
        let _ = writeln!(out, "e {i} {j}");
    }
    out
}

pub fn parse_rgf(text: &str) -> Result<RoadGraph<f64>, RgfError> {
    let err = |line: usize, msg: &str| RgfError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "RGF1" {
        return Err(err(ln, "expected `RGF1 <V> <E>`"));
    }
    let nv: usize = h[1].parse().map_err(|_| err(ln, "bad node count"))?;
    let ne: usize = h[2].parse().map_err(|_| err(ln, "bad edge count"))?;
    let mut nodes = Vec::with_capacity(nv);
    let mut edges = Vec::with_capacity(ne);
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => continue,
            ["v", x, y] => {
                if !edges.is_empty() {
                    return Err(err(ln, "node after edges"));
                }
                let x: f64 = x.parse().map_err(|_| err(ln, "bad x"))?;
                let y: f64 = y.parse().map_err(|_| err(ln, "bad y"))?;
                nodes.push(Point2::new(x, y));
            }
            ["e", i, j] => {
                let i: usize = i.parse().map_err(|_| err(ln, "bad edge index"))?;
                let j: usize = j.parse().map_err(|_| err(ln, "bad edge index"))?;
                if i >= j {
                    return Err(err(ln, "edge must satisfy i < j"));
                }
                edges.push((i, j));
            }
            _ => return Err(err(ln, "unrecognized line")),
        }
    }
    if nodes.len() != nv || edges.len() != ne {
        return Err(err(1, "counts in header do not match body"));
    }
    Ok(RoadGraph::new(nodes, edges)?)
}

pub fn write_rgf(path: &Path, g: &RoadGraph<f64>) -> Result<(), RgfError> {
    std::fs::write(path, to_rgf_string(g))?;
    Ok(())
}

pub fn read_rgf(path: &Path) -> Result<RoadGraph<f64>, RgfError> {
    parse_rgf(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decimal_padding() {
        assert_eq!(format_decimal(0.5), "0.500000");
        assert_eq!(format_decimal(-1.0), "-1.000000");
        assert_eq!(format_decimal(0.0), "0.000000");
        assert_eq!(format_decimal(-0.0), "0.000000");
        assert_eq!(format_decimal(0.1234567891), "0.1234567891");
    }

    #[test]
    fn text_layout() {
        let g = RoadGraph::new(vec![Point2::new(0.5, 0.5), Point2::new(-0.5, -0.25)], vec![(0, 1)]).unwrap();
        assert_eq!(
            to_rgf_string(&g),
            "RGF1 2 1\nv -0.500000 -0.250000\nv 0.500000 0.500000\ne 0 1\n"
        );
    }

    #[test]
    fn parse_errors() {
        assert!(parse_rgf("").is_err());
        assert!(parse_rgf("RGF2 0 0\n").is_err());
        assert!(parse_rgf("RGF1 1 0\n").is_err());
        assert!(parse_rgf("RGF1 2 1\nv 0 0\nv 1 1\ne 1 0\n").is_err());
        assert!(parse_rgf("RGF1 1 1\nv 0 0\ne 0 1\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(coords in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..9)) {
            let n = coords.len();
            let nodes = coords.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let edges = (1..n).map(|i| (i - 1, i)).collect();
            let g = RoadGraph::new(nodes, edges).unwrap();
            let back = parse_rgf(&to_rgf_string(&g)).unwrap();
            prop_assert_eq!(back, canonicalize(&g));
        }
    }
}
