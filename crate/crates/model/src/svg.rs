use std::fmt::Write as _;
use std::path::Path;

use roadforge_core::geom::RoadGraph;

const PANEL: f64 = 256.0;
const GAP: f64 = 16.0;

fn panel(out: &mut String, g: &RoadGraph<f64>, top: f64) {
    let px = |v: f64| (v + 1.0) * 0.5 * PANEL;
    let _ = writeln!(out, r#"<rect x="0" y="{top:.1}" width="{PANEL:.1}" height="{PANEL:.1}" fill="white" stroke="gray"/>"#);
    for &(i, j) in g.edges() {
        let (a, b) = (g.nodes()[i], g.nodes()[j]);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.5"/>"#,
            px(a.x),
            top + px(a.y),
            px(b.x),
            top + px(b.y)
        );
    }
    for p in g.nodes() {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="red"/>"#, px(p.x), top + px(p.y));
    }
}

/// Ground truth on top, prediction below. An empty prediction is replaced by
/// an "empty" label.
pub fn comparison_svg(gt: &RoadGraph<f64>, pred: &RoadGraph<f64>) -> String {
    let height = 2.0 * PANEL + GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL:.0}" height="{height:.0}" viewBox="0 0 {PANEL:.0} {height:.0}">"#
    );
    panel(&mut out, gt, 0.0);
    let top = PANEL + GAP;
    if pred.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="20">empty</text>"#,
            PANEL / 2.0,
            top + PANEL / 2.0
        );
    } else {
        panel(&mut out, pred, top);
    }
    out.push_str("</svg>\n");
    out
}

/// One panel with `g` alone.
pub fn graph_svg(g: &RoadGraph<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL:.0}" height="{PANEL:.0}" viewBox="0 0 {PANEL:.0} {PANEL:.0}">"#
    );
    panel(&mut out, g, 0.0);
    out.push_str("</svg>\n");
    out
}

pub fn render_comparison_svg(gt: &RoadGraph<f64>, pred: &RoadGraph<f64>, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, comparison_svg(gt, pred))
}
