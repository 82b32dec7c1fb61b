use std::fmt::Write as _;

use super::cloud::PointCloud;
use super::sinkhorn::TransportResult;
use crate::Real;

const SIZE: f64 = 400.0;

fn to_px(v: f64) -> f64 {
    (v + 1.0) * 0.5 * SIZE
}

/// Both clouds plus the `top_k` heaviest coupling entries as line segments.
/// Predicted points are blue, target points red.
pub fn render_transport_svg<T: Real>(
    predicted: &PointCloud<T>,
    target: &PointCloud<T>,
    transport: &TransportResult<T>,
    top_k: usize,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);

    let mut entries: Vec<(usize, usize, f64)> = (0..transport.rows)
        .flat_map(|i| (0..transport.cols).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, transport.get(i, j).to_f64_lossy()))
        .collect();
    entries.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then((a.0, a.1).cmp(&(b.0, b.1))));
    let heaviest = entries.first().map_or(1.0, |e| e.2).max(f64::MIN_POSITIVE);
    for &(i, j, w) in entries.iter().take(top_k) {
        let a = predicted.points()[i];
        let b = target.points()[j];
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-opacity="{:.3}"/>"#,
            to_px(a.x.to_f64_lossy()),
            to_px(a.y.to_f64_lossy()),
            to_px(b.x.to_f64_lossy()),
            to_px(b.y.to_f64_lossy()),
            (w / heaviest).clamp(0.05, 1.0)
        );
    }
    for (cloud, color) in [(predicted, "blue"), (target, "red")] {
        for p in cloud.points() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                to_px(p.x.to_f64_lossy()),
                to_px(p.y.to_f64_lossy())
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
