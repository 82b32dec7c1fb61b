use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    None,
    Low,
    Medium,
}

impl std::str::FromStr for NoiseLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "none" => Ok(Self::None),
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            other => Err(format!("unknown noise level `{other}`")),
        }
    }
}

impl std::fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Low => "low",
            Self::Medium => "medium",
        })
    }
}

/// Flip fractions per noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub low: f64,
    pub medium: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { low: 0.02, medium: 0.08 }
    }
}

impl NoiseSpec {
    pub fn fraction(&self, level: NoiseLevel) -> f64 {
        match level {
            NoiseLevel::None => 0.0,
            NoiseLevel::Low => self.low,
            NoiseLevel::Medium => self.medium,
        }
    }
}

pub fn inject_noise(img: &GrayImage, level: NoiseLevel, seed: u64) -> GrayImage {
    inject_noise_fraction(img, NoiseSpec::default().fraction(level), seed)
}

/// Boundary jitter followed by flipping exactly `round(fraction * pixels)`
/// distinct pixels.
///
/// Each road boundary pixel (set, with an unset 4-neighbor) is jittered with
/// probability `fraction`: either it is cleared or one of its unset
/// neighbors is set, chosen by coin flip.
pub fn inject_noise_fraction(img: &GrayImage, fraction: f64, seed: u64) -> GrayImage {
    assert!((0.0..=1.0).contains(&fraction), "noise fraction must lie in [0, 1]");
    if fraction == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();

    let on = |r: usize, c: usize| img.get(r, c) >= 0.5;
    for r in 0..h {
        for c in 0..w {
            if !on(r, c) {
                continue;
            }
            let off_neighbors: Vec<(usize, usize)> = neighbors(r, c, h, w).filter(|&(rr, cc)| !on(rr, cc)).collect();
            if off_neighbors.is_empty() || !rng.gen_bool(fraction) {
                continue;
            }
            if rng.gen_bool(0.5) {
                out.set(r, c, 0.0);
            } else {
                let (rr, cc) = off_neighbors[rng.gen_range(0..off_neighbors.len())];
                out.set(rr, cc, 1.0);
            }
        }
    }

    let n = w * h;
    let k = (fraction * n as f64).round() as usize;
    for i in sample(&mut rng, n, k).into_iter() {
        let (r, c) = (i / w, i % w);
        let v = out.get(r, c);
        out.set(r, c, 1.0 - v);
    }
    out
}

fn neighbors(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (r.wrapping_sub(1), c),
        (r + 1, c),
        (r, c.wrapping_sub(1)),
        (r, c + 1),
    ];
    cand.into_iter().filter(move |&(rr, cc)| rr < h && cc < w)
}
