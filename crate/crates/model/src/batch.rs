use roadforge_autodiff::Tensor;
use roadforge_core::dataset::LoadedRecord;
use roadforge_core::geom::{canonicalize, to_sequence, CanonicalSequence, RoadGraph};
use roadforge_core::raster::{rasterize, GrayImage, DEFAULT_HALF_WIDTH, DEFAULT_SIZE};

use crate::{ModelError, Result};

/// One training or evaluation example: canonical graph, its image and its
/// sequence encoding for a fixed frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: RoadGraph<f64>,
    pub image: GrayImage,
    pub sequence: CanonicalSequence<f64>,
}

impl Sample {
    pub fn new(graph: &RoadGraph<f64>, image: GrayImage, frontier: usize) -> Result<Self> {
        let graph = canonicalize(graph);
        let sequence = to_sequence(&graph, frontier).map_err(|e| ModelError::Graph(e.to_string()))?;
        Ok(Self { graph, image, sequence })
    }

    /// Renders the image from the graph at the default size and line width.
    pub fn from_graph(graph: &RoadGraph<f64>, frontier: usize) -> Result<Self> {
        let image = rasterize(graph, DEFAULT_SIZE, DEFAULT_HALF_WIDTH);
        Self::new(graph, image, frontier)
    }

    pub fn from_record(record: &LoadedRecord, frontier: usize) -> Result<Self> {
        Self::new(&record.graph, record.image.clone(), frontier)
    }

    pub fn frontier(&self) -> usize {
        self.sequence.frontier_size
    }
}

/// Teacher-forced batch: sequences padded to a common length `seq`, rows
/// ordered `b * seq + t`.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    pub batch: usize,
    pub seq: usize,
    pub frontier: usize,
    /// `[B*T, M+3]`: the previous step's adjacency bits, stop flag and coords
    /// (zeros at `t = 0`).
    pub prev: Tensor,
    /// `[B*T, M+1]` adjacency targets, stop flag last.
    pub adj_target: Tensor,
    /// `[B*T, 2]`.
    pub coord_target: Tensor,
    /// Per-row loss weight `1 / (B * len_b)` on valid steps, 0 on padding.
    pub weights: Vec<f64>,
    /// Indices of the non-padding rows.
    pub valid_rows: Vec<usize>,
    pub lens: Vec<usize>,
}

/// Writes one step as `[adjacency.., stop, x, y]`.
fn step_row(seq: &CanonicalSequence<f64>, t: usize, out: &mut [f64]) {
    let s = &seq.steps[t];
    let m = seq.frontier_size;
    for (o, &b) in out.iter_mut().zip(&s.adjacency) {
        *o = f64::from(u8::from(b));
    }
    out[m] = f64::from(u8::from(s.stop));
    out[m + 1] = s.coords.x;
    out[m + 2] = s.coords.y;
}

impl SeqBatch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| ModelError::Config("empty batch".into()))?;
        let m = first.frontier();
        if let Some(s) = samples.iter().find(|s| s.frontier() != m) {
            return Err(ModelError::Config(format!("mixed frontier sizes {m} and {}", s.frontier())));
        }
        let batch = samples.len();
        let lens: Vec<usize> = samples.iter().map(|s| s.sequence.len()).collect();
        let seq = lens.iter().copied().max().unwrap_or(0);
        let width = m + 3;
        let mut prev = vec![0.0; batch * seq * width];
        let mut adj = vec![0.0; batch * seq * (m + 1)];
        let mut coords = vec![0.0; batch * seq * 2];
        let mut weights = vec![0.0; batch * seq];
        let mut valid_rows = Vec::new();
        let mut row = vec![0.0; width];
        for (b, s) in samples.iter().enumerate() {
            let len = lens[b];
            for t in 0..seq {
                let r = b * seq + t;
                if t > 0 && t - 1 < len {
                    step_row(&s.sequence, t - 1, &mut prev[r * width..(r + 1) * width]);
                }
                if t < len {
                    step_row(&s.sequence, t, &mut row);
                    adj[r * (m + 1)..(r + 1) * (m + 1)].copy_from_slice(&row[..=m]);
                    coords[r * 2..r * 2 + 2].copy_from_slice(&row[m + 1..]);
                    weights[r] = 1.0 / (batch * len) as f64;
                    valid_rows.push(r);
                }
            }
        }
        Ok(Self {
            batch,
            seq,
            frontier: m,
            prev: Tensor::new(vec![batch * seq, width], prev)?,
            adj_target: Tensor::new(vec![batch * seq, m + 1], adj)?,
            coord_target: Tensor::new(vec![batch * seq, 2], coords)?,
            weights,
            valid_rows,
            lens,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }
}
