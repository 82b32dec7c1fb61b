//! Sequence models that turn a 64x64 road segmentation into a road graph.
//!
//! [`Ggt`] is a transformer decoder conditioned on a CNN image code, emitting
//! one node per step (adjacency to recent nodes plus coordinates).
//! [`MlpBaseline`] emits a whole adjacency matrix at once; [`RnnBaseline`]
//! swaps the transformer for a GRU. [`Model`] wraps the three behind one
//! interface used by [`train`] and [`evaluate`].

mod baselines;
mod batch;
mod config;
mod encoder;
mod eval;
mod ggt;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod svg;
mod train;

pub use baselines::{MlpBaseline, MlpOutput, RnnBaseline};
pub use batch::{Sample, SeqBatch};
pub use config::{GgtConfig, ModelConfig, ModelKind, CA_HIDDEN, ENCODER_OUT, IMAGE_SIDE};
pub use encoder::{Encoder, Mode};
pub use eval::{
    aggregate_runs, evaluate, evaluate_predictions, evaluate_with, histogram_csv, score_all, score_prediction, EvalConfig, EvalSummary,
    SampleEval, HISTOGRAM_BIN,
};
pub use gradcheck::{check_model, model_grad_check_config};
pub use ggt::{positional_encoding, DecoderOutput, Ggt, StepInput};
pub use layers::Heads;
pub use loss::{bce, sequence_loss, LossParts};
pub use model::{Model, DEFAULT_MAX_STEPS};
pub use svg::{comparison_svg, graph_svg, render_comparison_svg};
pub use train::{train, EpochReport, TrainConfig, TrainReport, Trainer};

use roadforge_autodiff::AdError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("image must be {expected}x{expected}, got {width}x{height}")]
    ImageSize { expected: usize, width: usize, height: usize },
    #[error("sequence lengths differ: predicted {predicted}, target {target}")]
    LengthMismatch { predicted: usize, target: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("graph does not fit the model: {0}")]
    Graph(String),
    #[error(transparent)]
    Metric(#[from] roadforge_core::streetmover::MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
