use roadforge_autodiff::{grad_check, GradCheckConfig, GradCheckReport, Tape};

use crate::batch::Sample;
use crate::config::ModelConfig;
use crate::encoder::Mode;
use crate::model::Model;
use crate::{ModelError, Result};

/// Finite-difference settings for whole-model checks. The loss passes
/// through hundreds of thousands of operations, so central differences carry
/// about 1e-10 of rounding noise; a 1e-5 step and a 1e-5 denominator floor
/// keep that noise two orders below the tolerance, including on coordinates
/// whose true derivative is zero (a convolution bias ahead of batch norm).
pub fn model_grad_check_config(max_coords_per_param: Option<usize>, seed: u64) -> GradCheckConfig {
    GradCheckConfig { step: 1e-5, tol: 1e-4, floor: 1e-5, max_coords_per_param, seed }
}

/// Checks the training loss (`lambda` = 0.5, batch statistics) of a freshly
/// initialized model on `samples`.
pub fn check_model(config: ModelConfig, samples: &[Sample], gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let (model, mut store) = Model::build(config)?;
    let batch: Vec<&Sample> = samples.iter().collect();
    // surfaces data errors; afterwards only the parameter values change
    model.loss(&store, &mut Tape::new(), &batch, 0.5, Mode::Train)?;
    let report = grad_check(
        &mut store,
        |s, t| {
            model.loss(s, t, &batch, 0.5, Mode::Train).map_err(|e| match e {
                ModelError::Autodiff(e) => e,
                other => unreachable!("validated by the probe pass: {other}"),
            })
        },
        gc,
    )?;
    Ok(report)
}
