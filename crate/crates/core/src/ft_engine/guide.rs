use crate::diffcore::{train, ParamVector, Schedule};
use crate::error::{Error, Result};
use crate::representation::{EncodedBatch, PolicyNet, PolicyObjective};
use crate::toyworld::Sample;

pub const DEFAULT_TRAINING_FRACTION: f64 = 0.15;

/// A lightly trained policy whose gradients and curvature define influence.
#[derive(Clone, Debug)]
pub struct GuideModel {
    pub net: PolicyNet,
    pub params: ParamVector,
    pub training_fraction: f64,
    pub steps: usize,
}

impl GuideModel {
    pub fn encoder_params(&self) -> ParamVector {
        self.net
            .encoder_params(&self.params)
            .expect("guide parameters match their own network")
    }
}

/// Steps run for a fraction of a full schedule: ⌈fraction · steps⌉.
pub fn guide_steps(full_steps: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!("training fraction {fraction} outside (0, 1]")));
    }
    Ok((fraction * full_steps as f64 - 1e-9).ceil().max(0.0) as usize)
}

/// Trains encoders and policy head jointly for a fraction of `full`.
pub fn train_guide(dataset: &[Sample], net: &PolicyNet, init: &ParamVector, full: &Schedule, fraction: f64) -> Result<GuideModel> {
    if dataset.is_empty() {
        return Err(Error::contract("guide training needs a nonempty dataset"));
    }
    let steps = guide_steps(full.steps, fraction)?;
    let batch = EncodedBatch::from_samples(dataset)?;
    let objective = PolicyObjective::new(net, &batch)?;
    let params = train(&objective, init, &Schedule { steps, ..*full })?;
    Ok(GuideModel {
        net: net.clone(),
        params,
        training_fraction: fraction,
        steps,
    })
}
