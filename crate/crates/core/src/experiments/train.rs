//! Shared minibatch training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{adam_step, backward_batch, clip_global_norm, AdamState, Example};
use crate::linalg::Rng;
use crate::model::Model;

/// Gradients are clipped to this global norm before every update.
pub const CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Runs `cfg.steps` Adam steps on batches drawn by `sample`, returning the
/// training loss of every step (measured before its update).
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut sample: impl FnMut(&mut Rng, usize) -> Vec<Example>,
) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut state = AdamState::new(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample(rng, cfg.batch_size);
        let (loss, mut grads) = backward_batch(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became {loss} at step {step}")));
        }
        clip_global_norm(&mut grads, CLIP_NORM);
        adam_step(model, &grads, &mut state)?;
        losses.push(loss);
    }
    Ok(losses)
}
