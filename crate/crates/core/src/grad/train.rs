//! The forward-backward training loop.

use super::adam::{adam_step, AdamHyper, AdamState};
use super::gradient::{gradient, Experiment, GradMemory};
use super::loss::LossSpec;
use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// Which noise tapes each epoch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Epoch e draws fresh tapes from seed + e.
    Fresh,
    /// Every epoch reuses the tapes of the base seed.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate of parameters without an override.
    pub lr: f64,
    pub seed: u64,
    pub seed_policy: SeedPolicy,
    pub memory: GradMemory,
    pub hyper: AdamHyper,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            lr,
            seed,
            seed_policy: SeedPolicy::Fresh,
            memory: GradMemory::StoreAll,
            hyper: AdamHyper::default(),
        }
    }

    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Fresh => self.seed.wrapping_add(epoch as u64),
            SeedPolicy::Frozen => self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Loss evaluated at the start of each epoch, before its update.
    pub history: Vec<f64>,
    pub adam: AdamState,
    /// Index of the next epoch to run when resuming.
    pub next_epoch: usize,
}

/// Runs epochs `start_epoch..cfg.epochs`, updating the flexible parameters
/// of `model` in place. `state` resumes a previous optimizer state.
pub fn train(
    model: &mut ModelSpec,
    experiments: &[Experiment],
    spec: &LossSpec,
    cfg: &TrainConfig,
    start_epoch: usize,
    state: Option<AdamState>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainResult> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("training needs at least one epoch".into()));
    }
    let ids = model.params.flexible_ids();
    let lrs: Vec<f64> = ids.iter().map(|&id| model.params.get(id).lr.unwrap_or(cfg.lr)).collect();
    let mut adam = state.unwrap_or_else(|| AdamState::new(ids.len()));
    if adam.m.len() != ids.len() {
        return Err(Error::Dimension(format!("optimizer state for {} parameters, model has {}", adam.m.len(), ids.len())));
    }
    let mut history = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let res = gradient(model, experiments, spec, cfg.epoch_seed(epoch), cfg.memory)?;
        if !res.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        history.push(res.loss);
        on_epoch(&EpochReport { epoch, loss: res.loss });
        let mut theta: Vec<f64> = ids.iter().map(|&id| model.params.get(id).internal).collect();
        let grads: Vec<f64> = ids.iter().map(|&id| res.internal[id.0]).collect();
        adam_step(&mut theta, &grads, &lrs, &mut adam, &cfg.hyper)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
        for (&id, &t) in ids.iter().zip(&theta) {
            model.params.get_mut(id).internal = t;
        }
    }
    Ok(TrainResult { history, adam, next_epoch: cfg.epochs })
}
