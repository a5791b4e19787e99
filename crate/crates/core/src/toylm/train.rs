use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::model::{ParamStore, ToyLm};
use super::tape::Mat;
use crate::error::{Error, Result};
use crate::seed;

/// Mini-batch SGD with heavy-ball momentum and global-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// 0 gives plain SGD.
    pub momentum: f64,
    /// Gradients with a larger global L2 norm are rescaled; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            learning_rate: 0.1,
            batch_size: 8,
            momentum: 0.9,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Something with parameters and a differentiable batch objective.
pub trait Trainable {
    type Item: Sync;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Mean loss of `batch` and its gradient per parameter tensor.
    /// `step_seed` drives any stochastic part of the objective.
    fn batch_loss_and_grad(&self, batch: &[&Self::Item], step_seed: u64)
        -> Result<(f64, Vec<Mat>)>;
}

impl Trainable for ToyLm {
    type Item = Vec<u32>;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_loss_and_grad(&self, batch: &[&Vec<u32>], step_seed: u64) -> Result<(f64, Vec<Mat>)> {
        let owned: Vec<Vec<u32>> = batch.iter().map(|b| (*b).clone()).collect();
        self.loss_and_grad(&owned, step_seed)
    }
}

/// Runs `cfg.steps` updates over random mini-batches of `items` and returns
/// the loss of each step's batch measured before its update.
pub fn fit<M: Trainable>(model: &mut M, items: &[M::Item], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Err(Error::Config("training needs at least one step".into()));
    }
    if items.is_empty() {
        return Err(Error::Data("no training items".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let batch_size = cfg.batch_size.min(items.len());
    let mut velocity: Vec<Mat> = model
        .params()
        .iter()
        .map(|(_, m)| Mat::zeros(m.rows, m.cols))
        .collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&M::Item> = if batch_size == items.len() {
            items.iter().collect()
        } else {
            let mut rng = seed::indexed_rng(cfg.seed, "batch", step as u64);
            let mut picked = index::sample(&mut rng, items.len(), batch_size).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| &items[i]).collect()
        };
        let step_seed = seed::substream(cfg.seed, "objective") ^ step as u64;
        let (loss, mut grads) = model.batch_loss_and_grad(&batch, step_seed)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
        }
        trace.push(loss);
        if cfg.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|g| g.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient norm became {norm} at step {step}"
                )));
            }
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grads
                    .iter_mut()
                    .for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
            }
        }
        let params = model.params_mut();
        for (id, (vel, grad)) in velocity.iter_mut().zip(&grads).enumerate() {
            let p = params.get_mut(id);
            for ((w, v), g) in p.data.iter_mut().zip(vel.data.iter_mut()).zip(&grad.data) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.learning_rate * *v;
            }
        }
    }
    Ok(trace)
}

/// Trains a toy LM on framed token sequences.
pub fn train(model: &mut ToyLm, sequences: &[Vec<u32>], cfg: &TrainConfig) -> Result<Vec<f64>> {
    fit(model, sequences, cfg)
}
