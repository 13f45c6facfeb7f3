//! The training loop: online-sampled instances, batched forward/backward,
//! Adam with cosine annealing, per-epoch energy metrics.

use super::adam::AdamState;
use super::schedule::cosine_lr;
use crate::autodiff::Tape;
use crate::net::{forward_batch, param_leaves, ForwardOptions, ModelConfig, ModelParams, NetError};
use crate::sim::{energy_node_batch, mix_seed, sample_instance, SampleError, SEED_DOMAIN_TRAIN};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub examples_per_epoch: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub n_nodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            examples_per_epoch: 5000,
            batch_size: 32,
            lr_start: 1e-3,
            lr_end: 1e-4,
            seed: 0,
            n_nodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.examples_per_epoch == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs, examples, and batch size must be positive".into(),
            ));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(TrainError::Config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.n_nodes < 2 {
            return Err(TrainError::Config("need at least 2 nodes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_energy: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch} on instance seed {instance_seed}")]
    NonFinite { epoch: usize, instance_seed: u64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Trains a freshly initialized model, sampling new instances every epoch.
/// Deterministic given the seeds; `on_epoch` observes per-epoch metrics.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(ModelParams, Vec<EpochMetrics>), TrainError> {
    config.validate()?;
    let mut params = ModelParams::init(model_config, config.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let options = ForwardOptions::default();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut example_counter: u64 = 0;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr_start, config.lr_end);
        let mut energy_sum = 0.0;
        let mut done = 0;
        while done < config.examples_per_epoch {
            let b = config.batch_size.min(config.examples_per_epoch - done);
            let mut seeds = Vec::with_capacity(b);
            let mut instances = Vec::with_capacity(b);
            for _ in 0..b {
                let s = mix_seed(config.seed, SEED_DOMAIN_TRAIN, example_counter);
                example_counter += 1;
                seeds.push(s);
                instances.push(sample_instance(config.n_nodes, s)?);
            }

            let mut tape = Tape::new();
            let pv = param_leaves(&mut tape, &params);
            let out = forward_batch(&mut tape, &params, &pv, &instances, &options)?;
            let energies = energy_node_batch(&mut tape, *out.positions.last().unwrap(), &instances);
            for (i, &e) in tape.val(energies).data().iter().enumerate() {
                if !e.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        instance_seed: seeds[i],
                    });
                }
                energy_sum += e;
            }
            let total = tape.sum_all(energies);
            let loss = tape.affine(total, 1.0 / b as f64, 0.0);
            let grads = tape.backward(loss);
            let grad_tensors: Vec<_> = pv.iter().map(|&v| grads.get_or_zeros(v, &tape)).collect();
            adam.update(params.tensors_mut(), &grad_tensors, lr);
            done += b;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            mean_train_energy: energy_sum / config.examples_per_epoch as f64,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok((params, metrics))
}
