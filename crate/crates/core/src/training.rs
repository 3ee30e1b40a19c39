//! Minibatch Adam loop shared by the flow-matching, surrogate and diffusion trainers.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, render_csv, write_once, Provenance};
use crate::net::{AdamConfig, AdamState, NetConfig, NetParams};
use crate::rng::{derive_seed, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub net: NetConfig,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            seed: 0,
            net: NetConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch_size", "must be at least 1"));
        }
        self.net.validate()?;
        self.adam.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: NetParams,
    pub optimizer: AdamState,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
}

impl Trained {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn loss_curve_csv(&self, provenance: &Provenance) -> Result<Vec<u8>> {
        render_csv(
            provenance,
            &["step", "loss"],
            self.losses
                .iter()
                .enumerate()
                .map(|(i, l)| [(i + 1).to_string(), fmt_f64(*l)]),
        )
    }

    pub fn write_loss_curve(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        write_once(path, &self.loss_curve_csv(provenance)?)
    }
}

/// Trailing moving average; entry `i` averages `losses[i+1-window ..= i]`.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(losses.len() + 1 - window);
    let mut acc: f64 = losses[..window].iter().sum();
    out.push(acc / window as f64);
    for i in window..losses.len() {
        acc += losses[i] - losses[i - window];
        out.push(acc / window as f64);
    }
    out
}

/// Runs `cfg.steps` Adam steps. Each step draws `batch_size` dataset indices
/// (shuffled epochs) and asks `make_batch` for the `(inputs, targets)` pair.
pub fn train_loop<F>(cfg: &TrainConfig, n_data: usize, mut make_batch: F) -> Result<Trained>
where
    F: FnMut(&[usize], &mut RngState) -> (Array2<f64>, Array2<f64>),
{
    cfg.validate()?;
    if n_data == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut init_rng = RngState::new(derive_seed(cfg.seed, "init", 0));
    let mut batch_rng = RngState::new(derive_seed(cfg.seed, "batches", 0));
    let mut params = NetParams::init(cfg.net, &mut init_rng)?;
    let mut optimizer = AdamState::new(cfg.adam, &params);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = (0..n_data).collect();
    let mut cursor = n_data;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == n_data {
                batch_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (inputs, targets) = make_batch(&batch, &mut batch_rng);
        let (loss, grads) = params.loss_and_grad(inputs.view(), targets.view())?;
        if !loss.is_finite() {
            log::warn!("non-finite loss at step {step}");
            return Err(Error::NonFinite("training loss"));
        }
        optimizer.step(&mut params, &grads)?;
        losses.push(loss);
        if (step + 1) % 1000 == 0 {
            log::debug!("step {} loss {:.5}", step + 1, loss);
        }
    }
    Ok(Trained {
        params,
        optimizer,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let t = train_loop(&cfg, 3, |_, _| unreachable!()).unwrap();
        let mut rng = RngState::new(derive_seed(cfg.seed, "init", 0));
        assert_eq!(t.params, NetParams::init(cfg.net, &mut rng).unwrap());
        assert!(t.losses.is_empty());
    }

    #[test]
    fn empty_data_is_an_error() {
        let err = train_loop(&TrainConfig::default(), 0, |_, _| unreachable!()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
    }
}
