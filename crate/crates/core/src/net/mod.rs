//! Fully-connected tanh network over `(f, g, time features)` with exact
//! hand-derived gradients.
//!
//! Batched evaluation takes one row per sample; the row layout is
//! `[f..., g..., sin(ω₁t), cos(ω₁t), ..., sin(ω_Kt), cos(ω_Kt)]`.

mod adam;
mod checkpoint;

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_norm, RealVector};
use crate::rng::RngState;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMetadata, CHECKPOINT_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Width of the state part of the input (`dim f + dim g`, or the condition width for regressors).
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub time_feature_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            output_dim: 1,
            hidden_width: 128,
            hidden_layers: 3,
            time_feature_dim: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden_width", self.hidden_width),
            ("hidden_layers", self.hidden_layers),
            ("time_feature_dim", self.time_feature_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid_config(*name, "must be positive"));
        }
        if self.time_feature_dim % 2 != 0 {
            return Err(Error::invalid_config("time_feature_dim", "must be even"));
        }
        Ok(())
    }

    /// Width of a full network input row, time features included.
    pub fn feature_width(&self) -> usize {
        self.input_dim + self.time_feature_dim
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.feature_width();
        for _ in 0..self.hidden_layers {
            shapes.push((self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        shapes.push((self.output_dim, fan_in));
        shapes
    }
}

/// `[sin(ω₁t), cos(ω₁t), …]` with `ω_k = 2^(k−1) π`.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    write_time_features(t, &mut out);
    out
}

fn write_time_features(t: f64, out: &mut [f64]) {
    let mut omega = PI;
    for pair in out.chunks_exact_mut(2) {
        let (s, c) = (omega * t).sin_cos();
        pair[0] = s;
        pair[1] = c;
        omega *= 2.0;
    }
}

/// Assembles network input rows from state blocks and per-row times.
pub fn build_inputs(blocks: &[ArrayView2<f64>], times: &[f64], time_feature_dim: usize) -> Array2<f64> {
    let n = times.len();
    let state_width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut x = Array2::zeros((n, state_width + time_feature_dim));
    let mut col = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), n);
        x.slice_mut(s![.., col..col + b.ncols()]).assign(b);
        col += b.ncols();
    }
    for (mut row, &t) in x.rows_mut().into_iter().zip(times) {
        write_time_features(
            t,
            row.as_slice_mut().expect("standard layout").split_at_mut(state_width).1,
        );
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl NetParams {
    /// Xavier-uniform weights, zero biases, output layer scaled by 0.1.
    pub fn init(config: NetConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (out, inp))| {
                let bound = (6.0 / (inp + out) as f64).sqrt();
                let scale = if i == last { 0.1 } else { 1.0 };
                let weight = Array2::from_shape_fn((out, inp), |_| scale * rng.uniform_range(-bound, bound));
                Layer {
                    weight,
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| Layer {
                weight: Array2::zeros((out, inp)),
                bias: Array1::zeros(out),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: NetConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "config implies {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((out, inp), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.weight.dim() != (*out, *inp) || l.bias.len() != *out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: expected {out}x{inp} weight and {out} biases"
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self {
            config,
            layers: layers
                .into_iter()
                .map(|l| Layer {
                    weight: l.weight.as_standard_layout().into_owned(),
                    bias: l.bias,
                })
                .collect(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("validated config")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter array as a flat slice, layer by layer (weight then bias).
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.config.feature_width() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input columns, got {}",
                self.config.feature_width(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Evaluates the network on full input rows (time features included).
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        let last = self.layers.len() - 1;
        let mut a = affine(&inputs, &self.layers[0]);
        if last == 0 {
            return Ok(a);
        }
        a.mapv_inplace(f64::tanh);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            a = affine(&a.view(), layer);
            if i != last {
                a.mapv_inplace(f64::tanh);
            }
        }
        Ok(a)
    }

    /// Single-sample evaluation on `concat(f, g, time_features(t))`.
    pub fn forward(&self, f: &[f64], g: &[f64], t: f64) -> Result<RealVector> {
        let mut row = Vec::with_capacity(self.config.feature_width());
        row.extend_from_slice(f);
        row.extend_from_slice(g);
        row.extend(time_features(t, self.config.time_feature_dim));
        let x = Array2::from_shape_vec((1, row.len()), row).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let out = self.forward_batch(x.view())?;
        RealVector::new(out.into_raw_vec_and_offset().0)
    }

    /// Mean over the batch of `‖target − forward(input)‖²` and its exact gradient.
    pub fn loss_and_grad(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, NetParams)> {
        self.check_inputs(&inputs)?;
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if targets.dim() != (n, self.config.output_dim) {
            return Err(Error::ShapeMismatch(format!(
                "targets are {:?}, expected ({n}, {})",
                targets.dim(),
                self.config.output_dim
            )));
        }
        let last = self.layers.len() - 1;
        // activations[i] is the input to layer i
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        activations.push(inputs.to_owned());
        for layer in &self.layers[..last] {
            let mut a = affine(&activations.last().expect("non-empty").view(), layer);
            a.mapv_inplace(f64::tanh);
            activations.push(a);
        }
        let out = affine(&activations[last].view(), &self.layers[last]);
        let residual = &targets - &out;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;

        let mut grads = self.zeros_like();
        let mut delta = residual * (-2.0 / n as f64);
        for i in (0..=last).rev() {
            let a_in = &activations[i];
            grads.layers[i].weight = delta.t().dot(a_in);
            grads.layers[i].bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weight);
                ndarray::Zip::from(&mut back)
                    .and(a_in)
                    .for_each(|d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        Ok((loss, grads))
    }

    /// Product of layer spectral norms, using only the state columns of the first
    /// layer: an upper bound on the Lipschitz constant in `(f, g)` at fixed `t`.
    pub fn lipschitz_bound(&self) -> f64 {
        let first = &self.layers[0].weight;
        let state = first.slice(s![.., ..self.config.input_dim]).to_owned();
        let mut bound = spectral_norm(state.nrows(), state.ncols(), state.as_slice().expect("owned"), 500);
        for l in &self.layers[1..] {
            bound *= spectral_norm(
                l.weight.nrows(),
                l.weight.ncols(),
                l.weight.as_slice().expect("standard layout"),
                500,
            );
        }
        bound
    }
}

fn affine(x: &ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    z
}
