//! Decoupled conditional flow matching for coupled two-field systems.
//!
//! Two velocity models are trained independently, each from data where one
//! field is conditioned on the other, and composed at sampling time by
//! operator splitting. The crate also carries the two classical baselines
//! (Picard iteration over surrogate models and composed diffusion models),
//! two-sample metrics, an analytic Gaussian oracle for convergence studies,
//! and the experiment harness behind the `splitflow` binary.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod mixture;
pub mod net;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod sample_set;
pub mod training;

pub use error::{Error, Result};
pub use flow::{Field, SamplerConfig, Scheme, VelocityField};
pub use metrics::{energy_distance, mmd_rbf, w1_exact, Bandwidth, MetricReport};
pub use mixture::{DecoupledDataset, Direction, GaussianMixture};
pub use net::{NetConfig, NetParams};
pub use rng::RngState;
pub use sample_set::SampleSet;
pub use training::{TrainConfig, Trained};
