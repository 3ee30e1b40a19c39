//! Comparison paradigms built from the same decoupled data: Picard iteration
//! over one-step surrogate regressors, and composed conditional diffusion models.

mod diffusion;
mod surrogate;

pub use diffusion::{ddpm_train, estimate_clean, m2pde_compose, DiffusionSchedule, M2pdeConfig, NoisePredictor};
pub use surrogate::{
    picard_batch, picard_combine, surrogate_sample, train_surrogate, PicardConfig, PicardOutcome, Surrogate,
    SurrogatePair,
};
