use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Field;
use crate::mixture::DecoupledDataset;
use crate::net::{build_inputs, NetParams};
use crate::rng::RngState;
use crate::sample_set::SampleSet;
use crate::training::{train_loop, TrainConfig, Trained};

/// Variance schedule `β_1..β_T` with `ᾱ_t = Π_{s≤t} (1 − β_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRecord", into = "ScheduleRecord")]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRecord {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRecord> for DiffusionSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRecord) -> Result<Self> {
        Self::from_betas(r.betas)
    }
}

impl From<DiffusionSchedule> for ScheduleRecord {
    fn from(s: DiffusionSchedule) -> Self {
        Self { betas: s.betas }
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(100, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid_config("schedule.betas", "needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid_config("schedule.betas", "every beta must lie in (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| !(w[1] < w[0])) || !(alpha_bars[betas.len() - 1] > 0.0) {
            return Err(Error::invalid_config(
                "schedule.betas",
                "cumulative alphas must decrease strictly and stay positive",
            ));
        }
        Ok(Self { betas, alpha_bars })
    }

    /// `β_t` evenly spaced from `beta_1` to `beta_T`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid_config("schedule.steps", "must be at least 1"));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_1
                } else {
                    beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Network time input for step `t`.
    pub fn time(&self, t: usize) -> f64 {
        t as f64 / self.steps() as f64
    }

    /// Posterior `q(x_{t−1} | x_t, x₀)`: coefficients on `x₀` and `x_t`, and the variance `β̃_t`.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let (ab, ab_prev, beta) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        (c0, ct, var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M2pdeConfig {
    #[serde(default)]
    pub schedule: DiffusionSchedule,
    pub outer_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for M2pdeConfig {
    fn default() -> Self {
        Self {
            schedule: DiffusionSchedule::default(),
            outer_iters: 2,
            seed: 0,
        }
    }
}

impl M2pdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::invalid_config("m2pde.outer_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Predicts the noise in one field at diffusion step `t` from the joint state.
pub trait NoisePredictor {
    fn out_dim(&self) -> usize;

    fn predict_noise(
        &self,
        f: ArrayView2<f64>,
        g: ArrayView2<f64>,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<Array2<f64>>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }

    fn predict_noise(
        &self,
        f: ArrayView2<f64>,
        g: ArrayView2<f64>,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<Array2<f64>> {
        (**self).predict_noise(f, g, t, schedule)
    }
}

/// Input rows are `(f, g, time_features(t / T))`.
impl NoisePredictor for NetParams {
    fn out_dim(&self) -> usize {
        self.config().output_dim
    }

    fn predict_noise(
        &self,
        f: ArrayView2<f64>,
        g: ArrayView2<f64>,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<Array2<f64>> {
        let times = vec![schedule.time(t); f.nrows()];
        self.forward_batch(build_inputs(&[f, g], &times, self.config().time_feature_dim).view())
    }
}

impl<F> NoisePredictor for (usize, F)
where
    F: Fn(ArrayView2<f64>, ArrayView2<f64>, usize) -> Array2<f64>,
{
    fn out_dim(&self) -> usize {
        self.0
    }

    fn predict_noise(
        &self,
        f: ArrayView2<f64>,
        g: ArrayView2<f64>,
        t: usize,
        _schedule: &DiffusionSchedule,
    ) -> Result<Array2<f64>> {
        Ok((self.1)(f, g, t))
    }
}

/// `x̂₀ = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn estimate_clean(eps_hat: &[f64], x_t: &[f64], t: usize, schedule: &DiffusionSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter().zip(eps_hat).map(|(x, e)| (x - n * e) / s).collect()
}

fn estimate_clean_batch(
    eps_hat: &Array2<f64>,
    x_t: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Array2<f64> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x_t.clone();
    out.zip_mut_with(eps_hat, |x, e| *x = (*x - n * e) / s);
    out
}

/// Trains an ε-predictor for the field the dataset supervises. Per example:
/// `t` uniform in `1..=T`, then `ε ~ N(0, 1)`; the network sees the noised
/// response in its own slot and the clean condition in the other.
pub fn ddpm_train(dataset: &DecoupledDataset, schedule: &DiffusionSchedule, cfg: &TrainConfig) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.net.input_dim != 2 || cfg.net.output_dim != 1 {
        return Err(Error::invalid_config(
            "net",
            "noise predictors on the synthetic data need input_dim 2 and output_dim 1",
        ));
    }
    let field = Field::trained_by(dataset.direction());
    let tf = cfg.net.time_feature_dim;
    let steps = schedule.steps();
    train_loop(cfg, dataset.len(), |batch, rng| {
        let n = batch.len();
        let mut state = Array2::zeros((n, 2));
        let mut times = Vec::with_capacity(n);
        let mut targets = Array2::zeros((n, 1));
        for (row, &i) in batch.iter().enumerate() {
            let s = &dataset.samples()[i];
            let t = 1 + rng.index(steps);
            let eps = rng.standard_normal();
            let ab = schedule.alpha_bar(t);
            let noised = ab.sqrt() * s.response_value + (1.0 - ab).sqrt() * eps;
            let (own, other) = match field {
                Field::F => (0, 1),
                Field::G => (1, 0),
            };
            state[[row, own]] = noised;
            state[[row, other]] = s.condition_value;
            times.push(schedule.time(t));
            targets[[row, 0]] = eps;
        }
        (build_inputs(&[state.view()], &times, tf), targets)
    })
}

/// Composed reverse diffusion. Each outer iteration draws a fresh `z_T`
/// (per sample `f` then `g`); at each step both fields' clean estimates are
/// computed from the current noisy joint state, so each model is conditioned
/// on the other field's noisy value, and the ancestral DDPM step uses the
/// posterior variance `β̃_t` (no noise at `t = 1`). The last iteration is returned.
pub fn m2pde_compose<PF: NoisePredictor, PG: NoisePredictor>(
    model_f: &PF,
    model_g: &PG,
    cfg: &M2pdeConfig,
    n_samples: usize,
    rng: &mut RngState,
) -> Result<SampleSet> {
    cfg.validate()?;
    let seed = rng.seed();
    let sch = &cfg.schedule;
    let (df, dg) = (model_f.out_dim(), model_g.out_dim());
    let draw = |rng: &mut RngState, d: usize| Array2::from_shape_fn((n_samples, d), |_| rng.standard_normal());
    let mut result = None;
    for _ in 0..cfg.outer_iters {
        let joint = draw(rng, df + dg);
        let mut f = joint.slice(ndarray::s![.., ..df]).to_owned();
        let mut g = joint.slice(ndarray::s![.., df..]).to_owned();
        for t in (1..=sch.steps()).rev() {
            let ef = model_f.predict_noise(f.view(), g.view(), t, sch)?;
            let eg = model_g.predict_noise(f.view(), g.view(), t, sch)?;
            if ef.dim() != f.dim() || eg.dim() != g.dim() {
                return Err(Error::ShapeMismatch(
                    "noise predictor output does not match its field".into(),
                ));
            }
            let x0f = estimate_clean_batch(&ef, &f, t, sch);
            let x0g = estimate_clean_batch(&eg, &g, t, sch);
            let (c0, ct, var) = sch.posterior(t);
            let sd = var.sqrt();
            let noise = if t > 1 { Some(draw(rng, df + dg)) } else { None };
            for r in 0..n_samples {
                for j in 0..df {
                    let z = noise.as_ref().map_or(0.0, |nz| nz[[r, j]]);
                    f[[r, j]] = c0 * x0f[[r, j]] + ct * f[[r, j]] + sd * z;
                }
                for j in 0..dg {
                    let z = noise.as_ref().map_or(0.0, |nz| nz[[r, df + j]]);
                    g[[r, j]] = c0 * x0g[[r, j]] + ct * g[[r, j]] + sd * z;
                }
            }
        }
        result = Some((f, g));
    }
    let (f, g) = result.expect("at least one outer iteration");
    let set = SampleSet::from_fields(f.view(), g.view(), "m2pde", seed)?;
    let bad = set.count_non_finite();
    if bad > 0 {
        return Err(Error::NonFiniteState {
            count: bad,
            total: set.len(),
        });
    }
    Ok(set)
}
