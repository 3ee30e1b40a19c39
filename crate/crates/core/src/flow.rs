//! Decoupled conditional flow matching and coupled sampling by operator splitting.
//!
//! Each velocity model sees the joint state `(f_t, g_t, t)` but is trained on
//! data where only its own field is the regression target; the other field
//! rides along on its own noise-to-data interpolant. At inference the two
//! partial flows are composed step by step.

use ndarray::{s, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{DecoupledDataset, Direction};
use crate::net::{build_inputs, NetParams};
use crate::rng::RngState;
use crate::sample_set::SampleSet;
use crate::training::{train_loop, TrainConfig, Trained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    F,
    G,
}

impl Field {
    /// The field a dataset supervises: `x | y` data trains `f = x`, `y | x` trains `g = y`.
    pub fn trained_by(direction: Direction) -> Self {
        match direction {
            Direction::XGivenY => Field::F,
            Direction::YGivenX => Field::G,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Field::F => "f",
            Field::G => "g",
        }
    }
}

/// A time-dependent velocity for one field, evaluated on a batch of joint states.
pub trait VelocityField {
    /// Dimension of the field this velocity drives.
    fn out_dim(&self) -> usize;

    /// One output row per input row.
    fn velocity(&self, f: ArrayView2<f64>, g: ArrayView2<f64>, t: f64) -> Result<Array2<f64>>;
}

impl<V: VelocityField + ?Sized> VelocityField for &V {
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }

    fn velocity(&self, f: ArrayView2<f64>, g: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        (**self).velocity(f, g, t)
    }
}

impl VelocityField for NetParams {
    fn out_dim(&self) -> usize {
        self.config().output_dim
    }

    fn velocity(&self, f: ArrayView2<f64>, g: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let times = vec![t; f.nrows()];
        let x = build_inputs(&[f, g], &times, self.config().time_feature_dim);
        self.forward_batch(x.view())
    }
}

/// The same velocity vector at every state and time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField(pub Vec<f64>);

impl VelocityField for ConstantField {
    fn out_dim(&self) -> usize {
        self.0.len()
    }

    fn velocity(&self, f: ArrayView2<f64>, _g: ArrayView2<f64>, _t: f64) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((f.nrows(), self.0.len()), |(_, j)| self.0[j]))
    }
}

/// One supervised example for a conditional velocity model.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSample {
    pub f_t: Vec<f64>,
    pub g_t: Vec<f64>,
    pub t: f64,
    pub target: Vec<f64>,
    pub target_field: Field,
}

fn lerp(z: &[f64], end: &[f64], t: f64) -> Vec<f64> {
    z.iter().zip(end).map(|(z, e)| (1.0 - t) * z + t * e).collect()
}

/// Linear interpolants `(1−t) z + t·end` for both fields; the target is
/// `end − z` of the supervised field.
pub fn interpolant_at(
    target_field: Field,
    target_end: &[f64],
    frozen_end: &[f64],
    z_f: &[f64],
    z_g: &[f64],
    t: f64,
) -> InterpolantSample {
    let (f_end, g_end) = match target_field {
        Field::F => (target_end, frozen_end),
        Field::G => (frozen_end, target_end),
    };
    let z_target = match target_field {
        Field::F => z_f,
        Field::G => z_g,
    };
    // the endpoints are returned verbatim so t ∈ {0, 1} is exact
    let path = |z: &[f64], end: &[f64]| {
        if t == 0.0 {
            z.to_vec()
        } else if t == 1.0 {
            end.to_vec()
        } else {
            lerp(z, end, t)
        }
    };
    InterpolantSample {
        f_t: path(z_f, f_end),
        g_t: path(z_g, g_end),
        t,
        target: target_end.iter().zip(z_target).map(|(e, z)| e - z).collect(),
        target_field,
    }
}

/// Draws `t ~ U[0,1]`, then `z_f`, then `z_g`, and builds the interpolant.
pub fn make_interpolant(
    target_field: Field,
    target_end: &[f64],
    frozen_end: &[f64],
    rng: &mut RngState,
) -> InterpolantSample {
    let t = rng.uniform();
    let (df, dg) = match target_field {
        Field::F => (target_end.len(), frozen_end.len()),
        Field::G => (frozen_end.len(), target_end.len()),
    };
    let mut z_f = vec![0.0; df];
    let mut z_g = vec![0.0; dg];
    rng.fill_standard_normal(&mut z_f);
    rng.fill_standard_normal(&mut z_g);
    interpolant_at(target_field, target_end, frozen_end, &z_f, &z_g, t)
}

/// Trains the velocity of the field the dataset supervises. The network sees `(f_t, g_t, t)`.
pub fn train_conditional_velocity(dataset: &DecoupledDataset, cfg: &TrainConfig) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.net.input_dim != 2 || cfg.net.output_dim != 1 {
        return Err(Error::invalid_config(
            "net",
            "velocity models on the synthetic data need input_dim 2 and output_dim 1",
        ));
    }
    let field = Field::trained_by(dataset.direction());
    let tf = cfg.net.time_feature_dim;
    train_loop(cfg, dataset.len(), |batch, rng| {
        let n = batch.len();
        let mut state = Array2::zeros((n, 2));
        let mut times = Vec::with_capacity(n);
        let mut targets = Array2::zeros((n, 1));
        for (row, &i) in batch.iter().enumerate() {
            let s = &dataset.samples()[i];
            let ip = make_interpolant(field, &[s.response_value], &[s.condition_value], rng);
            state[[row, 0]] = ip.f_t[0];
            state[[row, 1]] = ip.g_t[0];
            times.push(ip.t);
            targets[[row, 0]] = ip.target[0];
        }
        (build_inputs(&[state.view()], &times, tf), targets)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    LieTrotter,
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 100,
            scheme: Scheme::LieTrotter,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid_config("n_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Reference noise for `n` joint states; per sample, `z_f` is drawn before `z_g`.
pub fn draw_reference_noise(n: usize, dim_f: usize, dim_g: usize, rng: &mut RngState) -> (Array2<f64>, Array2<f64>) {
    let mut f = Array2::zeros((n, dim_f));
    let mut g = Array2::zeros((n, dim_g));
    for i in 0..n {
        for j in 0..dim_f {
            f[[i, j]] = rng.standard_normal();
        }
        for j in 0..dim_g {
            g[[i, j]] = rng.standard_normal();
        }
    }
    (f, g)
}

fn check_out(v: &Array2<f64>, rows: usize, dim: usize) -> Result<()> {
    if v.dim() != (rows, dim) {
        return Err(Error::ShapeMismatch(format!(
            "velocity returned {:?}, expected ({rows}, {dim})",
            v.dim()
        )));
    }
    Ok(())
}

/// `x ← x + h · v`.
fn axpy(x: &mut Array2<f64>, h: f64, v: &Array2<f64>) {
    Zip::from(x).and(v).for_each(|x, &v| *x += h * v);
}

fn step_f<V: VelocityField>(vf: &V, f: &mut Array2<f64>, g: &Array2<f64>, t: f64, h: f64) -> Result<()> {
    let v = vf.velocity(f.view(), g.view(), t)?;
    check_out(&v, f.nrows(), f.ncols())?;
    axpy(f, h, &v);
    Ok(())
}

fn step_g<V: VelocityField>(vg: &V, f: &Array2<f64>, g: &mut Array2<f64>, t: f64, h: f64) -> Result<()> {
    let v = vg.velocity(f.view(), g.view(), t)?;
    check_out(&v, g.nrows(), g.ncols())?;
    axpy(g, h, &v);
    Ok(())
}

/// Explicit midpoint step for `f` over `[t, t + h]` with `g` held fixed.
fn midpoint_f<V: VelocityField>(vf: &V, f: &mut Array2<f64>, g: &Array2<f64>, t: f64, h: f64) -> Result<()> {
    let mut mid = f.clone();
    step_f(vf, &mut mid, g, t, 0.5 * h)?;
    let v = vf.velocity(mid.view(), g.view(), t + 0.5 * h)?;
    check_out(&v, f.nrows(), f.ncols())?;
    axpy(f, h, &v);
    Ok(())
}

/// Explicit midpoint step for `g` with `f` and the time argument held fixed.
fn midpoint_g_frozen_time<V: VelocityField>(
    vg: &V,
    f: &Array2<f64>,
    g: &mut Array2<f64>,
    t: f64,
    h: f64,
) -> Result<()> {
    let mut mid = g.clone();
    step_g(vg, f, &mut mid, t, 0.5 * h)?;
    let v = vg.velocity(f.view(), mid.view(), t)?;
    check_out(&v, g.nrows(), g.ncols())?;
    axpy(g, h, &v);
    Ok(())
}

/// Lie–Trotter composition from given initial states. At step `k` with
/// `t = k/N`: `f ← f + τ v_f(f, g, t)`, then `g ← g + τ v_g(f, g, t)` using the updated `f`.
pub fn lie_trotter_from<VF: VelocityField, VG: VelocityField>(
    vf: &VF,
    vg: &VG,
    mut f: Array2<f64>,
    mut g: Array2<f64>,
    n_steps: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let tau = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let t = k as f64 / n_steps as f64;
        step_f(vf, &mut f, &g, t, tau)?;
        step_g(vg, &f, &mut g, t, tau)?;
    }
    Ok((f, g))
}

/// Strang composition from given initial states. Each step is a half step of
/// the `f` flow over `[t_k, t_k + τ/2]`, a full step of the `g` flow with time
/// frozen at `t_k + τ/2`, and a half step of the `f` flow over
/// `[t_k + τ/2, t_{k+1}]`. Every partial flow is advanced with the explicit
/// midpoint rule, which keeps the composition second order.
pub fn strang_from<VF: VelocityField, VG: VelocityField>(
    vf: &VF,
    vg: &VG,
    mut f: Array2<f64>,
    mut g: Array2<f64>,
    n_steps: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let tau = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let t = k as f64 / n_steps as f64;
        let t_half = (k as f64 + 0.5) / n_steps as f64;
        midpoint_f(vf, &mut f, &g, t, 0.5 * tau)?;
        midpoint_g_frozen_time(vg, &f, &mut g, t_half, tau)?;
        midpoint_f(vf, &mut f, &g, t_half, 0.5 * tau)?;
    }
    Ok((f, g))
}

fn finish(f: Array2<f64>, g: Array2<f64>, label: &str, seed: u64) -> Result<SampleSet> {
    let set = SampleSet::from_fields(f.view(), g.view(), label, seed)?;
    let bad = set.count_non_finite();
    if bad > 0 {
        return Err(Error::NonFiniteState {
            count: bad,
            total: set.len(),
        });
    }
    Ok(set)
}

/// Coupled sampling from reference noise with the Lie–Trotter composition.
pub fn lie_trotter_sample<VF: VelocityField, VG: VelocityField>(
    vf: &VF,
    vg: &VG,
    n_samples: usize,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<SampleSet> {
    cfg.validate()?;
    let seed = rng.seed();
    let (f0, g0) = draw_reference_noise(n_samples, vf.out_dim(), vg.out_dim(), rng);
    let (f, g) = lie_trotter_from(vf, vg, f0, g0, cfg.n_steps)?;
    finish(f, g, "lie_trotter", seed)
}

/// Coupled sampling from reference noise with the Strang composition.
pub fn strang_sample<VF: VelocityField, VG: VelocityField>(
    vf: &VF,
    vg: &VG,
    n_samples: usize,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<SampleSet> {
    cfg.validate()?;
    let seed = rng.seed();
    let (f0, g0) = draw_reference_noise(n_samples, vf.out_dim(), vg.out_dim(), rng);
    let (f, g) = strang_from(vf, vg, f0, g0, cfg.n_steps)?;
    finish(f, g, "strang", seed)
}

/// Dispatches on `cfg.scheme`.
pub fn coupled_sample<VF: VelocityField, VG: VelocityField>(
    vf: &VF,
    vg: &VG,
    n_samples: usize,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<SampleSet> {
    match cfg.scheme {
        Scheme::LieTrotter => lie_trotter_sample(vf, vg, n_samples, cfg, rng),
        Scheme::Strang => strang_sample(vf, vg, n_samples, cfg, rng),
    }
}

/// Samples the supervised field alone with the other field following its
/// training-time interpolant `(1−t) z + t·frozen` toward the given value.
/// The returned set holds the terminal target values and the frozen value.
pub fn conditional_sample<V: VelocityField>(
    v: &V,
    frozen_value: &[f64],
    target_field: Field,
    n_samples: usize,
    n_steps: usize,
    rng: &mut RngState,
) -> Result<SampleSet> {
    if n_steps == 0 {
        return Err(Error::invalid_config("n_steps", "must be at least 1"));
    }
    let seed = rng.seed();
    let d_target = v.out_dim();
    let d_frozen = frozen_value.len();
    let (dim_f, dim_g) = match target_field {
        Field::F => (d_target, d_frozen),
        Field::G => (d_frozen, d_target),
    };
    let (z_f, z_g) = draw_reference_noise(n_samples, dim_f, dim_g, rng);
    let (mut x, z_frozen) = match target_field {
        Field::F => (z_f, z_g),
        Field::G => (z_g, z_f),
    };
    let frozen_row = ndarray::Array1::from(frozen_value.to_vec());
    let tau = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let t = k as f64 / n_steps as f64;
        let frozen = &z_frozen * (1.0 - t) + &frozen_row * t;
        let vel = match target_field {
            Field::F => v.velocity(x.view(), frozen.view(), t)?,
            Field::G => v.velocity(frozen.view(), x.view(), t)?,
        };
        check_out(&vel, n_samples, d_target)?;
        axpy(&mut x, tau, &vel);
    }
    let frozen_terminal = Array2::from_shape_fn((n_samples, d_frozen), |(_, j)| frozen_value[j]);
    let (f, g) = match target_field {
        Field::F => (x, frozen_terminal),
        Field::G => (frozen_terminal, x),
    };
    finish(f, g, "conditional", seed)
}

/// Columns `f` of a joint-state matrix.
pub fn split_joint(points: ArrayView2<f64>, dim_f: usize) -> (Array2<f64>, Array2<f64>) {
    (
        points.slice(s![.., ..dim_f]).to_owned(),
        points.slice(s![.., dim_f..]).to_owned(),
    )
}
