//! Gaussian targets whose flow-matching velocity is known in closed form,
//! bounded perturbations of those velocities, and the splitting convergence study.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{coupled_sample, draw_reference_noise, ConstantField, Field, SamplerConfig, Scheme, VelocityField};
use crate::io::{fmt_f64, render_csv, write_once, Provenance};
use crate::metrics::{w1_exact, W1_SUBSAMPLE};
use crate::numerics::{spd_sqrt, symmetric_eigen, RealMatrix, RealVector};
use crate::rng::{derive_seed, RngState};
use crate::sample_set::SampleSet;

/// Target `N(m, Σ)` reached from a standard normal source along the linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFlowOracle {
    mean: RealVector,
    cov: RealMatrix,
    eigenvalues: Vec<f64>,
    eigenvectors: RealMatrix,
    cov_sqrt: RealMatrix,
}

impl GaussianFlowOracle {
    pub fn new(mean: RealVector, cov: RealMatrix) -> Result<Self> {
        if cov.rows() != mean.dim() || !cov.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "mean has dimension {}, covariance is {}x{}",
                mean.dim(),
                cov.rows(),
                cov.cols()
            )));
        }
        let cov_sqrt = spd_sqrt(&cov)?;
        let (eigenvalues, eigenvectors) = symmetric_eigen(&cov)?;
        Ok(Self {
            mean,
            cov,
            eigenvalues,
            eigenvectors,
            cov_sqrt,
        })
    }

    /// One-dimensional target `N(m, σ²)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(RealVector::new(vec![mean])?, RealMatrix::new(1, 1, vec![variance])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn mean(&self) -> &RealVector {
        &self.mean
    }

    pub fn cov(&self) -> &RealMatrix {
        &self.cov
    }

    /// Spectral factor of `A(t) = (tΣ − (1−t)I)((1−t)²I + t²Σ)⁻¹` for eigenvalue `λ`.
    fn gain(t: f64, lambda: f64) -> f64 {
        (t * lambda - (1.0 - t)) / ((1.0 - t).powi(2) + t * t * lambda)
    }

    /// `A(t)` as a dense row-major matrix.
    fn gain_matrix(&self, t: f64) -> Vec<f64> {
        let d = self.dim();
        let g: Vec<f64> = self.eigenvalues.iter().map(|&l| Self::gain(t, l)).collect();
        let q = &self.eigenvectors;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| q.get(i, k) * g[k] * q.get(j, k)).sum();
            }
        }
        a
    }

    /// `E[f₁ − z | f_t = x] = m + A(t)(x − t m)`; the `t = 1` limit is `x`.
    pub fn velocity_at(&self, x: &[f64], t: f64) -> Vec<f64> {
        if t >= 1.0 {
            return x.to_vec();
        }
        let d = self.dim();
        let a = self.gain_matrix(t);
        let r: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(x, m)| x - t * m).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..d).map(|j| a[i * d + j] * r[j]).sum::<f64>())
            .collect()
    }

    /// Row-wise [`Self::velocity_at`].
    pub fn velocity_batch(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let d = self.dim();
        if x.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "oracle of dimension {d} got {} columns",
                x.ncols()
            )));
        }
        if t >= 1.0 {
            return Ok(x.to_owned());
        }
        let a = self.gain_matrix(t);
        let m = &self.mean;
        Ok(Array2::from_shape_fn(x.dim(), |(r, i)| {
            m[i] + (0..d).map(|j| a[i * d + j] * (x[[r, j]] - t * m[j])).sum::<f64>()
        }))
    }

    /// `‖A(t)‖₂`, the Lipschitz constant of the velocity in `x`.
    pub fn lipschitz(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 1.0;
        }
        self.eigenvalues
            .iter()
            .map(|&l| Self::gain(t, l).abs())
            .fold(0.0, f64::max)
    }

    /// Exact flow map at `t = 1`: `m + Σ^{1/2} z`.
    pub fn transport(&self, z: &[f64]) -> Vec<f64> {
        let s = self.cov_sqrt.matvec(z);
        s.iter().zip(self.mean.iter()).map(|(s, m)| s + m).collect()
    }
}

/// Free-function form of [`GaussianFlowOracle::velocity_at`].
pub fn oracle_velocity(oracle: &GaussianFlowOracle, x: &[f64], t: f64) -> RealVector {
    RealVector::new(oracle.velocity_at(x, t)).expect("oracle velocity of a finite state is finite")
}

/// An oracle driving one field of the joint state; it ignores the other field.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleField {
    pub oracle: GaussianFlowOracle,
    pub field: Field,
}

impl OracleField {
    pub fn new(oracle: GaussianFlowOracle, field: Field) -> Self {
        Self { oracle, field }
    }
}

impl VelocityField for OracleField {
    fn out_dim(&self) -> usize {
        self.oracle.dim()
    }

    fn velocity(&self, f: ArrayView2<f64>, g: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        match self.field {
            Field::F => self.oracle.velocity_batch(f, t),
            Field::G => self.oracle.velocity_batch(g, t),
        }
    }
}

/// Draws from `N(m_f, Σ_f) × N(m_g, Σ_g)` by pushing the same reference noise
/// the samplers consume (per sample `z_f`, then `z_g`) through the exact flow map.
pub fn oracle_terminal_sampler(
    oracle_f: &GaussianFlowOracle,
    oracle_g: &GaussianFlowOracle,
    n: usize,
    rng: &mut RngState,
) -> Result<SampleSet> {
    let seed = rng.seed();
    let (zf, zg) = draw_reference_noise(n, oracle_f.dim(), oracle_g.dim(), rng);
    let map = |o: &GaussianFlowOracle, z: &Array2<f64>| {
        let mut out = Array2::zeros(z.dim());
        for (mut row, zr) in out.rows_mut().into_iter().zip(z.rows()) {
            let v = o.transport(zr.as_slice().expect("standard layout"));
            row.assign(&ndarray::ArrayView1::from(&v));
        }
        out
    };
    SampleSet::from_fields(map(oracle_f, &zf).view(), map(oracle_g, &zg).view(), "oracle", seed)
}

/// The evaluation box for perturbations: `[−4, 4]²` in state, `[0, 1]` in time.
pub const PERTURBATION_BOX: f64 = 4.0;

const PERTURB_WEIGHTS: [f64; 3] = [1.3, 0.7, 2.1];

/// A base velocity plus `ε · p(x_f, x_g, t)` added to every output coordinate,
/// with `p = sin(1.3 x_f + 0.7 x_g + 2.1 t + φ)` scaled to unit sup on the box.
/// Only the first coordinate of each field enters `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedField<V> {
    pub base: V,
    pub epsilon: f64,
    pub seed: u64,
    phase: f64,
    scale: f64,
}

impl<V> PerturbedField<V> {
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// The normalized perturbation `p`.
    pub fn unit_perturbation(&self, x_f: f64, x_g: f64, t: f64) -> f64 {
        let [a, b, c] = PERTURB_WEIGHTS;
        self.scale * (a * x_f + b * x_g + c * t + self.phase).sin()
    }
}

/// `sup |sin|` over the interval `[lo, hi]`.
fn sup_abs_sin(lo: f64, hi: f64) -> f64 {
    // a peak of |sin| sits at π/2 + kπ
    let k = ((lo - FRAC_PI_2) / PI).ceil();
    if FRAC_PI_2 + k * PI <= hi {
        1.0
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

pub fn perturb_field<V: VelocityField>(base: V, epsilon: f64, seed: u64) -> Result<PerturbedField<V>> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    let phase = 2.0 * PI * RngState::new(derive_seed(seed, "perturbation-phase", 0)).uniform();
    let [a, b, c] = PERTURB_WEIGHTS;
    let reach = (a + b) * PERTURBATION_BOX;
    let sup = sup_abs_sin(phase - reach, phase + reach + c);
    Ok(PerturbedField {
        base,
        epsilon,
        seed,
        phase,
        scale: 1.0 / sup,
    })
}

impl<V: VelocityField> VelocityField for PerturbedField<V> {
    fn out_dim(&self) -> usize {
        self.base.out_dim()
    }

    fn velocity(&self, f: ArrayView2<f64>, g: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let mut v = self.base.velocity(f, g, t)?;
        if self.epsilon == 0.0 {
            return Ok(v);
        }
        for (r, mut row) in v.rows_mut().into_iter().enumerate() {
            let p = self.epsilon * self.unit_perturbation(f[[r, 0]], g[[r, 0]], t);
            row.mapv_inplace(|x| x + p);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub n_samples: usize,
    /// Both sets are subsampled (same rows) to this size before the assignment.
    #[serde(default = "default_w1_subsample")]
    pub w1_subsample: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_w1_subsample() -> usize {
    W1_SUBSAMPLE
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_list: vec![8, 16, 32, 64, 128],
            eps_list: vec![0.0, 0.1, 0.2],
            n_samples: 4096,
            w1_subsample: W1_SUBSAMPLE,
            replicates: 8,
            seed: 0,
            scheme: Scheme::LieTrotter,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.len() < 3 {
            return Err(Error::invalid_config("n_list", "needs at least three step counts"));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) || self.n_list[0] == 0 {
            return Err(Error::invalid_config(
                "n_list",
                "step counts must be positive and strictly increasing",
            ));
        }
        if self.n_list[self.n_list.len() - 1] < 8 * self.n_list[0] {
            return Err(Error::invalid_config(
                "n_list",
                "step counts must span at least a factor of 8",
            ));
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::invalid_config(
                "eps_list",
                "needs finite nonnegative perturbation sizes",
            ));
        }
        if self.n_samples == 0 || self.replicates == 0 || self.w1_subsample == 0 {
            return Err(Error::invalid_config(
                "n_samples",
                "sample and replicate counts must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub tau: f64,
    pub eps_f: f64,
    pub eps_g: f64,
    pub replicate: usize,
    pub w1_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub scheme: Scheme,
    pub rows: Vec<ConvergenceRow>,
    /// Slope of log error against log τ at ε = 0; `None` if fewer than two
    /// step counts rise above the floor.
    pub fitted_order: Option<f64>,
    pub fitted_constant: Option<f64>,
    /// Mean W1 between two independent exact draws of the target.
    pub noise_floor: f64,
    /// Mean W1 of an exactly splittable (commuting) system under the study's
    /// common random numbers; the floor used by the fit.
    pub crn_floor: f64,
    /// Step counts that entered the fit.
    pub fitted_n: Vec<usize>,
}

impl ConvergenceReport {
    /// Replicate-mean error per step count at the given ε.
    pub fn mean_errors(&self, eps: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.eps_f == eps) {
            match out.iter_mut().find(|(n, _, _)| *n == r.n_steps) {
                Some(cell) => {
                    cell.1 += r.w1_error;
                    cell.2 += 1;
                }
                None => out.push((r.n_steps, r.w1_error, 1)),
            }
        }
        out.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect()
    }

    pub fn to_csv(&self, provenance: &Provenance) -> Result<Vec<u8>> {
        render_csv(
            provenance,
            &["N", "tau", "eps_f", "eps_g", "replicate", "w1_error"],
            self.rows.iter().map(|r| {
                [
                    r.n_steps.to_string(),
                    fmt_f64(r.tau),
                    fmt_f64(r.eps_f),
                    fmt_f64(r.eps_g),
                    r.replicate.to_string(),
                    fmt_f64(r.w1_error),
                ]
            }),
        )
    }

    pub fn write_csv(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        write_once(path, &self.to_csv(provenance)?)
    }

    /// `{fitted_order, fitted_constant, noise_floor, crn_floor, ...}`.
    pub fn summary_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "scheme": self.scheme,
            "fitted_order": self.fitted_order,
            "fitted_constant": self.fitted_constant,
            "noise_floor": self.noise_floor,
            "crn_floor": self.crn_floor,
            "fitted_n": self.fitted_n,
        });
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}

/// W1 on the first `k` rows of a shared random subset; sets of equal length
/// keep their row pairing.
fn w1_on_subset(a: &SampleSet, b: &SampleSet, k: usize, seed: u64) -> Result<f64> {
    w1_exact(&a.subsample(k, seed), &b.subsample(k, seed))
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Runs the chosen splitting scheme on the (perturbed) oracle fields for
/// every `(N, ε)` and replicate, and measures exact W1 against the target.
///
/// Replicate `r` uses the same reference noise for every cell and for its
/// target draw, so differences between cells reflect the scheme rather than
/// resampling. ε perturbs both fields (`ε_f = ε_g = ε`).
pub fn convergence_study(
    oracle_f: &GaussianFlowOracle,
    oracle_g: &GaussianFlowOracle,
    cfg: &StudyConfig,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let replicate_seed = |r: usize| derive_seed(cfg.seed, "replicate", r as u64);
    let mut rows = Vec::new();
    for r in 0..cfg.replicates {
        let target = oracle_terminal_sampler(oracle_f, oracle_g, n, &mut RngState::new(replicate_seed(r)))?;
        for &eps in &cfg.eps_list {
            let vf = perturb_field(
                OracleField::new(oracle_f.clone(), Field::F),
                eps,
                derive_seed(cfg.seed, "perturb-f", 0),
            )?;
            let vg = perturb_field(
                OracleField::new(oracle_g.clone(), Field::G),
                eps,
                derive_seed(cfg.seed, "perturb-g", 0),
            )?;
            for &n_steps in &cfg.n_list {
                let sampler = SamplerConfig {
                    n_steps,
                    scheme: cfg.scheme,
                    seed: replicate_seed(r),
                };
                let out = coupled_sample(&vf, &vg, n, &sampler, &mut RngState::new(replicate_seed(r)))?;
                rows.push(ConvergenceRow {
                    n_steps,
                    tau: 1.0 / n_steps as f64,
                    eps_f: eps,
                    eps_g: eps,
                    replicate: r,
                    w1_error: w1_on_subset(&out, &target, cfg.w1_subsample, replicate_seed(r))?,
                });
            }
        }
        log::debug!("convergence replicate {r} done");
    }

    let mut noise_floor = 0.0;
    let mut crn_floor = 0.0;
    for r in 0..cfg.replicates {
        let a = oracle_terminal_sampler(
            oracle_f,
            oracle_g,
            n,
            &mut RngState::new(derive_seed(cfg.seed, "floor-a", r as u64)),
        )?;
        let b = oracle_terminal_sampler(
            oracle_f,
            oracle_g,
            n,
            &mut RngState::new(derive_seed(cfg.seed, "floor-b", r as u64)),
        )?;
        noise_floor += w1_on_subset(&a, &b, cfg.w1_subsample, replicate_seed(r))?;
        crn_floor += commuting_error(oracle_f, oracle_g, cfg, replicate_seed(r))?;
    }
    noise_floor /= cfg.replicates as f64;
    crn_floor /= cfg.replicates as f64;

    let mut report = ConvergenceReport {
        scheme: cfg.scheme,
        rows,
        fitted_order: None,
        fitted_constant: None,
        noise_floor,
        crn_floor,
        fitted_n: Vec::new(),
    };
    let usable: Vec<(usize, f64)> = report
        .mean_errors(0.0)
        .into_iter()
        .filter(|&(_, e)| e > 3.0 * crn_floor && e - crn_floor > 0.0)
        .collect();
    let points: Vec<(f64, f64)> = usable
        .iter()
        .map(|&(n, e)| ((1.0 / n as f64).ln(), (e - crn_floor).ln()))
        .collect();
    if let Some((slope, intercept)) = fit_line(&points) {
        report.fitted_order = Some(slope);
        report.fitted_constant = Some(intercept.exp());
        report.fitted_n = usable.iter().map(|u| u.0).collect();
    } else {
        log::warn!("too few step counts above the floor to fit an order");
    }
    Ok(report)
}

/// Error of the scheme on constant fields `v_f = m_f`, `v_g = m_g` against
/// `N(m_f, I) × N(m_g, I)` under common random numbers. Constant fields
/// commute and Euler is exact for them, so this isolates the measurement floor.
fn commuting_error(
    oracle_f: &GaussianFlowOracle,
    oracle_g: &GaussianFlowOracle,
    cfg: &StudyConfig,
    seed: u64,
) -> Result<f64> {
    let unit = |o: &GaussianFlowOracle| GaussianFlowOracle::new(o.mean().clone(), RealMatrix::identity(o.dim()));
    let (uf, ug) = (unit(oracle_f)?, unit(oracle_g)?);
    let target = oracle_terminal_sampler(&uf, &ug, cfg.n_samples, &mut RngState::new(seed))?;
    let sampler = SamplerConfig {
        n_steps: cfg.n_list[0],
        scheme: cfg.scheme,
        seed,
    };
    let out = coupled_sample(
        &ConstantField(oracle_f.mean().to_vec()),
        &ConstantField(oracle_g.mean().to_vec()),
        cfg.n_samples,
        &sampler,
        &mut RngState::new(seed),
    )?;
    w1_on_subset(&out, &target, cfg.w1_subsample, seed)
}
