//! Gaussian mixtures for the synthetic joint laws, exact mixture conditioning,
//! and the two decoupled conditional datasets built from them.
//!
//! The joint state is `(x, y)`; in the flow-matching vocabulary `f = x` and `g = y`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv, render_csv, write_once, Provenance};
use crate::numerics::{cholesky, RealMatrix, RealVector};
use crate::rng::RngState;
use crate::sample_set::SampleSet;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const MIN_CONDITIONAL_WEIGHT: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: RealVector,
    cov: RealMatrix,
    chol: RealMatrix,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: RealVector, cov: RealMatrix) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "component weight {weight} outside (0, 1]"
            )));
        }
        if cov.rows() != mean.dim() || !cov.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "mean has dim {} but covariance is {}x{}",
                mean.dim(),
                cov.rows(),
                cov.cols()
            )));
        }
        let chol = cholesky(&cov)?;
        Ok(Self {
            weight,
            mean,
            cov,
            chol,
        })
    }

    /// Bivariate component from standard deviations and a correlation coefficient.
    pub fn bivariate(weight: f64, mean: [f64; 2], std: [f64; 2], rho: f64) -> Result<Self> {
        let c = rho * std[0] * std[1];
        Self::new(
            weight,
            RealVector::new(mean.to_vec())?,
            RealMatrix::from_rows(&[[std[0] * std[0], c], [c, std[1] * std[1]]])?,
        )
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &RealVector {
        &self.mean
    }

    pub fn cov(&self) -> &RealMatrix {
        &self.cov
    }

    pub fn correlation(&self) -> f64 {
        self.cov.get(0, 1) / (self.cov.get(0, 0) * self.cov.get(1, 1)).sqrt()
    }

    fn sample_into(&self, rng: &mut RngState, out: &mut [f64]) {
        let d = self.mean.dim();
        let mut z = vec![0.0; d];
        rng.fill_standard_normal(&mut z);
        for i in 0..d {
            out[i] = self.mean[i] + (0..=i).map(|k| self.chol.get(i, k) * z[k]).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let dim = first.mean.dim();
        if components.iter().any(|c| c.mean.dim() != dim) {
            return Err(Error::ShapeMismatch("mixture components differ in dimension".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.dim()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `Σ wᵢ μᵢ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (acc, mu) in m.iter_mut().zip(c.mean.iter()) {
                *acc += c.weight * mu;
            }
        }
        m
    }

    /// `Σ wᵢ (Σᵢ + μᵢ μᵢᵀ) − μ̄ μ̄ᵀ`.
    pub fn covariance(&self) -> RealMatrix {
        let d = self.dim();
        let mbar = self.mean();
        let mut out = vec![0.0; d * d];
        for c in &self.components {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += c.weight * (c.cov.get(i, j) + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] -= mbar[i] * mbar[j];
            }
        }
        RealMatrix::new(d, d, out).expect("finite mixture moments")
    }

    /// Density of a one-dimensional mixture.
    pub fn pdf_1d(&self, x: f64) -> f64 {
        assert_eq!(self.dim(), 1);
        self.components
            .iter()
            .map(|c| c.weight * normal_pdf(x, c.mean[0], c.cov.get(0, 0)))
            .sum()
    }

    pub fn sample_point(&self, rng: &mut RngState, out: &mut [f64]) {
        let k = if self.components.len() == 1 {
            0
        } else {
            rng.categorical(&self.weights())
        };
        self.components[k].sample_into(rng, out);
    }

    fn sample_scalar(&self, rng: &mut RngState) -> f64 {
        let mut v = [0.0];
        self.sample_point(rng, &mut v);
        v[0]
    }
}

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * PI * var).ln())
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    normal_log_pdf(x, mean, var).exp()
}

/// Two-component mixture: weights 0.6 / 0.4 with correlations +0.8 and −0.42.
pub fn easy_mixture() -> GaussianMixture {
    GaussianMixture::new(vec![
        GaussianComponent::bivariate(0.6, [-1.0, -0.5], [1.0, 0.8], 0.8).expect("valid component"),
        GaussianComponent::bivariate(0.4, [1.5, 1.0], [0.7, 1.2], -0.42).expect("valid component"),
    ])
    .expect("valid mixture")
}

pub const COMPLEX_COMPONENTS: usize = 8;
pub const COMPLEX_RADIUS: f64 = 2.0;
const COMPLEX_RADIAL_STD: f64 = 0.35;
const COMPLEX_TANGENTIAL_STD: f64 = 0.18;
const COMPLEX_ISOTROPIC_VAR: f64 = 0.02;

/// `k` equally weighted components on a circle. Each covariance is
/// `diag(0.35², 0.18²)` in the component's (radial, tangential) frame plus `0.02 I`.
pub fn complex_mixture(k: usize, radius: f64) -> Result<GaussianMixture> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 components, got {k}")));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let w = 1.0 / k as f64;
    let (vr, vt) = (COMPLEX_RADIAL_STD.powi(2), COMPLEX_TANGENTIAL_STD.powi(2));
    let components = (0..k)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / k as f64;
            let (s, c) = theta.sin_cos();
            let xx = vr * c * c + vt * s * s + COMPLEX_ISOTROPIC_VAR;
            let yy = vr * s * s + vt * c * c + COMPLEX_ISOTROPIC_VAR;
            let xy = (vr - vt) * s * c;
            GaussianComponent::new(
                w,
                RealVector::new(vec![radius * c, radius * s])?,
                RealMatrix::from_rows(&[[xx, xy], [xy, yy]])?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(components)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Condition on `x`, respond with `y` (trains the `g` field).
    YGivenX,
    /// Condition on `y`, respond with `x` (trains the `f` field).
    XGivenY,
}

impl Direction {
    fn indices(self) -> (usize, usize) {
        match self {
            Direction::YGivenX => (0, 1),
            Direction::XGivenY => (1, 0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::YGivenX => "y_given_x",
            Direction::XGivenY => "x_given_y",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y_given_x" => Ok(Direction::YGivenX),
            "x_given_y" => Ok(Direction::XGivenY),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// One-dimensional law of the response coordinate given the condition coordinate.
pub fn conditional_law(mix: &GaussianMixture, direction: Direction, condition_value: f64) -> Result<GaussianMixture> {
    if mix.dim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "conditioning needs a 2-D mixture, got {}",
            mix.dim()
        )));
    }
    let (ci, ri) = direction.indices();
    let mut log_w = Vec::with_capacity(mix.components.len());
    let mut moments = Vec::with_capacity(mix.components.len());
    for c in &mix.components {
        let (mc, mr) = (c.mean[ci], c.mean[ri]);
        let (scc, srr, src) = (c.cov.get(ci, ci), c.cov.get(ri, ri), c.cov.get(ri, ci));
        log_w.push(c.weight.ln() + normal_log_pdf(condition_value, mc, scc));
        moments.push((mr + src / scc * (condition_value - mc), srr - src * src / scc));
    }
    let max_log = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_log > MIN_CONDITIONAL_WEIGHT.ln()) {
        return Err(Error::DegenerateCondition { value: condition_value });
    }
    let unnorm: Vec<f64> = log_w.iter().map(|l| (l - max_log).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let weights = normalized(&unnorm, total);
    let components = weights
        .into_iter()
        .zip(moments)
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, (m, v))| GaussianComponent::new(w, RealVector::new(vec![m])?, RealMatrix::new(1, 1, vec![v])?))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(components)
}

/// Normalized weights whose floating-point sum is within an ulp or two of 1.
fn normalized(unnorm: &[f64], total: f64) -> Vec<f64> {
    let mut w: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
    let (imax, _) = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let rest: f64 = w.iter().enumerate().filter(|(i, _)| *i != imax).map(|(_, v)| v).sum();
    w[imax] = 1.0 - rest;
    w
}

/// `n` i.i.d. joint draws; column 0 is `f = x`, column 1 is `g = y`.
pub fn sample_joint(mix: &GaussianMixture, n: usize, rng: &mut RngState) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if mix.dim() != 2 {
        return Err(Error::ShapeMismatch("joint sampling expects a 2-D mixture".into()));
    }
    let seed = rng.seed();
    let mut data = vec![0.0; 2 * n];
    for row in data.chunks_exact_mut(2) {
        mix.sample_point(rng, row);
    }
    SampleSet::new(
        1,
        1,
        Array2::from_shape_vec((n, 2), data).expect("shape"),
        "reference",
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalSample {
    pub condition_value: f64,
    pub response_value: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledDataset {
    samples: Vec<ConditionalSample>,
    direction: Direction,
    mix_alpha: f64,
    generator_seed: u64,
}

/// Conditions for the `y | x` dataset that do not come from the true marginal.
pub const UNIFORM_CONDITION_RANGE: (f64, f64) = (-3.0, 3.0);
/// Conditions for the `x | y` dataset that do not come from the true marginal:
/// `Beta(2, 2)` mapped affinely onto this interval.
pub const BETA_CONDITION_RANGE: (f64, f64) = (-2.0, 2.0);
const BETA_SHAPE: f64 = 2.0;

/// Builds a dataset whose condition marginal is perturbed and whose conditional is exact.
pub fn generate_decoupled_dataset(
    mix: &GaussianMixture,
    direction: Direction,
    n: usize,
    mix_alpha: f64,
    rng: &mut RngState,
) -> Result<DecoupledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&mix_alpha) {
        return Err(Error::InvalidArgument(format!("mix_alpha {mix_alpha} outside [0, 1]")));
    }
    let (ci, _) = direction.indices();
    let seed = rng.seed();
    let mut samples = Vec::with_capacity(n);
    let mut joint = [0.0; 2];
    for _ in 0..n {
        let from_marginal = rng.uniform() < mix_alpha;
        let condition = if from_marginal {
            mix.sample_point(rng, &mut joint);
            joint[ci]
        } else {
            match direction {
                Direction::YGivenX => rng.uniform_range(UNIFORM_CONDITION_RANGE.0, UNIFORM_CONDITION_RANGE.1),
                Direction::XGivenY => {
                    let (lo, hi) = BETA_CONDITION_RANGE;
                    lo + (hi - lo) * rng.beta(BETA_SHAPE, BETA_SHAPE)
                }
            }
        };
        let response = conditional_law(mix, direction, condition)?.sample_scalar(rng);
        samples.push(ConditionalSample {
            condition_value: condition,
            response_value: response,
            direction,
        });
    }
    DecoupledDataset::new(samples, direction, mix_alpha, seed)
}

impl DecoupledDataset {
    pub fn new(
        samples: Vec<ConditionalSample>,
        direction: Direction,
        mix_alpha: f64,
        generator_seed: u64,
    ) -> Result<Self> {
        if samples.iter().any(|s| s.direction != direction) {
            return Err(Error::InvalidArgument("dataset mixes directions".into()));
        }
        if samples
            .iter()
            .any(|s| !s.condition_value.is_finite() || !s.response_value.is_finite())
        {
            return Err(Error::NonFinite("dataset samples"));
        }
        Ok(Self {
            samples,
            direction,
            mix_alpha,
            generator_seed,
        })
    }

    /// Dataset built from explicit `(condition, response)` pairs.
    pub fn from_pairs(direction: Direction, pairs: &[(f64, f64)]) -> Result<Self> {
        let samples = pairs
            .iter()
            .map(|&(c, r)| ConditionalSample {
                condition_value: c,
                response_value: r,
                direction,
            })
            .collect();
        Self::new(samples, direction, 0.0, 0)
    }

    pub fn samples(&self) -> &[ConditionalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn mix_alpha(&self) -> f64 {
        self.mix_alpha
    }

    pub fn generator_seed(&self) -> u64 {
        self.generator_seed
    }

    /// Joint point `(x, y)` for sample `i`.
    pub fn joint_point(&self, i: usize) -> [f64; 2] {
        let s = &self.samples[i];
        match self.direction {
            Direction::YGivenX => [s.condition_value, s.response_value],
            Direction::XGivenY => [s.response_value, s.condition_value],
        }
    }

    pub fn as_sample_set(&self) -> SampleSet {
        let data: Vec<f64> = (0..self.len()).flat_map(|i| self.joint_point(i)).collect();
        SampleSet::new(
            1,
            1,
            Array2::from_shape_vec((self.len(), 2), data).expect("shape"),
            self.direction.as_str(),
            self.generator_seed,
        )
        .expect("two columns")
    }

    pub fn to_csv(&self, provenance: &Provenance) -> Result<Vec<u8>> {
        let prov = Provenance::new()
            .with("direction", self.direction)
            .with("mix_alpha", fmt_f64(self.mix_alpha))
            .with("generator_seed", self.generator_seed)
            .extend(provenance);
        render_csv(
            &prov,
            &["direction", "condition", "response"],
            self.samples.iter().map(|s| {
                [
                    s.direction.as_str().to_owned(),
                    fmt_f64(s.condition_value),
                    fmt_f64(s.response_value),
                ]
            }),
        )
    }

    pub fn write_csv(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        write_once(path, &self.to_csv(provenance)?)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let doc = read_csv(path)?;
        if doc.header != ["direction", "condition", "response"] {
            return Err(doc.parse_error(1, format!("unexpected dataset header {:?}", doc.header)));
        }
        let mut samples = Vec::with_capacity(doc.rows.len());
        for (line, row) in &doc.rows {
            if row.len() != 3 {
                return Err(doc.parse_error(*line, format!("expected 3 fields, got {}", row.len())));
            }
            let direction = row[0]
                .parse::<Direction>()
                .map_err(|e| doc.parse_error(*line, e.to_string()))?;
            samples.push(ConditionalSample {
                condition_value: doc.parse_f64(*line, &row[1])?,
                response_value: doc.parse_f64(*line, &row[2])?,
                direction,
            });
        }
        let direction = match (samples.first(), doc.provenance.get("direction")) {
            (Some(s), _) => s.direction,
            (None, Some(d)) => d.parse()?,
            (None, None) => return Err(Error::EmptyDataset),
        };
        let mix_alpha = doc
            .provenance
            .get("mix_alpha")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0);
        let seed = doc
            .provenance
            .get("generator_seed")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Self::new(samples, direction, mix_alpha, seed).map_err(|e| doc.parse_error(0, e.to_string()))
    }
}
