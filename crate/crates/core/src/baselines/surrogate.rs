use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::draw_reference_noise;
use crate::mixture::DecoupledDataset;
use crate::net::{build_inputs, NetParams};
use crate::numerics::RealVector;
use crate::rng::RngState;
use crate::sample_set::SampleSet;
use crate::training::{train_loop, TrainConfig, Trained};

/// A one-step map from the other field to this field.
pub trait Surrogate {
    fn out_dim(&self) -> usize;

    /// One prediction row per row of `other`.
    fn predict(&self, other: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl<S: Surrogate + ?Sized> Surrogate for &S {
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }

    fn predict(&self, other: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).predict(other)
    }
}

/// Surrogate networks see the condition and time features frozen at `t = 0`.
impl Surrogate for NetParams {
    fn out_dim(&self) -> usize {
        self.config().output_dim
    }

    fn predict(&self, other: ArrayView2<f64>) -> Result<Array2<f64>> {
        let times = vec![0.0; other.nrows()];
        let x = build_inputs(&[other], &times, self.config().time_feature_dim);
        self.forward_batch(x.view())
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Surrogate for (usize, F) {
    fn out_dim(&self) -> usize {
        self.0
    }

    fn predict(&self, other: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((other.nrows(), self.0));
        for (mut o, row) in out.rows_mut().into_iter().zip(other.rows()) {
            let v = (self.1)(&row.to_vec());
            if v.len() != self.0 {
                return Err(Error::ShapeMismatch(format!(
                    "surrogate returned {} values, expected {}",
                    v.len(),
                    self.0
                )));
            }
            o.assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(out)
    }
}

/// `model_f` predicts `f` from `g`; `model_g` predicts `g` from `f`. The
/// synthetic problems have no outer inputs, so `context_dim` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePair<S = NetParams> {
    pub model_f: S,
    pub model_g: S,
    pub context_dim: usize,
}

impl<S: Surrogate> SurrogatePair<S> {
    pub fn new(model_f: S, model_g: S) -> Self {
        Self {
            model_f,
            model_g,
            context_dim: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub max_iters: usize,
    pub eps_max: f64,
    pub alpha: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            eps_max: 0.0,
            alpha: 0.5,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid_config("picard.max_iters", "must be at least 1"));
        }
        if !(self.eps_max >= 0.0) {
            return Err(Error::invalid_config("picard.eps_max", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid_config("picard.alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub f: RealVector,
    pub g: RealVector,
    pub iters: usize,
    /// L1 change of both fields over the last sweep.
    pub residual: f64,
}

/// Relaxed Gauss–Seidel fixed-point iteration: each sweep updates `f` from
/// the current `g`, then `g` from the new `f`, blending each prediction with
/// the previous iterate by `alpha`. Stops after `max_iters` sweeps or once the
/// residual is at most `eps_max`.
pub fn picard_combine<S: Surrogate>(
    pair: &SurrogatePair<S>,
    cfg: &PicardConfig,
    init_f: &[f64],
    init_g: &[f64],
) -> Result<PicardOutcome> {
    let f0 =
        Array2::from_shape_vec((1, init_f.len()), init_f.to_vec()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let g0 =
        Array2::from_shape_vec((1, init_g.len()), init_g.to_vec()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let (f, g, iters, residual) = picard_batch(pair, cfg, f0, g0)?;
    let non_finite = || Error::NonFiniteState { count: 1, total: 1 };
    Ok(PicardOutcome {
        f: RealVector::new(f.row(0).to_vec()).map_err(|_| non_finite())?,
        g: RealVector::new(g.row(0).to_vec()).map_err(|_| non_finite())?,
        iters: iters[0],
        residual: residual[0],
    })
}

fn relax(z: &mut Array2<f64>, pred: &Array2<f64>, alpha: f64, active: &[bool], residual: &mut [f64]) {
    for (r, (mut zr, pr)) in z.rows_mut().into_iter().zip(pred.rows()).enumerate() {
        if !active[r] {
            continue;
        }
        for (z, p) in zr.iter_mut().zip(pr) {
            let prev = *z;
            *z = alpha * p + (1.0 - alpha) * prev;
            residual[r] += (*z - prev).abs();
        }
    }
}

/// [`picard_combine`] for many initial states at once; each row stops on its
/// own residual. Returns the iterates, per-row sweep counts and residuals.
pub fn picard_batch<S: Surrogate>(
    pair: &SurrogatePair<S>,
    cfg: &PicardConfig,
    mut f: Array2<f64>,
    mut g: Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Vec<usize>, Vec<f64>)> {
    cfg.validate()?;
    let n = f.nrows();
    if g.nrows() != n || f.ncols() != pair.model_f.out_dim() || g.ncols() != pair.model_g.out_dim() {
        return Err(Error::ShapeMismatch(
            "picard initial states do not match the surrogates".into(),
        ));
    }
    let mut iters = vec![0usize; n];
    let mut residual = vec![f64::INFINITY; n];
    let mut active = vec![true; n];
    for _ in 0..cfg.max_iters {
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut sweep = vec![0.0; n];
        let pf = pair.model_f.predict(g.view())?;
        relax(&mut f, &pf, cfg.alpha, &active, &mut sweep);
        let pg = pair.model_g.predict(f.view())?;
        relax(&mut g, &pg, cfg.alpha, &active, &mut sweep);
        for r in 0..n {
            if active[r] {
                iters[r] += 1;
                residual[r] = sweep[r];
                // a NaN residual never satisfies the tolerance, so the row runs to max_iters
                if residual[r] <= cfg.eps_max {
                    active[r] = false;
                }
            }
        }
    }
    Ok((f, g, iters, residual))
}

/// Regresses the dataset's response on its condition with MSE.
pub fn train_surrogate(dataset: &DecoupledDataset, cfg: &TrainConfig) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.net.input_dim != 1 || cfg.net.output_dim != 1 {
        return Err(Error::invalid_config(
            "net",
            "surrogates on the synthetic data need input_dim 1 and output_dim 1",
        ));
    }
    let tf = cfg.net.time_feature_dim;
    train_loop(cfg, dataset.len(), |batch, _rng| {
        let n = batch.len();
        let mut cond = Array2::zeros((n, 1));
        let mut targets = Array2::zeros((n, 1));
        for (row, &i) in batch.iter().enumerate() {
            let s = &dataset.samples()[i];
            cond[[row, 0]] = s.condition_value;
            targets[[row, 0]] = s.response_value;
        }
        (build_inputs(&[cond.view()], &vec![0.0; n], tf), targets)
    })
}

/// One Picard solve per sample from standard normal initial states (per
/// sample `f` then `g`, as in the flow samplers).
pub fn surrogate_sample<S: Surrogate>(
    pair: &SurrogatePair<S>,
    cfg: &PicardConfig,
    n_samples: usize,
    rng: &mut RngState,
) -> Result<SampleSet> {
    let seed = rng.seed();
    let (f0, g0) = draw_reference_noise(n_samples, pair.model_f.out_dim(), pair.model_g.out_dim(), rng);
    let (f, g, _, _) = picard_batch(pair, cfg, f0, g0)?;
    let set = SampleSet::from_fields(f.view(), g.view(), "surrogate", seed)?;
    let bad = set.count_non_finite();
    if bad > 0 {
        return Err(Error::NonFiniteState {
            count: bad,
            total: set.len(),
        });
    }
    Ok(set)
}
