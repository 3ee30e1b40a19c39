use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{M2pdeConfig, PicardConfig};
use crate::error::{Error, Result};
use crate::flow::{SamplerConfig, Scheme};
use crate::metrics::W1_SUBSAMPLE;
use crate::mixture::{complex_mixture, easy_mixture, GaussianMixture, COMPLEX_COMPONENTS, COMPLEX_RADIUS};
use crate::net::NetConfig;
use crate::training::TrainConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Easy,
    Complex,
}

impl Distribution {
    pub fn mixture(self) -> GaussianMixture {
        match self {
            Distribution::Easy => easy_mixture(),
            Distribution::Complex => {
                complex_mixture(COMPLEX_COMPONENTS, COMPLEX_RADIUS).expect("built-in mixture is valid")
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Easy => "easy",
            Distribution::Complex => "complex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Gencp,
    Surrogate,
    M2pde,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Gencp, Paradigm::M2pde, Paradigm::Surrogate];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Gencp => "gencp",
            Paradigm::Surrogate => "surrogate",
            Paradigm::M2pde => "m2pde",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Size of the `x | y` dataset that trains the `f` models.
    pub n_f: usize,
    /// Size of the `y | x` dataset that trains the `g` models.
    pub n_g: usize,
    /// Joint samples drawn from the true mixture for evaluation.
    pub n_reference: usize,
    pub mix_alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_f: 50_000,
            n_g: 50_000,
            n_reference: 4096,
            mix_alpha: 0.5,
        }
    }
}

fn surrogate_train_default() -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            input_dim: 1,
            ..NetConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfigs {
    #[serde(default)]
    pub gencp: TrainConfig,
    #[serde(default = "surrogate_train_default")]
    pub surrogate: TrainConfig,
    #[serde(default)]
    pub m2pde: TrainConfig,
}

impl Default for TrainingConfigs {
    fn default() -> Self {
        Self {
            gencp: TrainConfig::default(),
            surrogate: surrogate_train_default(),
            m2pde: TrainConfig::default(),
        }
    }
}

impl TrainingConfigs {
    pub fn for_paradigm(&self, p: Paradigm) -> &TrainConfig {
        match p {
            Paradigm::Gencp => &self.gencp,
            Paradigm::Surrogate => &self.surrogate,
            Paradigm::M2pde => &self.m2pde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Generated samples per paradigm.
    pub n_samples: usize,
    pub w1_subsample: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            w1_subsample: W1_SUBSAMPLE,
        }
    }
}

/// Gaussian targets and grid for the splitting convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub mean_f: f64,
    pub var_f: f64,
    pub mean_g: f64,
    pub var_g: f64,
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub n_samples: usize,
    pub w1_subsample: usize,
    pub replicates: usize,
    pub scheme: Scheme,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            mean_f: 2.0,
            var_f: 1.0,
            mean_g: -1.0,
            var_g: 1.0,
            n_list: vec![8, 16, 32, 64, 128],
            eps_list: vec![0.0, 0.1, 0.2],
            n_samples: 4096,
            w1_subsample: W1_SUBSAMPLE,
            replicates: 8,
            scheme: Scheme::LieTrotter,
        }
    }
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig::default()
}

/// One experiment: data, the three paradigms' budgets, inference and metric
/// settings. Every model seed is derived from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub distribution: Distribution,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainingConfigs,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub m2pde: M2pdeConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
}

impl ExperimentConfig {
    pub fn new(distribution: Distribution) -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            distribution,
            master_seed: 0,
            output_dir: None,
            data: DataConfig::default(),
            train: TrainingConfigs::default(),
            sampler: SamplerConfig::default(),
            picard: PicardConfig::default(),
            m2pde: M2pdeConfig::default(),
            metrics: MetricsConfig::default(),
            converge: ConvergeConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid_config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_owned())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::invalid_config(
                "format_version",
                format!("expected {CONFIG_FORMAT_VERSION}, got {}", self.format_version),
            ));
        }
        let d = &self.data;
        if d.n_f == 0 || d.n_g == 0 || d.n_reference == 0 {
            return Err(Error::invalid_config("data", "dataset sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&d.mix_alpha) {
            return Err(Error::invalid_config("data.mix_alpha", "must lie in [0, 1]"));
        }
        for p in Paradigm::ALL {
            self.train
                .for_paradigm(p)
                .validate()
                .map_err(|e| rename_field(e, &format!("train.{}", p.as_str())))?;
        }
        self.check_equal_budget()?;
        let expect_input = |p: Paradigm, want: usize| {
            let net = &self.train.for_paradigm(p).net;
            if net.input_dim != want || net.output_dim != 1 {
                return Err(Error::invalid_config(
                    format!("train.{}.net", p.as_str()),
                    format!("needs input_dim {want} and output_dim 1 on the two-field synthetic data"),
                ));
            }
            Ok(())
        };
        expect_input(Paradigm::Gencp, 2)?;
        expect_input(Paradigm::M2pde, 2)?;
        expect_input(Paradigm::Surrogate, 1)?;
        self.sampler.validate()?;
        self.picard.validate()?;
        self.m2pde.validate()?;
        if self.metrics.n_samples == 0 || self.metrics.w1_subsample == 0 {
            return Err(Error::invalid_config("metrics", "sample counts must be positive"));
        }
        self.study_config(Scheme::LieTrotter).validate()?;
        for (name, v) in [
            ("converge.var_f", self.converge.var_f),
            ("converge.var_g", self.converge.var_g),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid_config(name, "variance must be positive"));
            }
        }
        Ok(())
    }

    /// Every paradigm gets the same hidden architecture, step count and batch size.
    fn check_equal_budget(&self) -> Result<()> {
        let base = &self.train.gencp;
        for p in [Paradigm::Surrogate, Paradigm::M2pde] {
            let other = self.train.for_paradigm(p);
            let checks = [
                ("steps", base.steps == other.steps),
                ("batch_size", base.batch_size == other.batch_size),
                ("net.hidden_width", base.net.hidden_width == other.net.hidden_width),
                ("net.hidden_layers", base.net.hidden_layers == other.net.hidden_layers),
                (
                    "net.time_feature_dim",
                    base.net.time_feature_dim == other.net.time_feature_dim,
                ),
            ];
            if let Some((field, _)) = checks.iter().find(|(_, ok)| !ok) {
                return Err(Error::invalid_config(
                    format!("train.{}.{field}", p.as_str()),
                    "must match train.gencp (equal training budget across paradigms)",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn study_config(&self, scheme: Scheme) -> crate::oracle::StudyConfig {
        let c = &self.converge;
        crate::oracle::StudyConfig {
            n_list: c.n_list.clone(),
            eps_list: c.eps_list.clone(),
            n_samples: c.n_samples,
            w1_subsample: c.w1_subsample,
            replicates: c.replicates,
            seed: crate::rng::derive_seed(self.master_seed, "converge", 0),
            scheme,
        }
    }
}

fn rename_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidConfig { field, message } => Error::invalid_config(format!("{prefix}.{field}"), message),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"format_version": 1, "distribution": "easy"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(Distribution::Easy));
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        for bad in [
            r#"{"format_version": 1, "distribution": "easy", "extra": 1}"#,
            r#"{"format_version": 1, "distribution": "easy", "data": {"n_f": 10, "typo": 2}}"#,
            r#"{"format_version": 2, "distribution": "easy"}"#,
            r#"{"format_version": 1, "distribution": "medium"}"#,
        ] {
            let err = ExperimentConfig::from_json(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn unequal_budgets_are_rejected() {
        let mut cfg = ExperimentConfig::new(Distribution::Complex);
        cfg.train.m2pde.steps = 10;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("train.m2pde.steps"), "{err}");
        let mut cfg = ExperimentConfig::new(Distribution::Complex);
        cfg.train.surrogate.net.hidden_width = 64;
        assert!(cfg.validate().unwrap_err().to_string().contains("hidden_width"));
        let mut cfg = ExperimentConfig::new(Distribution::Complex);
        cfg.train.surrogate.net.input_dim = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::new(Distribution::Easy);
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
