use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Paradigm};
use super::svg::convergence_svg;
use super::SOFTWARE_VERSION;
use crate::baselines::{ddpm_train, m2pde_compose, surrogate_sample, train_surrogate, SurrogatePair};
use crate::error::{Error, Result};
use crate::flow::{coupled_sample, train_conditional_velocity, Field, Scheme};
use crate::io::{fmt_f64, render_csv, write_once, Provenance};
use crate::metrics::MetricReport;
use crate::mixture::{generate_decoupled_dataset, sample_joint, DecoupledDataset, Direction};
use crate::net::{Checkpoint, CheckpointMetadata, NetParams};
use crate::oracle::{convergence_study, ConvergenceReport, GaussianFlowOracle};
use crate::rng::{derive_seed, RngState};
use crate::sample_set::SampleSet;
use crate::training::{TrainConfig, Trained};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Index of a run directory. Paths are relative to the directory. Unlike the
/// CSV artifacts the manifest is rewritten as commands add to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub software_version: String,
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per phase, last run.
    pub timings: BTreeMap<String, f64>,
}

/// A validated config bound to its output directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
}

impl RunContext {
    /// Uses `config.output_dir`, or `runs/<distribution>-<hash prefix>` when unset.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let config_hash = config.hash();
        let out_dir = config
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", config.distribution.as_str(), &config_hash[..12])));
        Ok(Self {
            config,
            out_dir,
            config_hash,
        })
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new()
            .with("config_hash", &self.config_hash)
            .with("master_seed", self.config.master_seed)
            .with("software_version", SOFTWARE_VERSION)
            .with("distribution", self.config.distribution.as_str())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// `path` relative to the run directory when it lies inside it, so
    /// artifacts do not depend on where the run directory lives.
    pub fn display_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.out_dir).unwrap_or(path).display().to_string()
    }

    pub fn dataset_rel(direction: Direction) -> &'static str {
        match direction {
            Direction::XGivenY => "data/d_f.csv",
            Direction::YGivenX => "data/d_g.csv",
        }
    }

    pub fn checkpoint_rel(p: Paradigm, field: Field) -> String {
        format!("models/{}_{}.json", p.as_str(), field.as_str())
    }

    pub fn samples_rel(p: Paradigm) -> String {
        format!("samples/{}.csv", p.as_str())
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let path = self.path(MANIFEST_FILE);
        let fresh = RunManifest {
            config_hash: self.config_hash.clone(),
            master_seed: self.config.master_seed,
            software_version: SOFTWARE_VERSION.to_owned(),
            ..RunManifest::default()
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(fresh),
            Err(e) => return Err(e.into()),
        };
        let existing: RunManifest = serde_json::from_str(&text)?;
        if existing.config_hash != self.config_hash {
            return Err(Error::invalid_config(
                "output_dir",
                format!(
                    "{} belongs to a run with config hash {}, not {}",
                    self.out_dir.display(),
                    existing.config_hash,
                    self.config_hash
                ),
            ));
        }
        Ok(existing)
    }

    /// Checks the directory belongs to this config and records the config
    /// itself (without `output_dir`, so copies of a run stay identical).
    fn open(&self) -> Result<()> {
        self.manifest()?;
        let mut cfg = self.config.clone();
        cfg.output_dir = None;
        write_once(&self.path("config.json"), cfg.to_json()?.as_bytes())
    }

    fn record(&self, update: impl FnOnce(&mut RunManifest)) -> Result<()> {
        let mut m = self.manifest()?;
        update(&mut m);
        for rel in m.artifacts.values() {
            if !self.path(rel).exists() {
                return Err(Error::MissingArtifact(self.path(rel)));
            }
        }
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(self.path(MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    fn finish(&self, phase: &str, start: Instant, artifacts: Vec<(String, String)>) -> Result<()> {
        let secs = start.elapsed().as_secs_f64();
        log::info!("{phase} done in {secs:.1}s");
        self.record(|m| {
            m.artifacts.insert("config".into(), "config.json".into());
            m.artifacts.extend(artifacts);
            m.timings.insert(phase.to_owned(), secs);
        })
    }

    pub fn load_dataset(&self, direction: Direction) -> Result<DecoupledDataset> {
        DecoupledDataset::read_csv(&self.path(Self::dataset_rel(direction)))
    }

    pub fn load_reference(&self) -> Result<SampleSet> {
        SampleSet::read_csv(&self.path("data/reference.csv"))
    }

    pub fn load_model(&self, p: Paradigm, field: Field) -> Result<NetParams> {
        Checkpoint::read(&self.path(&Self::checkpoint_rel(p, field)))?.params()
    }
}

/// Writes both decoupled datasets and two independent joint reference draws
/// (`reference.csv` for evaluation, `reference_holdout.csv` for the floor).
pub fn cmd_gen_data(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    ctx.open()?;
    let cfg = &ctx.config;
    let mix = cfg.distribution.mixture();
    let master = cfg.master_seed;
    let mut artifacts = Vec::new();
    let mut written = Vec::new();
    for (direction, n, name) in [
        (Direction::XGivenY, cfg.data.n_f, "d_f"),
        (Direction::YGivenX, cfg.data.n_g, "d_g"),
    ] {
        let mut rng = RngState::new(derive_seed(master, &format!("data/{name}"), 0));
        let ds = generate_decoupled_dataset(&mix, direction, n, cfg.data.mix_alpha, &mut rng)?;
        let rel = RunContext::dataset_rel(direction);
        ds.write_csv(&ctx.path(rel), &ctx.provenance())?;
        artifacts.push((name.to_owned(), rel.to_owned()));
        written.push(ctx.path(rel));
    }
    for name in ["reference", "reference_holdout"] {
        let mut rng = RngState::new(derive_seed(master, &format!("data/{name}"), 0));
        let set = sample_joint(&mix, cfg.data.n_reference, &mut rng)?;
        let rel = format!("data/{name}.csv");
        set.write_csv(&ctx.path(&rel), &ctx.provenance())?;
        written.push(ctx.path(&rel));
        artifacts.push((name.to_owned(), rel));
    }
    ctx.finish("gen-data", start, artifacts)?;
    Ok(written)
}

fn role(p: Paradigm) -> &'static str {
    match p {
        Paradigm::Gencp => "velocity",
        Paradigm::Surrogate => "surrogate",
        Paradigm::M2pde => "ddpm",
    }
}

/// Trains the paradigm's two models, `f` on `D_f` and `g` on `D_g`, and writes
/// checkpoints plus loss curves. Model seeds are derived from the master seed
/// with the configured seed as a salt.
pub fn cmd_train(ctx: &RunContext, paradigm: Paradigm) -> Result<Vec<Trained>> {
    let start = Instant::now();
    ctx.open()?;
    let cfg = &ctx.config;
    let mut artifacts = Vec::new();
    let mut out = Vec::new();
    for direction in [Direction::XGivenY, Direction::YGivenX] {
        let ds = ctx.load_dataset(direction)?;
        let field = Field::trained_by(direction);
        let base = cfg.train.for_paradigm(paradigm);
        let seed = derive_seed(
            cfg.master_seed,
            &format!("train/{}/{}", paradigm.as_str(), field.as_str()),
            base.seed,
        );
        let tc = TrainConfig { seed, ..*base };
        log::info!(
            "training {} {} for {} steps",
            paradigm.as_str(),
            field.as_str(),
            tc.steps
        );
        let trained = match paradigm {
            Paradigm::Gencp => train_conditional_velocity(&ds, &tc)?,
            Paradigm::Surrogate => train_surrogate(&ds, &tc)?,
            Paradigm::M2pde => ddpm_train(&ds, &cfg.m2pde.schedule, &tc)?,
        };
        let meta = CheckpointMetadata {
            role: role(paradigm).to_owned(),
            field: field.as_str().to_owned(),
            seed,
            step: tc.steps as u64,
            loss: trained.final_loss(),
            config_hash: Some(ctx.config_hash.clone()),
        };
        let ck_rel = RunContext::checkpoint_rel(paradigm, field);
        Checkpoint::new(&trained.params, Some(&trained.optimizer), meta).write(&ctx.path(&ck_rel))?;
        let loss_rel = format!("models/{}_{}_loss.csv", paradigm.as_str(), field.as_str());
        let prov = ctx
            .provenance()
            .with("paradigm", paradigm.as_str())
            .with("field", field.as_str())
            .with("seed", seed);
        trained.write_loss_curve(&ctx.path(&loss_rel), &prov)?;
        let key = format!("{}_{}", paradigm.as_str(), field.as_str());
        artifacts.push((format!("model/{key}"), ck_rel));
        artifacts.push((format!("loss/{key}"), loss_rel));
        out.push(trained);
    }
    ctx.finish(&format!("train/{}", paradigm.as_str()), start, artifacts)?;
    Ok(out)
}

/// Draws `n` joint samples (the configured count when `None`) from the
/// paradigm's trained pair and writes `samples/<paradigm>.csv`, or
/// `samples/<paradigm>_n<n>.csv` for a non-default count.
pub fn cmd_sample(ctx: &RunContext, paradigm: Paradigm, n: Option<usize>) -> Result<SampleSet> {
    let start = Instant::now();
    ctx.open()?;
    let cfg = &ctx.config;
    let n = n.unwrap_or(cfg.metrics.n_samples);
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mf = ctx.load_model(paradigm, Field::F)?;
    let mg = ctx.load_model(paradigm, Field::G)?;
    let salt = match paradigm {
        Paradigm::Gencp => cfg.sampler.seed,
        Paradigm::M2pde => cfg.m2pde.seed,
        Paradigm::Surrogate => 0,
    };
    let seed = derive_seed(cfg.master_seed, &format!("sample/{}", paradigm.as_str()), salt);
    let mut rng = RngState::new(seed);
    let prov = ctx.provenance().with("paradigm", paradigm.as_str()).with("n", n);
    let (set, prov) = match paradigm {
        Paradigm::Gencp => {
            let scheme = match cfg.sampler.scheme {
                Scheme::LieTrotter => "lie_trotter",
                Scheme::Strang => "strang",
            };
            let set = coupled_sample(&mf, &mg, n, &cfg.sampler, &mut rng)?;
            (set, prov.with("scheme", scheme).with("N", cfg.sampler.n_steps))
        }
        Paradigm::Surrogate => {
            let set = surrogate_sample(&SurrogatePair::new(mf, mg), &cfg.picard, n, &mut rng)?;
            let p = &cfg.picard;
            (
                set,
                prov.with("M", p.max_iters)
                    .with("eps_max", fmt_f64(p.eps_max))
                    .with("alpha", fmt_f64(p.alpha)),
            )
        }
        Paradigm::M2pde => {
            let set = m2pde_compose(&mf, &mg, &cfg.m2pde, n, &mut rng)?;
            (
                set,
                prov.with("T", cfg.m2pde.schedule.steps())
                    .with("K", cfg.m2pde.outer_iters),
            )
        }
    };
    let rel = if n == cfg.metrics.n_samples {
        RunContext::samples_rel(paradigm)
    } else {
        format!("samples/{}_n{n}.csv", paradigm.as_str())
    };
    set.write_csv(&ctx.path(&rel), &prov)?;
    ctx.finish(
        &format!("sample/{}", paradigm.as_str()),
        start,
        vec![(rel.trim_end_matches(".csv").to_owned(), rel)],
    )?;
    Ok(set)
}

/// Compares two sample files and writes `eval/<label>.csv` and `.json`.
pub fn cmd_eval(ctx: &RunContext, a: &Path, b: &Path, label: Option<&str>) -> Result<MetricReport> {
    let start = Instant::now();
    ctx.open()?;
    let sa = SampleSet::read_csv(a)?;
    let sb = SampleSet::read_csv(b)?;
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let label = label
        .map(str::to_owned)
        .unwrap_or_else(|| format!("{}_vs_{}", stem(a), stem(b)));
    if label.is_empty() || label.contains(['/', '\\']) {
        return Err(Error::InvalidArgument(format!("bad eval label {label:?}")));
    }
    let seed = derive_seed(ctx.config.master_seed, "eval", 0);
    let report = MetricReport::compute(&label, &sa, &sb, ctx.config.metrics.w1_subsample, seed)?;
    let csv_rel = format!("eval/{label}.csv");
    let json_rel = format!("eval/{label}.json");
    let prov = ctx
        .provenance()
        .with("a", ctx.display_path(a))
        .with("b", ctx.display_path(b))
        .with("w1_subsample", ctx.config.metrics.w1_subsample);
    MetricReport::write_csv(std::slice::from_ref(&report), &ctx.path(&csv_rel), &prov)?;
    write_once(&ctx.path(&json_rel), report.to_json()?.as_bytes())?;
    ctx.finish(
        &format!("eval/{label}"),
        start,
        vec![
            (format!("eval/{label}"), csv_rel),
            (format!("eval/{label}_json"), json_rel),
        ],
    )?;
    Ok(report)
}

/// Runs the splitting study on the configured Gaussian oracle and writes the
/// per-cell CSV, the summary JSON and a log-log plot under `converge/`.
pub fn cmd_converge(ctx: &RunContext, scheme: Option<Scheme>) -> Result<ConvergenceReport> {
    let start = Instant::now();
    ctx.open()?;
    let c = &ctx.config.converge;
    let scheme = scheme.unwrap_or(c.scheme);
    let name = match scheme {
        Scheme::LieTrotter => "lie_trotter",
        Scheme::Strang => "strang",
    };
    let of = GaussianFlowOracle::scalar(c.mean_f, c.var_f)?;
    let og = GaussianFlowOracle::scalar(c.mean_g, c.var_g)?;
    let study = ctx.config.study_config(scheme);
    let report = convergence_study(&of, &og, &study)?;
    let prov = ctx
        .provenance()
        .with("scheme", name)
        .with("study_seed", study.seed)
        .with("n_samples", study.n_samples)
        .with("replicates", study.replicates);
    let csv_rel = format!("converge/{name}.csv");
    let json_rel = format!("converge/{name}_summary.json");
    let svg_rel = format!("converge/{name}.svg");
    report.write_csv(&ctx.path(&csv_rel), &prov)?;
    write_once(&ctx.path(&json_rel), report.summary_json()?.as_bytes())?;
    write_once(
        &ctx.path(&svg_rel),
        convergence_svg(&report, &study.eps_list).as_bytes(),
    )?;
    ctx.finish(
        &format!("converge/{name}"),
        start,
        vec![
            (format!("converge/{name}"), csv_rel),
            (format!("converge/{name}_summary"), json_rel),
            (format!("converge/{name}_plot"), svg_rel),
        ],
    )?;
    Ok(report)
}

/// One line of the comparison table. Metrics are infinite when sampling
/// produced non-finite states.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub label: String,
    pub w1: f64,
    pub mmd: f64,
    pub energy: f64,
    pub status: String,
}

impl Table1Row {
    fn from_report(r: &MetricReport) -> Self {
        Self {
            label: r.label.clone(),
            w1: r.w1,
            mmd: r.mmd,
            energy: r.energy,
            status: "ok".into(),
        }
    }
}

fn phase<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_phase(name))
}

/// Full pipeline: data, training and sampling for every paradigm, evaluation
/// against the reference. Writes `table1.csv` and `table1.md`. A paradigm
/// whose sampler diverges gets an infinite row instead of aborting the run.
/// The last row compares the two independent reference draws.
pub fn cmd_table1(ctx: &RunContext) -> Result<Vec<Table1Row>> {
    let start = Instant::now();
    phase("gen-data", cmd_gen_data(ctx))?;
    let reference = ctx.path("data/reference.csv");
    let mut rows = Vec::new();
    for p in Paradigm::ALL {
        phase(&format!("train/{}", p.as_str()), cmd_train(ctx, p))?;
        match cmd_sample(ctx, p, None) {
            Ok(_) => {
                let samples = ctx.path(&RunContext::samples_rel(p));
                let r = phase("eval", cmd_eval(ctx, &samples, &reference, Some(p.as_str())))?;
                rows.push(Table1Row::from_report(&r));
            }
            Err(e) => match e.root() {
                Error::NonFiniteState { count, total } => {
                    log::warn!("{} sampler diverged: {count}/{total} non-finite", p.as_str());
                    rows.push(Table1Row {
                        label: p.as_str().to_owned(),
                        w1: f64::INFINITY,
                        mmd: f64::INFINITY,
                        energy: f64::INFINITY,
                        status: format!("non_finite {count}/{total}"),
                    });
                }
                _ => return Err(e.in_phase(format!("sample/{}", p.as_str()))),
            },
        }
    }
    let floor = phase(
        "eval",
        cmd_eval(
            ctx,
            &ctx.path("data/reference_holdout.csv"),
            &reference,
            Some("reference"),
        ),
    )?;
    rows.push(Table1Row::from_report(&floor));

    let prov = ctx.provenance().with("n_samples", ctx.config.metrics.n_samples);
    let csv = render_csv(
        &prov,
        &["paradigm", "w1", "mmd", "energy", "status"],
        rows.iter().map(|r| {
            [
                r.label.clone(),
                fmt_f64(r.w1),
                fmt_f64(r.mmd),
                fmt_f64(r.energy),
                r.status.clone(),
            ]
        }),
    )?;
    write_once(&ctx.path("table1.csv"), &csv)?;
    let mut md = format!(
        "| {} | W1 | MMD | Energy |\n|---|---|---|---|\n",
        ctx.config.distribution.as_str()
    );
    for r in &rows {
        let cell = |x: f64| {
            if x.is_finite() {
                format!("{x:.4}")
            } else {
                "inf".to_owned()
            }
        };
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.label,
            cell(r.w1),
            cell(r.mmd),
            cell(r.energy)
        ));
    }
    write_once(&ctx.path("table1.md"), md.as_bytes())?;
    ctx.finish(
        "table1",
        start,
        vec![
            ("table1".into(), "table1.csv".into()),
            ("table1_md".into(), "table1.md".into()),
        ],
    )?;
    Ok(rows)
}
