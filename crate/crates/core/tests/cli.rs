use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splitflow::experiment::{Distribution, ExperimentConfig, RunContext};
use splitflow::net::Checkpoint;
use splitflow::rng::derive_seed;
use splitflow::{NetConfig, NetParams, RngState, SampleSet};

const BIN: &str = env!("CARGO_BIN_EXE_splitflow");

fn tiny_net(input_dim: usize) -> NetConfig {
    NetConfig {
        input_dim,
        output_dim: 1,
        hidden_width: 12,
        hidden_layers: 2,
        time_feature_dim: 4,
    }
}

fn tiny_config(distribution: Distribution, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(distribution);
    cfg.data.n_f = 400;
    cfg.data.n_g = 300;
    cfg.data.n_reference = 250;
    for (t, d) in [
        (&mut cfg.train.gencp, 2),
        (&mut cfg.train.surrogate, 1),
        (&mut cfg.train.m2pde, 2),
    ] {
        t.steps = steps;
        t.batch_size = 32;
        t.net = tiny_net(d);
    }
    cfg.sampler.n_steps = 8;
    cfg.picard.max_iters = 5;
    cfg.m2pde.schedule = splitflow::baselines::DiffusionSchedule::linear(20, 1e-4, 0.2).unwrap();
    cfg.metrics.n_samples = 150;
    cfg.metrics.w1_subsample = 100;
    cfg.converge.n_samples = 128;
    cfg.converge.w1_subsample = 128;
    cfg.converge.replicates = 2;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.in.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--config").arg(config).arg("--out").arg(out).args(args);
    cmd.env("RUST_LOG", "warn");
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.push(p.strip_prefix(dir).unwrap().to_owned());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn every_command_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(Distribution::Complex, 30));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(run(&cfg, out, &["gen-data"]));
        for p in ["gencp", "surrogate", "m2pde"] {
            ok(run(&cfg, out, &["train", "--paradigm", p]));
            ok(run(&cfg, out, &["sample", "--paradigm", p]));
        }
        ok(run(&cfg, out, &["sample", "--paradigm", "gencp", "--n", "17"]));
        let s = out.join("samples/gencp.csv");
        let r = out.join("data/reference.csv");
        ok(run(
            &cfg,
            out,
            &["eval", "--a", s.to_str().unwrap(), "--b", r.to_str().unwrap()],
        ));
        ok(run(&cfg, out, &["converge"]));
        ok(run(&cfg, out, &["converge", "--scheme", "strang"]));
    }
    let csvs = files(&a, "csv");
    assert!(csvs.len() >= 17, "{csvs:?}");
    assert_eq!(csvs, files(&b, "csv"));
    for rel in csvs
        .iter()
        .chain(files(&a, "json").iter().filter(|p| !p.ends_with("manifest.json")))
    {
        assert_eq!(
            std::fs::read(a.join(rel)).unwrap(),
            std::fs::read(b.join(rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
    // Re-running into the same directory is a no-op.
    ok(run(&cfg, &a, &["gen-data"]));
    ok(run(&cfg, &a, &["sample", "--paradigm", "m2pde"]));
}

#[test]
fn table1_writes_rows_and_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(Distribution::Easy, 40));
    let out = tmp.path().join("run");
    let stdout = ok(run(&cfg, &out, &["table1"]));
    assert!(stdout.starts_with("paradigm,w1,mmd,energy,status\n"), "{stdout}");
    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    let labels: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["gencp", "m2pde", "surrogate", "reference"]);
    let gencp: Vec<f64> = rows[0].split(',').skip(1).take(3).map(|x| x.parse().unwrap()).collect();
    assert!(gencp.iter().all(|x| x.is_finite() && *x >= 0.0), "{gencp:?}");
    assert!(std::fs::read_to_string(out.join("table1.md"))
        .unwrap()
        .contains("| gencp |"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.len() >= 25);
    for rel in artifacts.values() {
        assert!(out.join(rel.as_str().unwrap()).is_file(), "{rel}");
    }
    for key in ["gen-data", "train/gencp", "sample/m2pde", "table1"] {
        assert!(manifest["timings"][key].as_f64().unwrap() >= 0.0);
    }
    let hash = manifest["config_hash"].as_str().unwrap();
    let sample_text = std::fs::read_to_string(out.join("samples/gencp.csv")).unwrap();
    for needle in [
        format!("# config_hash={hash}"),
        "# master_seed=0".into(),
        "# software_version=splitflow".into(),
    ] {
        assert!(sample_text.contains(&needle), "missing {needle}");
    }
    for needle in ["# paradigm=gencp", "# N=8", "# scheme=lie_trotter"] {
        assert!(sample_text.contains(needle), "missing {needle}");
    }
    let m2 = std::fs::read_to_string(out.join("samples/m2pde.csv")).unwrap();
    assert!(m2.contains("# T=20") && m2.contains("# K=2"));
    let sur = std::fs::read_to_string(out.join("samples/surrogate.csv")).unwrap();
    assert!(sur.contains("# M=5"));
}

#[test]
fn seed_flag_changes_artifacts_and_guards_the_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(Distribution::Easy, 0));
    let a = tmp.path().join("a");
    ok(run(&cfg, &a, &["gen-data"]));
    let b = tmp.path().join("b");
    let mut cmd = Command::new(BIN);
    let out = cmd
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .args(["--seed", "9", "gen-data"])
        .output()
        .unwrap();
    ok(out);
    assert_ne!(
        std::fs::read(a.join("data/d_f.csv")).unwrap(),
        std::fs::read(b.join("data/d_f.csv")).unwrap()
    );
    let clash = Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&a)
        .args(["--seed", "9", "gen-data"])
        .output()
        .unwrap();
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let missing = run(&tmp.path().join("absent.json"), &out, &["gen-data"]);
    assert_eq!(missing.status.code(), Some(3));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"format_version": 1, "distribution": "easy", "bogus": true}"#).unwrap();
    assert_eq!(run(&bad, &out, &["gen-data"]).status.code(), Some(2));

    let mut unequal = tiny_config(Distribution::Easy, 10);
    unequal.train.m2pde.steps = 11;
    let cfg = write_config(tmp.path(), &unequal);
    let r = run(&cfg, &out, &["gen-data"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("train.m2pde.steps"));

    let cfg = write_config(tmp.path(), &tiny_config(Distribution::Easy, 10));
    assert_eq!(
        run(&cfg, &out, &["train", "--paradigm", "gencp"]).status.code(),
        Some(3)
    );
    assert_eq!(
        run(&cfg, &out, &["sample", "--paradigm", "gencp"]).status.code(),
        Some(3)
    );
}

#[test]
fn diverging_sampler_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Distribution::Easy, 0);
    cfg.sampler.n_steps = 4;
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("run");
    // Hidden units saturate at tanh(1) and the output layer sums them with
    // weights near f64::MAX, so every velocity overflows to infinity.
    let ctx = RunContext::new(ExperimentConfig {
        output_dir: Some(out.clone()),
        ..cfg.clone()
    })
    .unwrap();
    for field in ["f", "g"] {
        let mut p = NetParams::zeros(cfg.train.gencp.net).unwrap();
        let mut slices = p.slices_mut();
        let n = slices.len();
        for (i, s) in slices.iter_mut().enumerate() {
            let value = match (i >= n - 2, i % 2 == 1) {
                (true, _) => 1e308,
                (false, true) => 1.0,
                (false, false) => 0.0,
            };
            s.fill(value);
        }
        let ck = Checkpoint::new(&p, None, Default::default());
        let path = ctx.path(&format!("models/gencp_{field}.json"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        ck.write(&path).unwrap();
    }
    let r = run(&path, &out, &["sample", "--paradigm", "gencp"]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("150"));
}

fn write_points(path: &Path, pts: &[[f64; 2]]) {
    let mut s = String::from("f,g\n");
    for p in pts {
        s.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    std::fs::write(path, s).unwrap();
}

fn eval_report(cfg: &Path, out: &Path, a: &Path, b: &Path, label: &str) -> serde_json::Value {
    ok(run(
        cfg,
        out,
        &[
            "eval",
            "--a",
            a.to_str().unwrap(),
            "--b",
            b.to_str().unwrap(),
            "--label",
            label,
        ],
    ));
    serde_json::from_str(&std::fs::read_to_string(out.join(format!("eval/{label}.json"))).unwrap()).unwrap()
}

#[test]
fn eval_closed_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(Distribution::Easy, 0));
    let out = tmp.path().join("run");
    ok(run(&cfg, &out, &["gen-data"]));
    let reference = out.join("data/reference.csv");
    let r = eval_report(&cfg, &out, &reference, &reference, "self");
    for key in ["w1", "mmd", "energy"] {
        assert_eq!(r[key].as_f64().unwrap(), 0.0, "{key}");
    }
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    write_points(&a, &[[0.0, 0.0]]);
    write_points(&b, &[[3.0, 4.0]]);
    let r = eval_report(&cfg, &out, &a, &b, "singletons");
    assert_eq!(r["w1"].as_f64().unwrap(), 5.0);
    assert!((r["energy"].as_f64().unwrap() - 10.0).abs() < 1e-12);
    assert!(r["subsample_seed"].as_u64().is_some());
    let csv = std::fs::read_to_string(out.join("eval/singletons.csv")).unwrap();
    assert!(csv.contains("# a=") && csv.contains("label,w1,mmd,energy,n_a,n_b,bandwidth,seed"));

    let broken = tmp.path().join("broken.csv");
    std::fs::write(&broken, "f,g\n1,2\n3,oops\n").unwrap();
    let e = run(
        &cfg,
        &out,
        &["eval", "--a", broken.to_str().unwrap(), "--b", a.to_str().unwrap()],
    );
    assert!(!e.status.success());
    assert!(
        String::from_utf8_lossy(&e.stderr).contains("broken.csv:3:"),
        "{}",
        String::from_utf8_lossy(&e.stderr)
    );
}

#[test]
fn independent_reference_draws_sit_at_the_noise_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = tiny_config(Distribution::Easy, 0);
    c.data.n_reference = 2048;
    c.metrics.w1_subsample = 2048;
    let cfg = write_config(tmp.path(), &c);
    let out = tmp.path().join("run");
    ok(run(&cfg, &out, &["gen-data"]));
    let r = eval_report(
        &cfg,
        &out,
        &out.join("data/reference_holdout.csv"),
        &out.join("data/reference.csv"),
        "floor",
    );
    let w1 = r["w1"].as_f64().unwrap();
    // Same-law empirical W1 at n = 2048 in 2-D is a few hundredths to a tenth or two.
    assert!(w1 > 0.0 && w1 < 0.25, "{w1}");
    assert!(r["mmd"].as_f64().unwrap() < 0.01);
}

#[test]
fn converge_outputs_have_the_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config(Distribution::Easy, 0);
    let cfg = write_config(tmp.path(), &c);
    let out = tmp.path().join("run");
    let stdout = ok(run(&cfg, &out, &["converge"]));
    assert!(stdout.contains("fitted_order=Some("), "{stdout}");
    let csv = std::fs::read_to_string(out.join("converge/lie_trotter.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "N,tau,eps_f,eps_g,replicate,w1_error");
    assert_eq!(
        lines.count(),
        c.converge.n_list.len() * c.converge.eps_list.len() * c.converge.replicates
    );

    let svg = std::fs::read_to_string(out.join("converge/lie_trotter.svg")).unwrap();
    assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), c.converge.eps_list.len());
    assert_eq!(svg.matches("<polyline").count(), svg.matches("</polyline>").count());
    assert!(svg.contains("stroke-dasharray"), "fitted line missing");
    assert_eq!(
        svg.matches("<!-- data ").count(),
        c.converge.n_list.len() * c.converge.eps_list.len()
    );
    let opens = svg.matches("<svg").count();
    assert_eq!(opens, svg.matches("</svg>").count());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("converge/lie_trotter_summary.json")).unwrap()).unwrap();
    for key in ["fitted_order", "fitted_constant", "noise_floor"] {
        assert!(summary[key].is_number(), "{key}");
    }
}

#[test]
fn zero_step_training_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tiny_config(Distribution::Easy, 0);
    let cfg = write_config(tmp.path(), &c);
    let out = tmp.path().join("run");
    ok(run(&cfg, &out, &["gen-data"]));
    for (p, tc) in [
        ("gencp", c.train.gencp),
        ("surrogate", c.train.surrogate),
        ("m2pde", c.train.m2pde),
    ] {
        ok(run(&cfg, &out, &["train", "--paradigm", p]));
        for field in ["f", "g"] {
            let ck = Checkpoint::read(&out.join(format!("models/{p}_{field}.json"))).unwrap();
            let seed = derive_seed(c.master_seed, &format!("train/{p}/{field}"), tc.seed);
            assert_eq!(ck.metadata.seed, seed);
            let init = NetParams::init(tc.net, &mut RngState::new(derive_seed(seed, "init", 0))).unwrap();
            assert_eq!(ck.params().unwrap().flat(), init.flat(), "{p} {field}");
        }
    }
    let samples = SampleSet::read_csv(&out.join("data/reference.csv")).unwrap();
    assert_eq!(samples.len(), c.data.n_reference);
}
