use std::fs;
use std::path::Path;
use std::process::Command;

use prnpe_cli::{parse_config, plot_report, pseudo_truth, read_summary, run_experiment, RunConfig, TaskKind};
use prnpe_core::models::weibull_pseudo_true;
use prnpe_core::pipeline::MethodKind;

const BIN: &str = env!("CARGO_BIN_EXE_prnpe");

fn overrides(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Small settings so a replicate takes seconds.
const SMALL: &[&str] = &[
    "budget=3000",
    "posterior_samples=300",
    "ppd_draws=100",
    "smc.population=600",
    "forest.n_trees=30",
    "flow.layers=2",
    "flow.hidden=16",
    "train.learning_rate=0.003",
    "train.max_epochs=40",
    "train.patience=5",
    "nuts.warmup=200",
    "nuts.samples=300",
    "weibull.n=100",
];

fn small(extra: &[&str]) -> RunConfig {
    let mut all = overrides(SMALL);
    all.extend(overrides(extra));
    parse_config(None, &all).unwrap()
}

#[test]
fn empty_config_gives_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    fs::write(&path, "").unwrap();
    let cfg = parse_config(Some(&path), &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.train.learning_rate, 5e-4);
    assert_eq!(cfg.forest.n_trees, 800);
    assert_eq!(cfg.error_model.sigma_spike, 0.01);
    assert_eq!(cfg.error_model.sigma_slab, 0.25);
    assert_eq!(cfg.smc.population, 4000);
    assert_eq!(cfg.smc.alpha, 0.5);
    assert_eq!(cfg.budget, 20_000);
    assert_eq!(cfg.posterior_samples, 2000);
    assert_eq!(cfg.flow.layers, 8);
    assert_eq!(cfg.flow.hidden, 128);
    assert_eq!(cfg.methods, MethodKind::ALL.to_vec());
}

#[test]
fn overrides_win_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "task = \"svar\"\nreplicates = 3\n\n[smc]\nalpha = 0.4\npopulation = 1000\n").unwrap();
    let cfg = parse_config(Some(&path), &overrides(&["smc.alpha=0.3", "methods=[\"npe\", \"prnpe-rf\"]"])).unwrap();
    assert_eq!(cfg.smc.alpha, 0.3);
    assert_eq!(cfg.smc.population, 1000);
    assert_eq!(cfg.task, TaskKind::Svar);
    assert_eq!(cfg.replicates, 3);
    assert_eq!(cfg.methods, vec![MethodKind::Npe, MethodKind::PrnpeRf]);
    let cfg = parse_config(None, &overrides(&["task=linear-gaussian-toy", "flow.spline.bins=6"])).unwrap();
    assert_eq!(cfg.task, TaskKind::LinearGaussianToy);
    assert_eq!(cfg.flow.spline.bins, 6);
}

#[test]
fn json_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, r#"{"task": "weibull", "seed": 11, "nuts": {"max_depth": 8}}"#).unwrap();
    let cfg = parse_config(Some(&path), &[]).unwrap();
    assert_eq!((cfg.seed, cfg.nuts.max_depth), (11, 8));
}

#[test]
fn config_errors_name_the_key() {
    let err = |o: &[&str]| parse_config(None, &overrides(o)).unwrap_err().to_string();
    assert!(err(&["smc.alpha=1.5"]).contains("smc.alpha"));
    assert!(err(&["smc.alpha=high"]).contains("smc.alpha"));
    assert!(err(&["smc.bogus=1"]).contains("smc") && err(&["smc.bogus=1"]).contains("bogus"));
    assert!(err(&["nonsense=1"]).contains("nonsense"));
    assert!(err(&["methods=[]"]).contains("methods"));
    assert!(err(&["methods=[\"mystery\"]"]).contains("methods"));
    assert!(err(&["budget=0"]).to_lowercase().contains("budget"));
    assert!(err(&["train.learning_rate=-1"]).contains("learning_rate"));
    assert!(err(&["noequals"]).contains("key=value"));
    assert!(err(&["smc=3"]).contains("smc"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[forest]\nn_trees = \"many\"\n").unwrap();
    assert!(parse_config(Some(&path), &[]).unwrap_err().to_string().contains("forest.n_trees"));
    assert!(parse_config(Some(&dir.path().join("missing.toml")), &[]).is_err());
}

#[test]
fn output_dir_resolution() {
    let mut cfg = RunConfig::default();
    cfg.resolve_output_dir(Some("flagged".into()));
    assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("flagged")));
    let mut cfg = RunConfig { output_dir: Some("configured".into()), ..RunConfig::default() };
    cfg.resolve_output_dir(None);
    assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("configured")));
}

#[test]
fn pseudo_truth_verb_prints_the_oracle() {
    let out = Command::new(BIN).arg("pseudo-truth").output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let k = v["theta_star"][0].as_f64().unwrap();
    assert!((k - 0.789).abs() < 0.005, "{k}");
    assert_eq!(pseudo_truth(&RunConfig::default()).theta_star, weibull_pseudo_true(&Default::default()).theta_star);

    let out = Command::new(BIN).args(["pseudo-truth", "smc.alpha=1.5"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("smc.alpha"));
}

#[test]
fn run_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&["seed=7", "replicates=2", "methods=[\"prnpe-rf\", \"npe\"]"]);
    cfg.resolve_output_dir(Some(dir.path().join("a")));
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.success(), "{:?}", outcome.failures);
    let task_dir = dir.path().join("a").join("weibull");
    for m in ["prnpe-rf", "npe"] {
        for seed in [7, 8] {
            let text = fs::read_to_string(task_dir.join(m).join(format!("{seed}.json"))).unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["status"], "ok");
            let echo: RunConfig = serde_json::from_value(v["config"].clone()).unwrap();
            assert_eq!(echo, cfg);
            assert_eq!(v["report"]["seed"], seed);
            assert_eq!(v["report"]["draws"].as_array().unwrap().len(), 300);
        }
    }
    let rows = read_summary(&task_dir.join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].method.as_str(), rows[1].method.as_str()), ("prnpe-rf", "npe"));
    assert!(rows.iter().all(|r| r.replicates == 2 && r.failed == 0));
    assert!(rows.iter().all(|r| r.rmse.unwrap() >= r.bias.unwrap().abs()));

    let first = fs::read(task_dir.join("summary.csv")).unwrap();
    let report = fs::read(task_dir.join("prnpe-rf").join("8.json")).unwrap();
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.success());
    assert_eq!(fs::read(task_dir.join("summary.csv")).unwrap(), first);
    assert_eq!(fs::read(task_dir.join("prnpe-rf").join("8.json")).unwrap(), report);

    // Same seeds in another directory with two workers: identical table.
    let mut cfg2 = RunConfig { workers: 2, ..cfg.clone() };
    cfg2.resolve_output_dir(Some(dir.path().join("b")));
    run_experiment(&cfg2).unwrap();
    assert_eq!(fs::read(dir.path().join("b").join("weibull").join("summary.csv")).unwrap(), first);
}

#[test]
fn binary_run_exit_codes_and_env_outdir() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run".to_string(), "task=linear-gaussian-toy".into(), "methods=[\"npe\"]".into()];
    args.extend(overrides(SMALL));
    let out = Command::new(BIN).args(&args).env("PRNPE_OUTDIR", dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("linear-gaussian-toy/npe/0.json").exists());
    assert!(dir.path().join("linear-gaussian-toy/summary.csv").exists());

    // A budget below the SMC population fails that method: reports are still
    // written and the exit code is nonzero.
    let mut args = vec!["run".to_string(), "task=linear-gaussian-toy".into(), "methods=[\"npe\", \"pnpe-smc\"]".into()];
    args.extend(overrides(SMALL));
    args.push("smc.population=5000".into());
    let out = Command::new(BIN).args(&args).arg("-o").arg(dir.path().join("fail")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pnpe-smc seed 0 failed"));
    let failed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fail/linear-gaussian-toy/pnpe-smc/0.json")).unwrap())
            .unwrap();
    assert_eq!(failed["status"], "failed");
    assert!(failed["error"].as_str().unwrap().contains("budget"));
    let ok: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fail/linear-gaussian-toy/npe/0.json")).unwrap()).unwrap();
    assert_eq!(ok["status"], "ok");

    let out = Command::new(BIN).args(["run", "methods=[]"]).arg("-o").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
}

fn attr(node: &roxmltree::Node, name: &str) -> f64 {
    node.attribute(name).unwrap().parse().unwrap()
}

#[test]
fn plots_are_well_formed_and_mark_the_pseudo_truth() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&["methods=[\"prnpe-smc\"]"]);
    cfg.resolve_output_dir(Some(dir.path().to_path_buf()));
    assert!(run_experiment(&cfg).unwrap().success());
    let report = dir.path().join("weibull/prnpe-smc/0.json");
    let out = dir.path().join("plots");
    let status = Command::new(BIN).arg("plot").arg(&report).arg("-o").arg(&out).status().unwrap();
    assert!(status.success());
    let files = plot_report(&report, Some(&out)).unwrap();
    assert_eq!(files.len(), 2);

    let k_star = weibull_pseudo_true(&cfg.weibull).theta_star[0];
    let text = fs::read_to_string(&files[0]).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let frame = doc.descendants().find(|n| n.attribute("id") == Some("frame")).unwrap();
    let (lo, hi) = (attr(&frame, "data-x-lo"), attr(&frame, "data-x-hi"));
    let line = doc.descendants().find(|n| n.attribute("class") == Some("truth")).unwrap();
    assert_eq!(attr(&line, "data-value"), k_star);
    let expected = prnpe_cli::plot::MARGIN + (k_star - lo) / (hi - lo) * (prnpe_cli::plot::WIDTH - 2.0 * prnpe_cli::plot::MARGIN);
    assert!((attr(&line, "x1") - expected).abs() < 1e-9);
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("density")));

    let text = fs::read_to_string(&files[1]).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("observed")));
    assert!(doc.descendants().filter(|n| n.has_tag_name("circle")).count() > 10);

    let status = Command::new(BIN).arg("plot").arg(dir.path().join("nope.json")).status().unwrap();
    assert!(!status.success());
    assert!(prnpe_cli::plot::density_svg("empty", &[], 1.0).is_err());
    assert!(prnpe_cli::plot::density_svg("nan", &[f64::NAN], 1.0).is_err());
}

#[test]
fn density_curve_integrates_to_one() {
    let samples: Vec<f64> = (0..500).map(|i| ((i as f64 + 0.5) / 500.0 - 0.5) * 2.0).collect();
    let curve = prnpe_cli::plot::kde(&samples, -3.0, 3.0, 2001);
    let dx = 6.0 / 2000.0;
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * dx).sum();
    assert!((area - 1.0).abs() < 1e-3, "{area}");
}

#[test]
fn diagnostics_verb_reports_each_design() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["diagnostics".to_string()];
    args.extend(overrides(SMALL));
    let out = Command::new(BIN).args(&args).arg("--dump").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let designs = v.as_array().unwrap();
    assert_eq!(designs.len(), 3);
    assert_eq!(designs[0]["preconditioner"], "uniform");
    for d in designs {
        assert!(d["gap"]["first"].as_f64().unwrap() >= 0.0);
        assert!(d["ess"].as_f64().unwrap() > 0.0);
    }
    let smc = fs::read_to_string(dir.path().join("smc.csv")).unwrap();
    assert!(smc.lines().next().unwrap().ends_with("weight,discrepancy"));
    assert_eq!(smc.lines().count(), 601);
    let forest = fs::read_to_string(dir.path().join("forest.csv")).unwrap();
    let total: f64 = forest.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}
