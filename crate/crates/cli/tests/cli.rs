use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stabreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stabreg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn gen_is_deterministic_and_rerunnable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let args = |out: &Path| {
        vec![
            "gen".to_string(),
            "--n".into(),
            "100".into(),
            "--p".into(),
            "150".into(),
            "--dist".into(),
            "laplace".into(),
            "--scale".into(),
            "1".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            path(out).into(),
        ]
    };
    let run = |out: &Path| {
        let v = args(out);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&a);
    run(&b);
    same_files(&a, &b);
    ok(&[
        "gen",
        "--config",
        path(&a.join("config.json")),
        "--out",
        path(&c),
    ]);
    same_files(&a, &c);

    let data = fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 101);
    assert_eq!(data.lines().next().unwrap().split(',').count(), 151);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    for args in [
        vec!["gen", "--p", "0", "--out", out],
        vec!["regime", "--out", out],
        vec!["mc", "--p", "3", "--kappa", "0.2", "--out", out],
        vec!["select", "--data", "/nonexistent.csv", "--out", out],
        vec!["gen", "--rho", "1.5", "--out", out],
    ] {
        let res = stabreg(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 30, "p": 4, "seed": 3}"#).unwrap();
    let out = dir.path().join("o");
    ok(&[
        "gen",
        "--config",
        path(&cfg),
        "--p",
        "6",
        "--out",
        path(&out),
    ]);
    let echoed = json(&out.join("config.json"));
    assert_eq!(echoed["n"], 30);
    assert_eq!(echoed["p"], 6);
    assert_eq!(echoed["seed"], 3);

    fs::write(&cfg, r#"{"n": 30, "bogus": 1}"#).unwrap();
    let res = stabreg(&["gen", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn select_report_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen",
        "--n",
        "60",
        "--p",
        "20",
        "--nonzeros",
        "4",
        "--signal",
        "2",
        "--test-n",
        "50",
        "--seed",
        "11",
        "--out",
        path(&g),
    ]);
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    ok(&[
        "select",
        "--data",
        path(&g.join("data.csv")),
        "--test",
        path(&g.join("test.csv")),
        "--folds",
        "5",
        "--out",
        path(&s1),
    ]);
    ok(&[
        "--jobs",
        "1",
        "select",
        "--config",
        path(&s1.join("config.json")),
        "--out",
        path(&s2),
    ]);
    same_files(&s1, &s2);

    let report = json(&s1.join("report.json"));
    for key in [
        "n",
        "p",
        "v",
        "d",
        "tau_cv",
        "tau_escv",
        "model_size_cv",
        "model_size_escv",
        "escv_fell_back",
        "intercept_cv",
        "intercept_escv",
        "selected_cv",
        "selected_escv",
        "test",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["n"], 60);
    assert_eq!(report["v"], 5);
    assert_eq!(report["d"], 12);
    assert!(report["tau_escv"].as_f64().unwrap() <= report["tau_cv"].as_f64().unwrap());
    assert!(report["test"]["mse_cv"].as_f64().unwrap() > 0.0);

    let coefs = fs::read_to_string(s1.join("coefficients.csv")).unwrap();
    assert_eq!(coefs.lines().count(), 22);
    let curves = fs::read_to_string(s1.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "tau,es,z2,cv_error,that");
    assert_eq!(curves.lines().count(), 101);
}

#[test]
fn noiseless_select_has_escv_below_cv() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gen",
        "--n",
        "50",
        "--p",
        "10",
        "--nonzeros",
        "3",
        "--scale",
        "0",
        "--seed",
        "2",
        "--out",
        path(&g),
    ]);
    let s = dir.path().join("s");
    ok(&[
        "select",
        "--data",
        path(&g.join("data.csv")),
        "--folds",
        "5",
        "--out",
        path(&s),
    ]);
    let report = json(&s.join("report.json"));
    assert!(report["tau_escv"].as_f64().unwrap() <= report["tau_cv"].as_f64().unwrap());
}

#[test]
fn regime_squared_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let stdout = ok(&[
        "regime",
        "--loss",
        "l2",
        "--dist",
        "laplace",
        "--kappa",
        "0.5",
        "--out",
        path(&out),
    ]);
    assert!(stdout.contains("kappa=0.5"));
    let report = json(&out.join("regime.json"));
    let r = report["solutions"][0]["r"].as_f64().unwrap();
    assert!((r - 2f64.sqrt()).abs() < 1e-8, "r = {r}");
    let csv = fs::read_to_string(out.join("regime.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",squared,laplace,"));
}

#[test]
fn regime_crossover_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[
        "regime",
        "--crossover",
        "--dist",
        "laplace",
        "--out",
        path(&a),
    ]);
    let report = json(&a.join("regime.json"));
    let k = report["crossover"]["kappa"].as_f64().unwrap();
    assert!((0.25..=0.35).contains(&k), "kappa* = {k}");
    ok(&[
        "regime",
        "--config",
        path(&a.join("config.json")),
        "--out",
        path(&b),
    ]);
    same_files(&a, &b);
}

#[test]
fn regime_gaussian_reports_no_crossover() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let stdout = ok(&[
        "regime",
        "--crossover",
        "--dist",
        "gaussian",
        "--out",
        path(&out),
    ]);
    assert!(stdout.contains("no crossover"));
    let report = json(&out.join("regime.json"));
    assert!(report["crossover"].is_null());
    assert!(report["no_crossover"]["gap_at_lo"].as_f64().unwrap() > 0.0);
}

#[test]
fn mc_lad_check_theory_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&[
        "mc",
        "--loss",
        "lad",
        "--kappa",
        "0.5",
        "--n",
        "200",
        "--replicates",
        "100",
        "--check-theory",
        "--out",
        path(&a),
    ]);
    let line = stdout.lines().find(|l| l.starts_with("theory")).unwrap();
    assert!(line.ends_with("PASS"), "{line}");
    let replicates = fs::read_to_string(a.join("replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 101);
    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["summary"]["p"], 100);
    assert_eq!(summary["agreement"]["pass"], true);

    ok(&[
        "--jobs",
        "2",
        "mc",
        "--config",
        path(&a.join("config.json")),
        "--out",
        path(&b),
    ]);
    same_files(&a, &b);
}
