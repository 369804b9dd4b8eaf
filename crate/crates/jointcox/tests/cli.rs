use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jointcox::io::{read_json, FitOutput, Manifest};
use jointcox::jointcox_core::fit::observed_loglik;
use jointcox::jointcox_core::{Dataset, Theta, VarianceReport};

fn jointcox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointcox"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn simulate(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let config = dir.join(format!("sim{seed}.json"));
    write(&config, &format!(r#"{{"n": {n}, "seed": {seed}}}"#));
    let out = dir.join(format!("data{seed}"));
    let res = jointcox(&["simulate", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn simulate_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), 40, 3);
    let config = dir.path().join("sim3.json");
    let b = dir.path().join("again");
    assert_eq!(
        code(&jointcox(&[
            "simulate",
            "--config",
            p(&config),
            "--out",
            p(&b)
        ])),
        0
    );
    for f in [
        "dataset.json",
        "subjects.csv",
        "measurements.csv",
        "truths.csv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest: Manifest = read_json(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.n, 40);
    assert_eq!(manifest.seed, 3);
}

#[test]
fn fit_output_reproduces_its_loglik() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 80, 11);
    let out = dir.path().join("fit");
    let res = jointcox(&[
        "fit",
        "--data",
        p(&data.join("dataset.json")),
        "--out",
        p(&out),
        "--dump-atoms",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let fit: FitOutput = read_json(&out.join("fit.json")).unwrap();
    assert!(fit.converged);
    let dataset: Dataset = read_json(&data.join("dataset.json")).unwrap();
    let theta = Theta {
        alpha: fit.alpha.unwrap(),
        beta: fit.beta,
        hazard: fit.hazard.clone(),
    };
    let ll = observed_loglik(&dataset, &theta, 40).unwrap();
    assert!((ll - fit.loglik_trace.last().unwrap()).abs() <= 1e-10);
    let var: VarianceReport = read_json(&out.join("variance.json")).unwrap();
    assert!(var.var_beta_simple > 0.0);
    assert!(out.join("atoms.json").exists());
}

#[test]
fn csv_input_matches_json_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 60, 5);
    let from_json = dir.path().join("j");
    let from_csv = dir.path().join("c");
    assert_eq!(
        code(&jointcox(&[
            "fit",
            "--data",
            p(&data.join("dataset.json")),
            "--out",
            p(&from_json)
        ])),
        0
    );
    let res = jointcox(&[
        "fit",
        "--data",
        p(&data.join("subjects.csv")),
        "--measurements",
        p(&data.join("measurements.csv")),
        "--grid-step",
        "0.25",
        "--tau",
        "3",
        "--out",
        p(&from_csv),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read(from_json.join("fit.json")).unwrap(),
        fs::read(from_csv.join("fit.json")).unwrap()
    );
}

#[test]
fn lvcf_fit_has_no_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 60, 6);
    let out = dir.path().join("lvcf");
    let res = jointcox(&[
        "fit",
        "--data",
        p(&data.join("dataset.json")),
        "--method",
        "lvcf",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&res), 0);
    let fit: FitOutput = read_json(&out.join("fit.json")).unwrap();
    assert_eq!(fit.method, "lvcf-cox");
    assert!(fit.alpha.is_none());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("o");
    assert_eq!(
        code(&jointcox(&[
            "simulate",
            "--config",
            p(&missing),
            "--out",
            p(&out)
        ])),
        4
    );

    let bad = dir.path().join("bad.json");
    write(&bad, r#"{"n": 0}"#);
    assert_eq!(
        code(&jointcox(&[
            "simulate",
            "--config",
            p(&bad),
            "--out",
            p(&out)
        ])),
        2
    );

    let data = simulate(dir.path(), 30, 8);
    let frozen = dir.path().join("frozen.json");
    write(&frozen, r#"{"beta_bound": 0.0}"#);
    let lvcf_frozen = jointcox(&[
        "fit",
        "--data",
        p(&data.join("dataset.json")),
        "--method",
        "lvcf",
        "--config",
        p(&frozen),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&lvcf_frozen), 2);

    let starved = dir.path().join("starved.json");
    write(&starved, r#"{"max_iter": 1}"#);
    let res = jointcox(&[
        "fit",
        "--data",
        p(&data.join("dataset.json")),
        "--config",
        p(&starved),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&res), 3);
    // partial output is still written
    let fit: FitOutput = read_json(&out.join("fit.json")).unwrap();
    assert!(!fit.converged);
}

#[test]
fn study_reports_are_reproducible_and_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    write(
        &config,
        r#"{"sim": {"n": 50, "seed": 4}, "replications": 4, "estimators": ["npml", "lvcf"]}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = jointcox(&["mc-study", "--config", p(&config), "--out", p(out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["report.csv", "replications.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let res = jointcox(&[
        "compare",
        "--report",
        p(&a.join("report.csv")),
        p(&b.join("report.csv")),
    ]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("npml") && text.contains("lvcf"));
}
