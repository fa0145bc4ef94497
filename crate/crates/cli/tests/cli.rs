use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecchia")).current_dir(dir).args(args).output().expect("spawn vecchia")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const GAUSS: &str = r#"
seed = 11
[sites]
grid = 4
[model]
family = "exponential"
lambda = 2.0
[simulate]
n = 60
[fit]
data = "data.csv"
spec = { method = "vecchia", d = 3, ordering = "max_min" }
"#;

#[test]
fn simulate_is_reproducible_and_handles_zero_replicates() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(d, "a.toml", GAUSS);
    ok(d, &["simulate", "--config", "a.toml", "--out", "a"]);
    let first = (fs::read(d.join("a/data.csv")).unwrap(), fs::read(d.join("a/simulate.json")).unwrap());
    ok(d, &["simulate", "--config", "a.toml", "--out", "a"]);
    assert_eq!(first.0, fs::read(d.join("a/data.csv")).unwrap());
    assert_eq!(first.1, fs::read(d.join("a/simulate.json")).unwrap());
    ok(d, &["simulate", "--config", "a.toml", "--out", "b"]);
    assert_eq!(first.0, fs::read(d.join("b/data.csv")).unwrap());
    assert_eq!(fs::read_to_string(d.join("a/data.csv")).unwrap().lines().count(), 61);

    let prov = json(&d.join("a/simulate.json"));
    assert_eq!(prov["provenance"]["seed"], 11);
    assert_eq!(prov["provenance"]["config"]["simulate"]["n"], 60);

    ok(d, &["simulate", "--config", "a.toml", "--out", "z", "--seed", "5"]);
    write(d, "zero.toml", &GAUSS.replace("n = 60", "n = 0"));
    ok(d, &["simulate", "--config", "zero.toml", "--out", "zero"]);
    let header: String = (1..=16).map(|k| k.to_string()).collect::<Vec<_>>().join(",") + "\n";
    assert_eq!(fs::read_to_string(d.join("zero/data.csv")).unwrap(), header);
    assert_ne!(first.0, fs::read(d.join("z/data.csv")).unwrap());
}

#[test]
fn brown_resnick_simulation_has_the_requested_shape() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(
        d,
        "br.toml",
        r#"
        seed = 1
        [sites]
        grid = 10
        [model]
        family = "brown_resnick"
        variogram = "bounded"
        lambda = 5.0
        sigma = 10.0
        [simulate]
        n = 100
        "#,
    );
    ok(d, &["simulate", "--config", "br.toml", "--threads", "1"]);
    let text = fs::read_to_string(d.join("data.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split(',').count() == 100));
    assert!(lines[1..].iter().flat_map(|l| l.split(',')).all(|v| v.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn fit_replays_from_its_own_output() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(d, "g.toml", GAUSS);
    ok(d, &["simulate", "--config", "g.toml"]);
    ok(d, &["fit", "--config", "g.toml", "--out", "f1"]);
    let r1 = json(&d.join("f1/fit.json"));
    assert!(r1["converged"].as_bool().unwrap());
    let lambda = r1["psi_hat"][0].as_f64().unwrap();
    assert!(lambda > 0.5 && lambda < 8.0, "{lambda}");
    assert!(r1["std_err"][0].as_f64().unwrap() > 0.0);
    assert_eq!(r1["provenance"]["command"], "fit");

    ok(d, &["fit", "--config", "f1/fit.json", "--out", "f2"]);
    let r2 = json(&d.join("f2/fit.json"));
    assert_eq!(r1["psi_hat"], r2["psi_hat"]);
    assert_eq!(r1["loglik"], r2["loglik"]);
}

#[test]
fn are_reports_and_sweeps() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(
        d,
        "are.toml",
        r#"
        [sites]
        grid = 5
        [model]
        family = "exponential"
        lambda = 5.0
        [are]
        schemes = [
            { method = "full" },
            { method = "vecchia", d = 2, ordering = "coordinate" },
            { method = "composite", d = 2, delta = 1.0 },
        ]
        sweep = { from = 0.5, to = 10.0, step = 0.5 }
        "#,
    );
    ok(d, &["are", "--config", "are.toml"]);
    let r = json(&d.join("are.json"));
    let reports = r["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0]["overall_are"].as_f64().unwrap(), 100.0);
    assert_eq!(reports[1]["term_count"], 49);
    for key in ["scheme", "psi0", "J", "K", "V", "marginal_are", "overall_are", "term_count", "wall_time_s"] {
        assert!(reports[1].get(key).is_some(), "{key}");
    }
    let v = reports[1]["overall_are"].as_f64().unwrap();
    assert!(v > 50.0 && v < 100.0);

    let sweep = fs::read_to_string(d.join("are_sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 21);
    assert!(lines[0].starts_with("lambda,asd[full],"));
    let full_are: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(full_are.iter().all(|&a| (a - 100.0).abs() < 1e-9));

    write(
        d,
        "ms.toml",
        r#"
        [sites]
        grid = 3
        [model]
        family = "logistic"
        alpha = 0.5
        [are]
        schemes = [{ method = "full" }]
        "#,
    );
    let o = run(d, &["are", "--config", "ms.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported"));
}

const BR_SMALL: &str = r#"
seed = 4
[sites]
grid = 3
[model]
family = "brown_resnick"
variogram = "bounded"
lambda = 2.0
sigma = 3.0
[simulate]
n = 40
[fit]
data = "data.csv"
spec = { method = "vecchia", d = 2, ordering = "coordinate" }
fixed = [false, true]
options = { max_evals = 200, xtol = 1e-4 }
[diag]
fit = "fit.json"
data = "data.csv"
distance_bins = 4
[score]
data = "data.csv"
fits = ["fit.json"]
validation_fraction = 0.25
neighbours = 3
"#;

#[test]
fn max_stable_fit_score_and_diagnostics() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(d, "br.toml", BR_SMALL);
    ok(d, &["simulate", "--config", "br.toml"]);
    ok(d, &["fit", "--config", "br.toml"]);
    let f = json(&d.join("fit.json"));
    assert_eq!(f["fixed"], serde_json::json!([false, true]));
    assert_eq!(f["psi_hat"][1], 3.0);

    ok(d, &["score", "--config", "br.toml"]);
    let s = json(&d.join("score.json"));
    assert_eq!(s["scores"].as_array().unwrap().len(), 2);
    assert_eq!(s["validation_ids"].as_array().unwrap().len(), 3);
    assert!(s["scores"][0]["score"].as_f64().unwrap().is_finite());

    ok(d, &["diag", "--config", "br.toml"]);
    let bins = fs::read_to_string(d.join("diag_bins.csv")).unwrap();
    let rows: Vec<Vec<&str>> = bins.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 13 * 4);
    let directions: Vec<&str> = rows.iter().step_by(4).map(|r| r[0]).collect();
    assert_eq!(directions[0], "all");
    assert_eq!(directions[1..], ["0", "15", "30", "45", "60", "75", "90", "105", "120", "135", "150", "165"]);
    let all_count: usize = rows[..4].iter().map(|r| r[5].parse::<usize>().unwrap()).sum();
    assert_eq!(all_count, 36);

    // isotropic fit: every direction traces the same curve
    let curve = fs::read_to_string(d.join("diag_curve.csv")).unwrap();
    let mut by_dir: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for l in curve.lines().skip(1) {
        let c: Vec<&str> = l.split(',').collect();
        by_dir.entry(c[0].to_string()).or_default().push(c[2].parse().unwrap());
    }
    assert_eq!(by_dir.len(), 12);
    let first = by_dir.values().next().unwrap().clone();
    assert_eq!(first.len(), 50);
    for v in by_dir.values() {
        for (a, b) in v.iter().zip(&first) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn bench_counts_vecchia_terms() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    write(
        d,
        "b.toml",
        r#"
        seed = 2
        [model]
        family = "exponential"
        lambda = 3.0
        [bench]
        sides = [4, 6]
        d = [2, 3]
        reps = 2
        n = 5
        "#,
    );
    ok(d, &["bench", "--config", "b.toml"]);
    let text = fs::read_to_string(d.join("bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let dd: usize = r[0].parse().unwrap();
        assert_eq!(r[2].parse::<usize>().unwrap(), 2 * dd - 1);
    }
}

#[test]
fn exit_codes() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(d, &["simulate", "--config", "missing.toml"]), 4);
    assert_eq!(code(d, &["simulate"]), 2);
    write(d, "bad.toml", "seed = [");
    assert_eq!(code(d, &["simulate", "--config", "bad.toml"]), 2);
    write(d, "typo.toml", &GAUSS.replace("seed = 11", "sede = 11"));
    assert_eq!(code(d, &["simulate", "--config", "typo.toml"]), 2);
    write(d, "noseed.toml", &GAUSS.replace("seed = 11", ""));
    assert_eq!(code(d, &["simulate", "--config", "noseed.toml"]), 2);
    write(d, "neg.toml", &GAUSS.replace("lambda = 2.0", "lambda = -1.0"));
    assert_eq!(code(d, &["simulate", "--config", "neg.toml"]), 2);

    write(d, "g.toml", GAUSS);
    assert_eq!(code(d, &["fit", "--config", "g.toml"]), 4);
    let header: String = (1..=16).map(|k| k.to_string()).collect::<Vec<_>>().join(",");
    let row = |v: &str| vec![v; 16].join(",");
    write(d, "data.csv", &format!("{header}\n{}\n{}\n", row("0.5"), row("NaN")));
    assert_eq!(code(d, &["fit", "--config", "g.toml"]), 3);
    assert_eq!(code(d, &["bogus"]), 2);
}
