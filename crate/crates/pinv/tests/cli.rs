use std::fs;
use std::process::{Command, Output};

const GEO: &str = "var x : bool;\nvar n : int;\nvar p : prob;\nwhile (x == 0) {\n    n = n + 1;\n    x ~ bernoulli(p);\n}\n";

fn pinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinv")).args(args).output().unwrap()
}

fn geo_file(dir: &tempfile::TempDir) -> String {
    let path = dir.path().join("geo.pw");
    fs::write(&path, GEO).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn exact_synthesis_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let file = geo_file(&dir);
    let out = dir.path().join("geo.json");
    let data = dir.path().join("geo.data");
    let o = pinv(&[
        "exact", &file, "--post", "n", "--nstates", "100", "--seed", "1", "--timeout", "120", "--no-timings",
        "--out", out.to_str().unwrap(), "--data-out", data.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["program"].as_str().unwrap().ends_with("geo.pw"));
    assert_eq!(report["invariant"], "n + [x == 0]*p^-1");
    assert!(report["attempts"][0].get("timings").is_none());
    assert!(fs::read_to_string(&data).unwrap().lines().any(|l| l.contains("->")));
}

#[test]
fn verify_reports_the_violation() {
    let dir = tempfile::tempdir().unwrap();
    let file = geo_file(&dir);
    let good = pinv(&["verify", &file, "--post", "n", "--candidate", "n + [x == 0]/p", "--out", "-"]);
    assert_eq!(good.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&good.stdout).contains("verified_exact"));
    let bad = pinv(&["verify", &file, "--post", "n", "--candidate", "n + [x == 0]*(0.95/p)", "--out", "-"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["verdict"]["status"], "refuted");
    let v = report["verdict"]["counterexamples"][0]["violation"].as_f64().unwrap();
    assert!((v - 0.05).abs() < 1e-12, "{v}");
}

#[test]
fn bench_runs_a_named_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinv(&["bench", "--name", "detm", "--nstates", "100", "--timeout", "120", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("detm") && stdout.contains("matches expected"), "{stdout}");
    assert!(dir.path().join("detm-exact.json").exists());
}

#[test]
fn errors_are_reported() {
    let o = pinv(&["bench", "--name", "nosuch"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nosuch"));
    let dir = tempfile::tempdir().unwrap();
    let file = geo_file(&dir);
    let o = pinv(&["exact", &file, "--post", "q"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!o.stderr.is_empty());
}
