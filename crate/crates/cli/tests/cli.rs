use std::process::{Command, Output};

fn cgkahler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgkahler"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const MINIMAL: &str =
    "name = \"t\"\nseed = 2\n[geometry]\nbackend = \"torus\"\nresolution = 16\npotential = \"0\"\n";

fn scenario_file(dir: &tempfile::TempDir, text: &str) -> String {
    let path = dir.path().join("s.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_flat_torus_reports_to_stdout() {
    let out = cgkahler(&["verify", "--scenario", "flat_torus", "--json", "-"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = stdout_json(&out);
    assert_eq!(report["total"], 10);
    assert_eq!(report["passed"], 10);
    assert_eq!(report["pass"], true);
    for c in report["checks"].as_array().unwrap() {
        assert!(c["residual"].as_f64().unwrap() <= 1e-10, "{c}");
        assert!(!c["anchor"].as_str().unwrap().is_empty());
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("10/10 checks pass"));
}

#[test]
fn unknown_check_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_file(
        &dir,
        &format!("{MINIMAL}[[check]]\nname = \"kernel\"\n[[check]]\nname = \"nonsense\"\n"),
    );
    let out = cgkahler(&["verify", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("check[1].name") && err.contains("nonsense"),
        "{err}"
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn syntax_error_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_file(&dir, &format!("{MINIMAL}[[check]]\nname = kernel\n"));
    let out = cgkahler(&["verify", "--scenario", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 8"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn failed_check_exits_1_and_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{MINIMAL}alternate_potential = \"0.01*cos(2*pi*x1)\"\n[[check]]\nname = \"kernel\"\n\
         [[check]]\nname = \"equivariance\"\ntolerance = 1e-300\n"
    );
    let path = scenario_file(&dir, &text);
    let report = dir.path().join("r.json");
    let out = cgkahler(&[
        "verify",
        "--scenario",
        &path,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["passed"], 1);
    assert_eq!(r["checks"][1]["pass"], false);
}

#[test]
fn computation_errors_become_failed_records() {
    // g = 2 - π² cos 2πx1 is not positive definite.
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("\"0\"", "\"0.5*cos(2*pi*x1)\"");
    let path = scenario_file(&dir, &format!("{text}[[check]]\nname = \"kernel\"\n"));
    let out = cgkahler(&["verify", "--scenario", &path, "--json", "-"]);
    assert_eq!(out.status.code(), Some(1));
    let r = stdout_json(&out);
    assert!(r["checks"][0]["residual"].is_null());
    assert!(
        r["checks"][0]["detail"]
            .as_str()
            .unwrap()
            .starts_with("error:"),
        "{}",
        r["checks"][0]
    );
}

#[test]
fn reports_are_identical_across_thread_counts() {
    for name in ["flat_torus", "cp1"] {
        let one = cgkahler(&[
            "--threads",
            "1",
            "verify",
            "--scenario",
            name,
            "--json",
            "-",
        ]);
        let eight = cgkahler(&[
            "--threads",
            "8",
            "verify",
            "--scenario",
            name,
            "--json",
            "-",
        ]);
        assert_eq!(one.status.code(), Some(0));
        assert_eq!(one.stdout, eight.stdout, "{name}");
    }
}

#[test]
fn seed_override_changes_hash_and_samples() {
    let a = stdout_json(&cgkahler(&[
        "verify",
        "--scenario",
        "flat_torus",
        "--json",
        "-",
    ]));
    let b = stdout_json(&cgkahler(&[
        "verify",
        "--scenario",
        "flat_torus",
        "--json",
        "-",
        "--seed",
        "99",
    ]));
    assert_eq!(b["seed"], 99);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["checks"][0]["lhs"], b["checks"][0]["lhs"]);
}

#[test]
fn mu_on_cp1_is_constant() {
    let out = cgkahler(&["mu", "--scenario", "cp1.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let s = stdout_json(&out);
    assert!(s["relative_stddev"].as_f64().unwrap() < 1e-6, "{s}");
    assert!(s["mean"].as_f64().unwrap().abs() < 1e-6, "{s}");
    assert!((s["volume"].as_f64().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-10);
}

#[test]
fn mu_dumps_fields() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mu.csv");
    let out = cgkahler(&[
        "mu",
        "--scenario",
        "perturbed_torus",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x1,x2,mu_re,mu_im,"), "{}", &text[..80]);
    assert_eq!(text.lines().count(), 64 * 64 + 1);
}

#[test]
fn fut_on_f1_is_nonzero_and_potential_independent() {
    let out = cgkahler(&["fut", "--scenario", "f1_blowup"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = stdout_json(&out);
    for row in rows.as_array().unwrap() {
        let (a, b) = (
            row["primary"].as_f64().unwrap(),
            row["alternate"].as_f64().unwrap(),
        );
        assert!(a.abs() > 1.0 && (a - b).abs() < 1e-5 * a.abs(), "{row}");
    }
}

#[test]
fn flow_streams_csv_trace() {
    let out = cgkahler(&["flow", "--scenario", "perturbed", "--steps", "3"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,phi,residual,eta,min_metric_eig"));
    let phis: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(phis.len(), 4);
    assert!(phis.windows(2).all(|w| w[1] < w[0]), "{phis:?}");
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["steps"], 3);
}

#[test]
fn flow_on_toric_scenario_is_an_error() {
    let out = cgkahler(&["flow", "--scenario", "cp1", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("torus"));
}

#[test]
fn spectrum_on_flat_torus_starts_at_lowest_multiplier() {
    let out = cgkahler(&["spectrum", "--scenario", "flat_torus", "--count", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let vals = stdout_json(&out)["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect::<Vec<_>>();
    assert_eq!(vals.len(), 20);
    let lowest = 2.0 * std::f64::consts::PI.powi(6);
    assert!(
        (vals[0] - lowest).abs() < 1e-9 * lowest && vals.iter().all(|&v| v > 0.0),
        "{vals:?}"
    );
}

#[test]
fn missing_scenario_exits_2() {
    let out = cgkahler(&["mu", "--scenario", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(2));
}
