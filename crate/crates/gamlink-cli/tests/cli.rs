//! End-to-end tests of the `gamlink` binary: output files, exit codes,
//! structured error records, and determinism across thread counts.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gamlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamlink"))
        .args(args)
        .output()
        .expect("binary must run")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A small synthetic logit CSV with two covariates, written by a fixed
/// linear congruential generator so the file is stable across runs.
fn write_sample_csv(path: &Path, n: usize) {
    let mut state = 0x2545F4914F6CDD1Du64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut body = String::from("y,x1,x2\n");
    for _ in 0..n {
        let x1 = 2.0 * next() - 1.0;
        let x2 = 2.0 * next() - 1.0;
        let eta = 2.0 * x1.powi(2) - 1.0 + x2;
        let p = 1.0 / (1.0 + (-eta).exp());
        let y = if next() < p { 1.0 } else { 0.0 };
        body.push_str(&format!("{y},{x1},{x2}\n"));
    }
    std::fs::write(path, body).unwrap();
}

/// A CSV whose response is exactly linear in one covariate under the
/// identity link; the estimated component has no curvature.
fn write_linear_csv(path: &Path, n: usize) {
    let mut body = String::from("y,x1,x2\n");
    for i in 0..n {
        let x1 = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        let x2 = -1.0 + 2.0 * ((i * 7) % n) as f64 / (n - 1) as f64;
        let y = 0.5 * x1 - 0.25 * x2;
        body.push_str(&format!("{y},{x1},{x2}\n"));
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn fit_writes_all_outputs_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 300);

    let run = |out: &Path| {
        let status = gamlink(&[
            "fit",
            "--input", csv.to_str().unwrap(),
            "--response", "y",
            "--covariates", "x1,x2",
            "--link", "logit",
            "--kappa", "4,2",
            "--h", "0.5,1.4",
            "--grid-size", "51",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(
            status.status.success(),
            "fit failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run(&out1);
    run(&out2);

    for name in ["component_1.csv", "component_2.csv", "summary.json", "config.json"] {
        let a = read(&out1.join(name));
        let b = read(&out2.join(name));
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&out1.join("summary.json"))).unwrap();
    assert_eq!(summary["n"], 300);
    assert_eq!(summary["d"], 2);
    assert_eq!(summary["converged"], true);

    // Interior grid rows carry estimates and finite interval endpoints.
    let component = read(&out1.join("component_1.csv"));
    let interior: Vec<&str> = component
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(4) == Some("false"))
        .collect();
    assert!(!interior.is_empty(), "no interior rows in component_1.csv");
    for line in &interior {
        let fields: Vec<&str> = line.split(',').collect();
        for idx in [3, 7, 8] {
            let v: f64 = fields[idx].parse().unwrap_or_else(|_| panic!("bad field {idx} in {line}"));
            assert!(v.is_finite());
        }
    }
}

#[test]
fn fit_rejects_conflicting_bandwidth_flags() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 100);
    let out = dir.path().join("out");
    let output = gamlink(&[
        "fit",
        "--input", csv.to_str().unwrap(),
        "--response", "y",
        "--covariates", "x1,x2",
        "--h", "0.5",
        "--plugin",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(&read(&out.join("error.json"))).unwrap();
    assert_eq!(record["kind"], "usage");
    assert_eq!(record["exit_code"], 2);
}

#[test]
fn fit_reports_data_error_for_missing_column() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 100);
    let out = dir.path().join("out");
    let output = gamlink(&[
        "fit",
        "--input", csv.to_str().unwrap(),
        "--response", "y",
        "--covariates", "x1,nope",
        "--h", "0.5,0.5",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
    let record: serde_json::Value = serde_json::from_str(&read(&out.join("error.json"))).unwrap();
    assert_eq!(record["kind"], "data");
}

#[test]
fn simulate_single_replication_matches_eimse() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let output = gamlink(&[
        "simulate",
        "--dgp", "logit",
        "--d", "2",
        "--n", "200",
        "--estimator", "two-stage-ll",
        "--kappa", "4,2",
        "--h", "0.5,1.4",
        "--replications", "1",
        "--seed", "7",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "simulate failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    // With one replication the EIMSE is that replication's ISE.
    let eimse = read(&out.join("eimse.csv"));
    let ise = read(&out.join("ise.csv"));
    let eimse_rows: Vec<Vec<&str>> = eimse.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let ise_rows: Vec<Vec<&str>> = ise.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(eimse_rows.len(), 2);
    assert_eq!(ise_rows.len(), 2);
    for coord in 0..2 {
        assert_eq!(eimse_rows[coord][1], ise_rows[coord][2], "coordinate {coord}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("report.json"))).unwrap();
    assert_eq!(report["replications_run"], 1);
    assert_eq!(report["failures"], 0);
}

#[test]
fn simulate_rejects_unknown_estimator() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let output = gamlink(&[
        "simulate",
        "--estimator", "three-stage",
        "--h", "0.5",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let run = |threads: &str, out: &Path| {
        let output = gamlink(&[
            "--threads", threads,
            "simulate",
            "--dgp", "logit",
            "--d", "2",
            "--n", "150",
            "--estimator", "two-stage-ll",
            "--kappa", "4,2",
            "--h", "0.5,1.4",
            "--replications", "8",
            "--seed", "3",
            "--grid-points", "41",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "simulate failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let out1 = dir.path().join("t1");
    let out4 = dir.path().join("t4");
    run("1", &out1);
    run("4", &out4);
    for name in ["eimse.csv", "ise.csv", "report.json"] {
        assert_eq!(
            read(&out1.join(name)),
            read(&out4.join(name)),
            "{name} differs between thread counts"
        );
    }
}

#[test]
fn bandwidth_pls_trace_covers_the_grid_and_contains_the_selection() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let output = gamlink(&[
        "bandwidth",
        "--dgp", "logit",
        "--d", "2",
        "--n", "300",
        "--seed", "5",
        "--kappa", "4,2",
        "--method", "pls",
        "--grid-points", "3",
        "--no-polish",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "bandwidth failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let trace = read(&out.join("trace.csv"));
    let rows: Vec<Vec<f64>> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9, "expected a full 3x3 candidate grid");
    let selection: serde_json::Value = serde_json::from_str(&read(&out.join("selection.json"))).unwrap();
    let c_h: Vec<f64> = selection["c_h"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // Without polishing, the selection is the trace row with the smallest
    // objective.
    let best = rows
        .iter()
        .min_by(|a, b| a[2].partial_cmp(&b[2]).unwrap())
        .unwrap();
    assert_eq!(c_h, best[..2].to_vec(), "selection is not the trace argmin");
}

#[test]
fn bandwidth_plugin_fails_cleanly_on_a_linear_component() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("linear.csv");
    write_linear_csv(&csv, 200);
    let out = dir.path().join("out");
    let output = gamlink(&[
        "bandwidth",
        "--input", csv.to_str().unwrap(),
        "--response", "y",
        "--covariates", "x1,x2",
        "--link", "identity",
        "--kappa", "2,2",
        "--method", "plugin",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(4));
    let record: serde_json::Value = serde_json::from_str(&read(&out.join("error.json"))).unwrap();
    assert_eq!(record["kind"], "numerical");
    let message = record["message"].as_str().unwrap();
    assert!(
        message.contains("--pls"),
        "error message should point at the alternatives: {message}"
    );
}

#[test]
fn diagnose_reports_first_stage_health() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 250);
    let out = dir.path().join("out");
    let output = gamlink(&[
        "diagnose",
        "--input", csv.to_str().unwrap(),
        "--response", "y",
        "--covariates", "x1,x2",
        "--kappa", "4,2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "diagnose failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let diag: serde_json::Value = serde_json::from_str(&read(&out.join("diagnostics.json"))).unwrap();
    assert_eq!(diag["n"], 250);
    assert_eq!(diag["design_dimension"], 7);
    assert_eq!(diag["converged"], true);
    assert!(diag["q_min_eigenvalue"].as_f64().unwrap() > 0.0);
    let defects = diag["basis_gram_defects"].as_array().unwrap();
    assert!(defects.iter().all(|v| v.as_f64().unwrap() < 1e-8));
}
