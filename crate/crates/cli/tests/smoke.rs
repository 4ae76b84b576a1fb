//! End-to-end smoke tests of the command-line driver.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skwave"))
}

#[test]
fn sweep_writes_reports_and_exits_zero() {
    let dir = std::env::temp_dir().join("skwave-smoke-sweep");
    let _ = std::fs::remove_dir_all(&dir);
    let out = bin()
        .args([
            "sweep",
            "--set",
            "n_modes=8",
            "--set",
            "snapshots=20",
            "--set",
            "horizon=0.25",
            "--set",
            "mu_grid=1e-1,1e-2",
            "--set",
            "pass_max_error=10",
            "--set",
            "pass_ratio=1.05",
            "--replicas",
            "2",
            "--out",
        ])
        .arg(&dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.join("sweep/report.csv")).unwrap();
    assert!(report.starts_with("mu,replica,seed,"));
    assert_eq!(report.lines().count(), 1 + 4);
    assert!(dir.join("sweep/summary.json").exists());
    assert!(dir.join("sweep/metadata.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn drift_subcommand_cross_checks_monte_carlo() {
    let dir = std::env::temp_dir().join("skwave-smoke-drift");
    let _ = std::fs::remove_dir_all(&dir);
    let out = bin()
        .args([
            "drift",
            "--set",
            "n_modes=6",
            "--u",
            "random:11",
            "--samples",
            "20000",
            "--out",
        ])
        .arg(&dir)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("S(u) spectral vs Monte-Carlo"));
    assert!(dir.join("drift/s_field.csv").exists());
}

#[test]
fn validate_correctors_reports_residual_table() {
    let dir = std::env::temp_dir().join("skwave-smoke-corr");
    let _ = std::fs::remove_dir_all(&dir);
    let out = bin()
        .args([
            "validate-correctors",
            "--set",
            "n_modes=8",
            "--set",
            "quad_nodes=64",
            "--mu",
            "1e-2",
            "--batch",
            "3",
            "--out",
        ])
        .arg(&dir)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    let table = std::fs::read_to_string(dir.join("correctors/residuals.csv")).unwrap();
    assert!(table.starts_with("case,mu,residual,tolerance,pass"));
    assert!(table.contains("resolvent_identity,0.01"));
}

#[test]
fn bad_config_exits_with_code_two() {
    let out = bin()
        .args(["sweep", "--set", "vartheta=3"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vartheta"));
}
