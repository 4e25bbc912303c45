use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use decoy_core::dataset::REFERENCE_CSV;
use decoy_core::table::{parse_bounds_table, parse_key_values};
use decoy_core::ScanCurve;

fn decoyqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decoyqkd")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("decoyqkd-tests-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn value(text: &str, key: &str) -> String {
    parse_key_values(text)
        .unwrap()
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("{key} missing"))
        .1
}

fn cutoff(text: &str) -> Option<f64> {
    text.lines().find_map(|l| l.strip_prefix("# cutoff_km=")).and_then(|v| v.parse().ok())
}

#[test]
fn analyze_output_round_trips() {
    let text = stdout(&decoyqkd(&["analyze"]));
    assert!(text.contains("# u_alpha=10") || text.contains(" u_alpha=10 "));
    assert!(text.contains("# rates are clicks per emitted pulse"));
    let rows = parse_bounds_table(&text).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.outcome.as_ref().is_ok_and(|b| b.secure)));
}

#[test]
fn analyze_empty_and_malformed() {
    let empty = scratch("empty.csv", "");
    let out = decoyqkd(&["analyze", "-i", empty.to_str().unwrap()]);
    assert_eq!(stdout(&out), "");

    let bad = scratch("bad.csv", "length_km,s_mu,e_mu,s_nu,e_nu\n10,1e-3,0.01,3e-4,0.02\n20,1.2,0.01,3e-4,0.02\n");
    let out = decoyqkd(&["analyze", "-i", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn failed_rows_are_reported_in_place() {
    let table = scratch("weak.csv", "length_km,s_mu,e_mu,s_nu,e_nu\n200,1e-8,0.2,1e-9,0.3\n49.2,8.6e-4,0.0103,2.9e-4,0.020\n");
    let text = stdout(&decoyqkd(&["analyze", "-i", table.to_str().unwrap()]));
    let rows = parse_bounds_table(&text).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].outcome.as_ref().unwrap_err().contains("statistics insufficient"));
    assert!(rows[1].outcome.is_ok());
}

#[test]
fn settings_precedence() {
    let params = scratch("params.txt", "# finite-size\nu_alpha=5\nmu=0.6\n");
    let p = params.to_str().unwrap();
    let from_file = stdout(&decoyqkd(&["analyze", "--params", p]));
    let overridden = stdout(&decoyqkd(&["analyze", "--params", p, "--set", "u_alpha=7"]));
    assert!(from_file.contains("u_alpha=5 "));
    assert!(overridden.contains("u_alpha=7 "));

    let bad_key = scratch("typo.txt", "u_alfa=5\n");
    assert_eq!(decoyqkd(&["analyze", "--params", bad_key.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(decoyqkd(&["analyze", "--set", "nu=0.7"]).status.code(), Some(3));
    assert_eq!(decoyqkd(&["analyze", "--set", "mu"]).status.code(), Some(2));
    assert_eq!(decoyqkd(&["bogus"]).status.code(), Some(2));
}

#[test]
fn fit_output_feeds_link_flag() {
    let fit = stdout(&decoyqkd(&["fit"]));
    let alpha: f64 = value(&fit, "alpha_db_per_km").parse().unwrap();
    assert!((alpha - 0.1666).abs() < 1e-3, "{alpha}");
    let link = scratch("link.txt", &fit);
    let a = stdout(&decoyqkd(&["sweep", "--link", link.to_str().unwrap()]));
    let b = stdout(&decoyqkd(&["sweep"]));
    assert_eq!(cutoff(&a), cutoff(&b));
}

#[test]
fn fit_rejects_single_length() {
    let table = scratch("one.csv", "length_km,s_mu,e_mu,s_nu,e_nu\n50,8e-4,0.01,2.7e-4,0.02\n");
    let out = decoyqkd(&["fit", "-i", table.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out.stderr.is_empty());
}

#[test]
fn sweep_cutoffs() {
    let finite = cutoff(&stdout(&decoyqkd(&["sweep"]))).unwrap();
    let asymptotic = cutoff(&stdout(&decoyqkd(&["sweep", "--set", "u_alpha=0"]))).unwrap();
    assert!((123.6..=140.0).contains(&finite), "{finite}");
    assert!(asymptotic > finite);

    let single = stdout(&decoyqkd(&["sweep", "--grid", "50:50:1"]));
    let data: Vec<&str> = single.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 2);
    assert!(single.contains("# cutoff_km=beyond 50"));
    let dead = stdout(&decoyqkd(&["sweep", "--grid", "200:200:1"]));
    assert!(dead.contains("# cutoff_km=none"));
    assert_eq!(decoyqkd(&["sweep", "--grid", "10:0:1"]).status.code(), Some(3));
}

#[test]
fn simulate_reports_soundness() {
    let text = stdout(&decoyqkd(&["simulate", "--seed", "4"]));
    assert_eq!(value(&text, "soundness.holds"), "true");
    assert_eq!(value(&text, "bounds.secure"), "false");
    assert_eq!(value(&text, "signal.emitted").parse::<u64>().unwrap() + value(&text, "decoy.emitted").parse::<u64>().unwrap(), 10_000_000);
    assert_eq!(decoyqkd(&["simulate", "--set", "pulses=0"]).status.code(), Some(3));
    assert_eq!(decoyqkd(&["simulate", "--set", "decoy_fraction=1"]).status.code(), Some(3));
}

#[test]
fn calibrate_recovers_model() {
    let text = stdout(&decoyqkd(&["calibrate", "--set", "visibility=1", "--set", "noiseless=true", "--set", "phase_zero=2"]));
    let v: f64 = value(&text, "visibility_est").parse().unwrap();
    let phi: f64 = value(&text, "phase_zero").parse().unwrap();
    assert!((v - 1.0).abs() < 1e-9, "{v}");
    assert!((phi - 2.0).abs() < 1e-9, "{phi}");
    assert_eq!(value(&text, "overhead_fraction"), "0.0032");

    let out = decoyqkd(&["calibrate", "--set", "points=4"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient scan range"));
}

#[test]
fn calibrate_scan_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("decoyqkd-scan-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let scan = dir.join("scan.csv");
    let first = stdout(&decoyqkd(&["calibrate", "--seed", "3", "--scan-out", scan.to_str().unwrap()]));
    let curve = ScanCurve::from_text(&fs::read_to_string(&scan).unwrap()).unwrap();
    assert_eq!(curve.offsets.len(), 64);
    let refit = stdout(&decoyqkd(&["calibrate", "-i", scan.to_str().unwrap()]));
    assert_eq!(value(&first, "visibility_est"), value(&refit, "visibility_est"));
    assert_eq!(value(&first, "phase_zero"), value(&refit, "phase_zero"));
}

/// Alignment from `calibrate` fed into `simulate` keeps the signal QBER
/// close to the drift-free session.
#[test]
fn calibration_feeds_simulation() {
    let cal = stdout(&decoyqkd(&["calibrate", "--seed", "8", "--set", "phase_zero=1.3"]));
    let err = value(&cal, "phase_error");
    let qber = |e: &str| -> f64 {
        let s = format!("phase_error={e}");
        value(&stdout(&decoyqkd(&["simulate", "--seed", "2", "--set", &s])), "measured.e_mu").parse().unwrap()
    };
    let (aligned, calibrated) = (qber("0"), qber(&err));
    assert!(((calibrated - aligned) / aligned).abs() < 0.2, "{calibrated} vs {aligned}");
}

#[test]
fn writes_to_out_file() {
    let dir = std::env::temp_dir().join(format!("decoyqkd-out-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bounds.csv");
    let out = decoyqkd(&["analyze", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("123.6"));
    assert_eq!(fs::read_to_string(&path).unwrap(), stdout(&decoyqkd(&["analyze"])));
    let input = scratch("t1.csv", REFERENCE_CSV);
    assert_eq!(stdout(&decoyqkd(&["analyze", "-i", input.to_str().unwrap()])), fs::read_to_string(&path).unwrap());
}
