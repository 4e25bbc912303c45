//! Commands behind the `decoyqkd` binary.
//!
//! Each command takes a resolved [`RunManifest`] plus input text and returns
//! the bytes for the output file and a short human-readable summary, so the
//! binary only handles files, streams and exit codes.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::sync::OnceLock;

use decoy_core::fringe::{calibration_overhead, uniform_offsets};
use decoy_core::link::uniform_grid;
use decoy_core::sim::{analyze_tally, run_session_sequential};
use decoy_core::table::{parse_measured_table, write_bounds_table};
use decoy_core::{
    analyze_row, dataset, fit_fringe_with_dark, fit_link, run_session, simulate_scan, soundness_report, sweep_key_rate,
    working_points, BoundsRow, FringeError, LinkError, LinkModel, ScanCurve, ScanSettings, SimConfig, SimError,
};
use thiserror::Error;

pub mod manifest;

pub use manifest::{parse_grid, Command, RunManifest};

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<LinkError> for CliError {
    fn from(e: LinkError) -> Self {
        match e {
            LinkError::InvalidModel(_) | LinkError::InvalidGrid(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::Link(_) => CliError::Validation(e.to_string()),
            SimError::Parse(_) => CliError::Parse(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<FringeError> for CliError {
    fn from(e: FringeError) -> Self {
        match e {
            FringeError::Parse { .. } => CliError::Parse(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub body: String,
    pub summary: String,
}

/// Link model fitted to the bundled table with default parameters.
pub fn bundled_link() -> Result<LinkModel, CliError> {
    static FIT: OnceLock<Result<LinkModel, CliError>> = OnceLock::new();
    FIT.get_or_init(|| {
        fit_link(&dataset::reference_measurements(), &Default::default(), LinkModel::DEFAULT_Y0)
            .map(|f| f.model)
            .map_err(CliError::from)
    })
    .clone()
}

/// Applies the manifest's link fields on top of the bundled fit. The fit is
/// skipped when every field is given.
pub fn resolve_link(manifest: &RunManifest) -> Result<LinkModel, CliError> {
    let base = if manifest.link.is_complete() { LinkModel::default() } else { bundled_link()? };
    let mut base = base;
    // The fitted visibility lumps every error source into one number; the
    // fringe scan wants the interferometer's own contrast.
    if manifest.command == Command::Calibrate && manifest.link.visibility.is_none() {
        base.visibility = LinkModel::DEFAULT_VISIBILITY;
    }
    let model = manifest.link.apply(base);
    model.validate()?;
    Ok(model)
}

/// Bounds table for every row of a measured-statistics table.
pub fn cmd_analyze(manifest: &RunManifest, table: &str) -> Result<Output, CliError> {
    manifest.validate()?;
    let rows = parse_measured_table(table).map_err(|e| CliError::Parse(e.to_string()))?;
    if rows.is_empty() {
        return Ok(Output { body: String::new(), summary: "no rows\n".into() });
    }
    let bounds: Vec<BoundsRow> =
        rows.iter().map(|s| BoundsRow::from_analysis(s, analyze_row(&manifest.params, s))).collect();
    let mut summary = String::new();
    let _ = writeln!(summary, "{:>9}  {:>10}  {:>8}  {:>10}  secure", "L (km)", "S1 lower", "e1 upper", "R lower");
    for row in &bounds {
        match &row.outcome {
            Ok(b) => {
                let e1 = b.e1_upper.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    summary,
                    "{:>9}  {:>10.3e}  {:>8}  {:>10.3e}  {}",
                    row.length_km, b.s1_lower, e1, b.r_lower, b.secure
                );
            }
            Err(e) => {
                let _ = writeln!(summary, "{:>9}  error: {e}", row.length_km);
            }
        }
    }
    Ok(Output { body: manifest.header(None) + &write_bounds_table(&bounds), summary })
}

/// Monte Carlo session, its measured statistics, bounds and the soundness
/// check, as one `key=value` document.
pub fn cmd_simulate(manifest: &RunManifest, sequential: bool) -> Result<Output, CliError> {
    manifest.validate()?;
    let link = resolve_link(manifest)?;
    let r = &manifest.run;
    let config = SimConfig {
        n_pulses: r.pulses,
        decoy_fraction: r.decoy_fraction,
        seed: manifest.seed,
        length_km: r.length_km,
        link,
        params: manifest.params,
        phase_error: r.phase_error,
    };
    let tally = if sequential { run_session_sequential(&config)? } else { run_session(&config)? };
    let stats = tally.measured_stats();

    let mut body = manifest.header(Some(&link));
    body.push_str(&tally.to_text());
    let _ = writeln!(body, "measured.s_mu={:e}", stats.s_mu);
    let _ = writeln!(body, "measured.e_mu={:e}", stats.e_mu);
    let _ = writeln!(body, "measured.s_nu={:e}", stats.s_nu);
    let _ = writeln!(body, "measured.e_nu={:e}", stats.e_nu);

    let mut summary = format!(
        "{} pulses at {} km: s_mu={:.4e} e_mu={:.4} s_nu={:.4e} e_nu={:.4}\n",
        r.pulses, r.length_km, stats.s_mu, stats.e_mu, stats.s_nu, stats.e_nu
    );
    match analyze_tally(&tally, &manifest.params) {
        Ok(b) => {
            let report = soundness_report(&tally, &b);
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            let show = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
            let flag = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(body, "bounds.s_nu_lower={:e}", b.s_nu_lower);
            let _ = writeln!(body, "bounds.s1_lower={:e}", b.s1_lower);
            let _ = writeln!(body, "bounds.e1_upper={}", opt(b.e1_upper));
            let _ = writeln!(body, "bounds.r_lower={:e}", b.r_lower);
            let _ = writeln!(body, "bounds.secure={}", b.secure);
            let _ = writeln!(body, "soundness.true_s1={}", opt(report.true_s1));
            let _ = writeln!(body, "soundness.true_e1={}", opt(report.true_e1));
            let _ = writeln!(body, "soundness.s1_holds={}", flag(report.s1_holds));
            let _ = writeln!(body, "soundness.e1_holds={}", flag(report.e1_holds));
            let _ = writeln!(body, "soundness.holds={}", report.holds());
            let _ = writeln!(
                summary,
                "S1 lower {:.3e} vs true {}, e1 upper {} vs true {}: bounds {}",
                b.s1_lower,
                show(report.true_s1),
                show(b.e1_upper),
                show(report.true_e1),
                if report.holds() { "hold" } else { "VIOLATED" }
            );
        }
        Err(e) => {
            let _ = writeln!(body, "bounds.error={}", e.root_cause());
            let _ = writeln!(summary, "no bounds: {}", e.root_cause());
        }
    }
    Ok(Output { body, summary })
}

/// Key rate over a length grid and the secure-distance cutoff.
pub fn cmd_sweep(manifest: &RunManifest) -> Result<Output, CliError> {
    manifest.validate()?;
    let link = resolve_link(manifest)?;
    let (start, stop, step) = manifest.grid;
    let grid = uniform_grid(start, stop, step)?;
    let sweep = sweep_key_rate(&link, &manifest.params, &grid)?;

    let mut body = manifest.header(Some(&link));
    let cutoff = match (sweep.cutoff_km, sweep.cutoff_bracketed) {
        (Some(c), true) => format!("{c}"),
        (Some(c), false) => format!("beyond {c}"),
        (None, _) => "none".into(),
    };
    let _ = writeln!(body, "# cutoff_km={cutoff}");
    body.push_str("length_km,r_lower\n");
    for (l, r) in sweep.lengths.iter().zip(&sweep.rates) {
        let _ = writeln!(body, "{l},{}", r.map(|r| format!("{r:e}")).unwrap_or_default());
    }
    let summary = format!("{} lengths, cutoff_km={cutoff}\n", sweep.lengths.len());
    Ok(Output { body, summary })
}

/// Fitted link model as a `key=value` file usable with `--link`.
pub fn cmd_fit(manifest: &RunManifest, table: &str) -> Result<Output, CliError> {
    manifest.validate()?;
    let rows = parse_measured_table(table).map_err(|e| CliError::Parse(e.to_string()))?;
    let y0 = manifest.link.y0.unwrap_or(LinkModel::DEFAULT_Y0);
    let fit = fit_link(&rows, &manifest.params, y0)?;
    let m = &fit.model;

    let mut body = manifest.header(None);
    let _ = writeln!(body, "# objective={:e}", fit.objective);
    let _ = writeln!(body, "# length_km gain_mu gain_nu qber_mu | ln(gain_mu) ln(gain_nu) qber_mu residuals");
    for r in &fit.residuals {
        let _ = writeln!(
            body,
            "# {} {:e} {:e} {:e} | {:+.4} {:+.4} {:+.4}",
            r.length_km, r.gain_mu, r.gain_nu, r.qber_mu, r.log_gain_mu_residual, r.log_gain_nu_residual, r.qber_mu_residual
        );
    }
    let _ = writeln!(body, "alpha_db_per_km={}", m.alpha_db_per_km);
    let _ = writeln!(body, "excess_loss_db={}", m.excess_loss_db);
    let _ = writeln!(body, "eta_det={}", m.eta_det);
    let _ = writeln!(body, "y0={}", m.y0);
    let _ = writeln!(body, "visibility={}", m.visibility);
    let summary = format!(
        "alpha={:.4} dB/km, loss={:.3} dB, V={:.4}, objective={:.4}\n",
        m.alpha_db_per_km, m.excess_loss_db, m.visibility, fit.objective
    );
    Ok(Output { body, summary })
}

/// Signed difference `a - b` wrapped to `(-pi, pi]`.
fn phase_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Fringe fit and working points. `scan` fits an existing curve instead of
/// simulating one; `scan_out` receives the simulated curve.
pub fn cmd_calibrate(manifest: &RunManifest, scan: Option<&str>) -> Result<(Output, ScanCurve), CliError> {
    manifest.validate()?;
    let link = resolve_link(manifest)?;
    let r = &manifest.run;
    let curve = match scan {
        Some(text) => ScanCurve::from_text(text)?,
        None => {
            let settings = ScanSettings {
                true_phase_zero: r.phase_zero,
                pulses_per_point: r.pulses_per_point,
                noiseless: r.noiseless,
                ..ScanSettings::for_model(&link, r.length_km, manifest.seed)
            };
            simulate_scan(&link, &settings, &uniform_offsets(r.points))?
        }
    };
    let fit = fit_fringe_with_dark(&curve, link.y0)?;
    let points = working_points(&fit);
    let overhead = calibration_overhead(curve.offsets.len(), curve.pulses_per_point, r.session_pulses);

    let mut body = manifest.header(Some(&link));
    let _ = writeln!(body, "amplitude={:e}", fit.amplitude);
    let _ = writeln!(body, "visibility_est={}", fit.visibility_est);
    let _ = writeln!(body, "phase_zero={}", fit.phase_zero);
    let _ = writeln!(body, "residual={:e}", fit.residual);
    for (i, p) in points.iter().enumerate() {
        let _ = writeln!(body, "working_point_{i}={p}");
    }
    if scan.is_none() {
        let _ = writeln!(body, "phase_error={}", phase_difference(fit.phase_zero, r.phase_zero));
    }
    let _ = writeln!(body, "saturated={}", curve.saturated);
    let _ = writeln!(body, "overhead_fraction={overhead}");
    let summary = format!(
        "V={:.4}, phase_zero={:.4} rad, residual={:.2e}, overhead={:.2}%{}\n",
        fit.visibility_est,
        fit.phase_zero,
        fit.residual,
        overhead * 100.0,
        if curve.saturated { ", SATURATED" } else { "" }
    );
    Ok((Output { body, summary }, curve))
}
