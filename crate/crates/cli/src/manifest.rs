//! Effective settings for one CLI run.
//!
//! Values are resolved in increasing precedence: built-in defaults, the
//! `--link` file, the `--params` file, then `--set key=value` flags (and the
//! dedicated `--seed`/`--grid` flags). Every key is checked against a fixed
//! list, so typos are rejected instead of silently ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use decoy_core::fringe::{DEFAULT_PULSES_PER_POINT, DEFAULT_SCAN_POINTS, DEFAULT_SESSION_PULSES};
use decoy_core::{LinkModel, ProtocolParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Simulate,
    Sweep,
    Fit,
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Fit => "fit",
            Command::Calibrate => "calibrate",
        }
    }
}

pub const PARAM_KEYS: [&str; 7] = ["mu", "nu", "q", "f_ec", "u_alpha", "n_mu", "n_nu"];
pub const LINK_KEYS: [&str; 5] = ["alpha_db_per_km", "excess_loss_db", "eta_det", "y0", "visibility"];
pub const RUN_KEYS: [&str; 9] = [
    "pulses",
    "length_km",
    "decoy_fraction",
    "phase_error",
    "points",
    "pulses_per_point",
    "phase_zero",
    "session_pulses",
    "noiseless",
];

/// Simulation and calibration knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub pulses: u64,
    pub length_km: f64,
    pub decoy_fraction: f64,
    pub phase_error: f64,
    pub points: usize,
    pub pulses_per_point: u64,
    pub phase_zero: f64,
    pub session_pulses: u64,
    pub noiseless: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            pulses: 10_000_000,
            length_km: 49.2,
            decoy_fraction: 0.5,
            phase_error: 0.0,
            points: DEFAULT_SCAN_POINTS,
            pulses_per_point: DEFAULT_PULSES_PER_POINT,
            phase_zero: 0.0,
            session_pulses: DEFAULT_SESSION_PULSES,
            noiseless: false,
        }
    }
}

/// Link fields overridden on top of the base model. The base is either a
/// complete `--link` file or the fit of the bundled table.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkOverrides {
    pub alpha_db_per_km: Option<f64>,
    pub excess_loss_db: Option<f64>,
    pub eta_det: Option<f64>,
    pub y0: Option<f64>,
    pub visibility: Option<f64>,
}

impl LinkOverrides {
    pub fn apply(&self, base: LinkModel) -> LinkModel {
        LinkModel {
            alpha_db_per_km: self.alpha_db_per_km.unwrap_or(base.alpha_db_per_km),
            excess_loss_db: self.excess_loss_db.unwrap_or(base.excess_loss_db),
            eta_det: self.eta_det.unwrap_or(base.eta_det),
            y0: self.y0.unwrap_or(base.y0),
            visibility: self.visibility.unwrap_or(base.visibility),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.alpha_db_per_km.is_some()
            && self.excess_loss_db.is_some()
            && self.eta_det.is_some()
            && self.y0.is_some()
            && self.visibility.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub seed: u64,
    pub params: ProtocolParams,
    pub link: LinkOverrides,
    pub run: RunSettings,
    pub grid: (f64, f64, f64),
}

pub const DEFAULT_GRID: (f64, f64, f64) = (0.0, 150.0, 1.0);

fn parse_value<T: FromStr>(key: &str, value: &str, source: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Parse(format!("{source}: {key}: cannot parse {value:?}")))
}

/// Accepts `1e9` style counts as well as plain integers.
fn parse_count(key: &str, value: &str, source: &str) -> Result<u64, CliError> {
    if let Ok(n) = value.parse::<u64>() {
        return Ok(n);
    }
    let f: f64 = parse_value(key, value, source)?;
    if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(CliError::Parse(format!("{source}: {key}: {value:?} is not a count")))
    }
}

impl RunManifest {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: 0,
            params: ProtocolParams::default(),
            link: LinkOverrides::default(),
            run: RunSettings::default(),
            grid: DEFAULT_GRID,
        }
    }

    /// Applies one `key=value` setting. `source` names where it came from in
    /// error messages.
    pub fn set(&mut self, key: &str, value: &str, source: &str) -> Result<(), CliError> {
        let f = |v: &str| parse_value::<f64>(key, v, source);
        let n = |v: &str| parse_count(key, v, source);
        match key {
            "mu" => self.params.mu = f(value)?,
            "nu" => self.params.nu = f(value)?,
            "q" => self.params.q = f(value)?,
            "f_ec" => self.params.f_ec = f(value)?,
            "u_alpha" => self.params.u_alpha = f(value)?,
            "n_mu" => self.params.n_mu = n(value)?,
            "n_nu" => self.params.n_nu = n(value)?,
            "alpha_db_per_km" => self.link.alpha_db_per_km = Some(f(value)?),
            "excess_loss_db" => self.link.excess_loss_db = Some(f(value)?),
            "eta_det" => self.link.eta_det = Some(f(value)?),
            "y0" => self.link.y0 = Some(f(value)?),
            "visibility" => self.link.visibility = Some(f(value)?),
            "pulses" => self.run.pulses = n(value)?,
            "length_km" => self.run.length_km = f(value)?,
            "decoy_fraction" => self.run.decoy_fraction = f(value)?,
            "phase_error" => self.run.phase_error = f(value)?,
            "points" => self.run.points = n(value)? as usize,
            "pulses_per_point" => self.run.pulses_per_point = n(value)?,
            "phase_zero" => self.run.phase_zero = f(value)?,
            "session_pulses" => self.run.session_pulses = n(value)?,
            "noiseless" => self.run.noiseless = parse_value(key, value, source)?,
            "seed" => self.seed = n(value)?,
            _ => return Err(CliError::Validation(format!("{source}: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a whole `key=value` file, restricted to `allowed` keys.
    pub fn apply_file(&mut self, text: &str, source: &str, allowed: &[&str]) -> Result<(), CliError> {
        let kv = decoy_core::table::parse_key_values(text).map_err(|e| CliError::Parse(format!("{source}: {e}")))?;
        for (k, v) in kv {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError::Validation(format!("{source}: unknown key {k:?}")));
            }
            self.set(&k, &v, source)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.command != Command::Simulate {
            self.params.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        }
        let (start, stop, step) = self.grid;
        if !(step > 0.0 && stop >= start && start >= 0.0) {
            return Err(CliError::Validation(format!("grid {start}:{stop}:{step} is not an increasing range")));
        }
        Ok(())
    }

    /// `# key=value` lines for the protocol parameters and run settings
    /// that affect `command`.
    pub fn header(&self, link: Option<&LinkModel>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# decoyqkd {}", self.command.name());
        let p = &self.params;
        let _ = writeln!(
            out,
            "# mu={} nu={} q={} f_ec={} u_alpha={} n_mu={} n_nu={}",
            p.mu, p.nu, p.q, p.f_ec, p.u_alpha, p.n_mu, p.n_nu
        );
        if let Some(l) = link {
            let _ = writeln!(
                out,
                "# alpha_db_per_km={} excess_loss_db={} eta_det={} y0={} visibility={}",
                l.alpha_db_per_km, l.excess_loss_db, l.eta_det, l.y0, l.visibility
            );
        }
        let r = &self.run;
        match self.command {
            Command::Simulate => {
                let _ = writeln!(
                    out,
                    "# seed={} pulses={} length_km={} decoy_fraction={} phase_error={}",
                    self.seed, r.pulses, r.length_km, r.decoy_fraction, r.phase_error
                );
            }
            Command::Calibrate => {
                let _ = writeln!(
                    out,
                    "# seed={} points={} pulses_per_point={} phase_zero={} length_km={} session_pulses={} noiseless={}",
                    self.seed, r.points, r.pulses_per_point, r.phase_zero, r.length_km, r.session_pulses, r.noiseless
                );
            }
            Command::Sweep => {
                let _ = writeln!(out, "# grid={}:{}:{}", self.grid.0, self.grid.1, self.grid.2);
            }
            Command::Analyze | Command::Fit => {}
        }
        let _ = writeln!(out, "# rates are clicks per emitted pulse");
        out
    }
}

/// `start:stop:step` in km.
pub fn parse_grid(text: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, c] = parts[..] else {
        return Err(CliError::Parse(format!("--grid: expected start:stop:step, got {text:?}")));
    };
    Ok((
        parse_value("grid start", a, "--grid")?,
        parse_value("grid stop", b, "--grid")?,
        parse_value("grid step", c, "--grid")?,
    ))
}
