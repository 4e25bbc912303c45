//! Phase-scan calibration of Bob's interferometer.
//!
//! Before key exchange Alice sends strong pulses at a fixed phase while Bob
//! steps his modulator through a full turn and records counts. Fitting the
//! fringe gives the visibility and the phase of the constructive peak, from
//! which the four working points follow.
//!
//! The click model is `p = 1 - (1 - y0) exp(-x (1 + V cos(phi - phi0)) / 2)`,
//! so `-ln(1 - p)` is exactly a raised cosine. The fit linearizes the
//! observed click fractions this way and then fits `a (1 + v cos(phi - phi0))`
//! by linear least squares in `(a, a v cos phi0, a v sin phi0)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::link::LinkModel;

pub const DEFAULT_SCAN_POINTS: usize = 64;
pub const DEFAULT_PULSES_PER_POINT: u64 = 100_000;
/// Strong-pulse intensity is chosen so the fringe peak clicks with this
/// probability.
pub const DEFAULT_PEAK_CLICK_PROBABILITY: f64 = 0.5;
/// Scans whose peak probability reaches this are flagged as saturated.
pub const SATURATION_PROBABILITY: f64 = 0.999;
/// Pulse slots in one key-exchange session used for overhead accounting.
pub const DEFAULT_SESSION_PULSES: u64 = 2_000_000_000;
pub const MIN_SCAN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FringeError {
    #[error("insufficient scan range: {0}")]
    InsufficientScanRange(String),
    #[error("invalid scan: {0}")]
    InvalidScan(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanCurve {
    /// Bob's phase settings in radians, strictly increasing.
    pub offsets: Vec<f64>,
    /// Detected counts per setting. Noiseless scans hold expected counts.
    pub counts: Vec<f64>,
    pub pulses_per_point: u64,
    /// Peak click probability reached the saturation threshold.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    /// Mean click probability over the scan.
    pub amplitude: f64,
    pub visibility_est: f64,
    /// Phase of the constructive peak, in `[0, 2pi)`.
    pub phase_zero: f64,
    /// RMS difference between observed and fitted click probabilities.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    pub strong_mean_photons: f64,
    /// Where the fringe peak actually sits.
    pub true_phase_zero: f64,
    pub pulses_per_point: u64,
    pub seed: u64,
    pub length_km: f64,
    /// Emit expected counts instead of sampling.
    pub noiseless: bool,
}

impl ScanSettings {
    /// Settings whose strong-pulse intensity puts the fringe peak at
    /// [`DEFAULT_PEAK_CLICK_PROBABILITY`].
    pub fn for_model(model: &LinkModel, length_km: f64, seed: u64) -> Self {
        Self {
            strong_mean_photons: strong_mean_photons_for_peak(model, length_km, DEFAULT_PEAK_CLICK_PROBABILITY),
            true_phase_zero: 0.0,
            pulses_per_point: DEFAULT_PULSES_PER_POINT,
            seed,
            length_km,
            noiseless: false,
        }
    }
}

/// Mean photon number at which the constructive peak clicks with `peak`
/// probability (ignoring dark counts).
pub fn strong_mean_photons_for_peak(model: &LinkModel, length_km: f64, peak: f64) -> f64 {
    let eta = model.transmittance(length_km);
    -2.0 * (1.0 - peak).ln() / (eta * (1.0 + model.visibility))
}

/// `n` offsets `0, 2pi/n, ...` covering one full turn.
pub fn uniform_offsets(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

/// Phase range covered by a scan, counting the last sample's cell.
fn coverage(offsets: &[f64]) -> f64 {
    match offsets {
        [.., a, b] => (b - offsets[0]) + (b - a),
        _ => 0.0,
    }
}

fn check_offsets(offsets: &[f64]) -> Result<(), FringeError> {
    if offsets.len() < MIN_SCAN_POINTS {
        return Err(FringeError::InsufficientScanRange(format!(
            "{} points, need at least {MIN_SCAN_POINTS}",
            offsets.len()
        )));
    }
    if offsets.iter().any(|o| !o.is_finite()) || offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FringeError::InvalidScan("offsets must be finite and strictly increasing".into()));
    }
    let span = coverage(offsets);
    if span < TAU * (1.0 - 1e-9) {
        return Err(FringeError::InsufficientScanRange(format!("scan covers {span:.4} rad, need 2pi")));
    }
    Ok(())
}

pub fn normalize_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn simulate_scan(model: &LinkModel, settings: &ScanSettings, offsets: &[f64]) -> Result<ScanCurve, FringeError> {
    check_offsets(offsets)?;
    if settings.pulses_per_point == 0 || !(settings.strong_mean_photons >= 0.0) {
        return Err(FringeError::InvalidScan("need pulses_per_point >= 1 and strong_mean_photons >= 0".into()));
    }
    let peak = model.click_probability(settings.strong_mean_photons, 0.0, settings.length_km);
    let n = settings.pulses_per_point;
    let counts = offsets
        .iter()
        .enumerate()
        .map(|(i, &phi)| {
            let p = model.click_probability(settings.strong_mean_photons, phi - settings.true_phase_zero, settings.length_km);
            if settings.noiseless {
                p * n as f64
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                rng.set_stream(i as u64);
                Binomial::new(n, p.clamp(0.0, 1.0)).expect("probability in [0, 1]").sample(&mut rng) as f64
            }
        })
        .collect();
    Ok(ScanCurve { offsets: offsets.to_vec(), counts, pulses_per_point: n, saturated: peak >= SATURATION_PROBABILITY })
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        *xk = det(&mk) / d;
    }
    Some(x)
}

pub fn fit_fringe(curve: &ScanCurve) -> Result<FringeFit, FringeError> {
    fit_fringe_with_dark(curve, 0.0)
}

/// As [`fit_fringe`], with a known per-pulse dark-click probability removed
/// from the fringe floor before the visibility is taken.
pub fn fit_fringe_with_dark(curve: &ScanCurve, dark: f64) -> Result<FringeFit, FringeError> {
    if !(0.0..1.0).contains(&dark) {
        return Err(FringeError::InvalidScan(format!("dark probability must lie in [0, 1), got {dark}")));
    }
    check_offsets(&curve.offsets)?;
    if curve.counts.len() != curve.offsets.len() || curve.pulses_per_point == 0 {
        return Err(FringeError::InvalidScan("counts and offsets differ in length".into()));
    }
    let n = curve.pulses_per_point as f64;
    if curve.counts.iter().any(|&c| !(0.0..=n).contains(&c)) {
        return Err(FringeError::InvalidScan("counts must lie in [0, pulses_per_point]".into()));
    }
    // Keep p < 1 so the log stays finite on fully saturated points.
    let p_max = 1.0 - 0.5 / n;
    let probs: Vec<f64> = curve.counts.iter().map(|c| c / n).collect();
    let y: Vec<f64> = probs.iter().map(|p| -(1.0 - p.min(p_max)).ln()).collect();
    let k = y.len() as f64;

    // First-harmonic DFT; exact least squares on a uniform full-turn grid.
    let mut coef = [
        y.iter().sum::<f64>() / k,
        2.0 / k * y.iter().zip(&curve.offsets).map(|(y, o)| y * o.cos()).sum::<f64>(),
        2.0 / k * y.iter().zip(&curve.offsets).map(|(y, o)| y * o.sin()).sum::<f64>(),
    ];

    // Normal equations for the general grid.
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (yi, o) in y.iter().zip(&curve.offsets) {
        let basis = [1.0, o.cos(), o.sin()];
        for r in 0..3 {
            aty[r] += basis[r] * yi;
            for c in 0..3 {
                ata[r][c] += basis[r] * basis[c];
            }
        }
    }
    let sse = |c: &[f64; 3]| -> f64 {
        y.iter()
            .zip(&curve.offsets)
            .map(|(yi, o)| (yi - c[0] - c[1] * o.cos() - c[2] * o.sin()).powi(2))
            .sum()
    };
    if let Some(refined) = solve3(ata, aty) {
        if sse(&refined) <= sse(&coef) {
            coef = refined;
        }
    }

    let [a, c, s] = coef;
    let harmonic = c.hypot(s);
    let signal = a + (1.0 - dark).ln();
    let visibility_est = if signal > 0.0 { (harmonic / signal).min(1.0) } else { 0.0 };
    let phase_zero = normalize_phase(s.atan2(c));
    let residual = (probs
        .iter()
        .zip(&curve.offsets)
        .map(|(p, o)| {
            let model = 1.0 - (-(a + c * o.cos() + s * o.sin())).exp();
            (p - model).powi(2)
        })
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(FringeFit { amplitude: probs.iter().sum::<f64>() / k, visibility_est, phase_zero, residual })
}

/// Bob's settings for phases `0, pi/2, pi, 3pi/2` relative to the fringe.
pub fn working_points(fit: &FringeFit) -> [f64; 4] {
    [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2].map(|d| normalize_phase(fit.phase_zero + d))
}

/// Scan time as a fraction of a session of `session_pulses` slots.
pub fn calibration_overhead(points: usize, pulses_per_point: u64, session_pulses: u64) -> f64 {
    (points as f64 * pulses_per_point as f64) / session_pulses as f64
}

impl ScanCurve {
    /// `offset,count,pulses_per_point` per line under a header row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("offset,count,pulses_per_point\n");
        for (o, c) in self.offsets.iter().zip(&self.counts) {
            let _ = writeln!(out, "{o:e},{c:e},{}", self.pulses_per_point);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FringeError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| ((i + 1) as u64, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "offset,count,pulses_per_point")) => {}
            Some((line, other)) => {
                return Err(FringeError::Parse { line, message: format!("unexpected header {other:?}") })
            }
            None => return Err(FringeError::Parse { line: 0, message: "empty scan".into() }),
        }
        let mut offsets = Vec::new();
        let mut counts = Vec::new();
        let mut ppp = None;
        for (line, l) in lines {
            let err = |message: String| FringeError::Parse { line, message };
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            let [o, c, n] = fields[..] else {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            };
            offsets.push(o.parse::<f64>().map_err(|_| err(format!("bad offset {o:?}")))?);
            counts.push(c.parse::<f64>().map_err(|_| err(format!("bad count {c:?}")))?);
            let n: u64 = n.parse().map_err(|_| err(format!("bad pulses_per_point {n:?}")))?;
            if *ppp.get_or_insert(n) != n {
                return Err(err("pulses_per_point must be constant".into()));
            }
        }
        let pulses_per_point = ppp.ok_or(FringeError::Parse { line: 0, message: "no data rows".into() })?;
        Ok(Self { offsets, counts, pulses_per_point, saturated: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(v: f64) -> LinkModel {
        LinkModel { alpha_db_per_km: 0.0, excess_loss_db: 0.0, eta_det: 1.0, y0: 0.0, visibility: v }
    }

    fn noiseless(model: &LinkModel, phase_zero: f64, offsets: &[f64]) -> ScanCurve {
        let settings = ScanSettings { true_phase_zero: phase_zero, noiseless: true, ..ScanSettings::for_model(model, 0.0, 0) };
        simulate_scan(model, &settings, offsets).unwrap()
    }

    #[test]
    fn destructive_point_is_dark() {
        let m = ideal(1.0);
        let offsets = uniform_offsets(8);
        let curve = noiseless(&m, 0.0, &offsets);
        assert_eq!(curve.counts[4], 0.0);
        let settings = ScanSettings { true_phase_zero: 0.0, ..ScanSettings::for_model(&m, 0.0, 3) };
        assert_eq!(simulate_scan(&m, &settings, &offsets).unwrap().counts[4], 0.0);
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let m = ideal(0.99);
        let fit = fit_fringe(&noiseless(&m, 1.234, &uniform_offsets(64))).unwrap();
        assert!((fit.visibility_est - 0.99).abs() < 1e-9, "{fit:?}");
        assert!((fit.phase_zero - 1.234).abs() < 1e-9);
        assert!(fit.residual < 1e-12);
        // a non-uniform grid goes through the normal equations
        let offsets: Vec<f64> = (0..20).map(|i| 0.3 + 0.35 * i as f64 + 0.01 * (i * i) as f64).collect();
        let fit = fit_fringe(&noiseless(&m, 4.0, &offsets)).unwrap();
        assert!((fit.visibility_est - 0.99).abs() < 1e-9);
        assert!((fit.phase_zero - 4.0).abs() < 1e-9);
    }

    #[test]
    fn known_darks_are_removed() {
        let m = LinkModel { y0: 1e-3, ..ideal(1.0) };
        let curve = noiseless(&m, 0.3, &uniform_offsets(64));
        assert!(fit_fringe(&curve).unwrap().visibility_est < 0.999);
        let fit = fit_fringe_with_dark(&curve, 1e-3).unwrap();
        assert!((fit.visibility_est - 1.0).abs() < 1e-9, "{}", fit.visibility_est);
        assert!(fit_fringe_with_dark(&curve, 1.0).is_err());
    }

    #[test]
    fn phase_shift_equivariance() {
        let m = ideal(0.97);
        let base = uniform_offsets(32);
        let f0 = fit_fringe(&noiseless(&m, 0.5, &base)).unwrap();
        for delta in [0.3, 2.0, 5.5] {
            let shifted: Vec<f64> = base.iter().map(|o| o + delta).collect();
            let mut curve = noiseless(&m, 0.5, &base);
            curve.offsets = shifted;
            let f = fit_fringe(&curve).unwrap();
            let expect = normalize_phase(f0.phase_zero + delta);
            let diff = (f.phase_zero - expect).abs();
            assert!(diff.min(TAU - diff) < 1e-9);
            assert!((f.visibility_est - f0.visibility_est).abs() < 1e-9);
        }
    }

    #[test]
    fn scan_range_checks() {
        let m = ideal(0.99);
        let settings = ScanSettings::for_model(&m, 0.0, 0);
        let four = uniform_offsets(4);
        assert!(matches!(simulate_scan(&m, &settings, &four), Err(FringeError::InsufficientScanRange(_))));
        let half: Vec<f64> = (0..16).map(|i| i as f64 * 0.2).collect();
        assert!(matches!(simulate_scan(&m, &settings, &half), Err(FringeError::InsufficientScanRange(_))));
        let curve = ScanCurve { offsets: four, counts: vec![1.0; 4], pulses_per_point: 10, saturated: false };
        assert!(matches!(fit_fringe(&curve), Err(FringeError::InsufficientScanRange(_))));
    }

    #[test]
    fn saturation_is_flagged() {
        let m = ideal(0.99);
        let settings = ScanSettings { strong_mean_photons: 50.0, ..ScanSettings::for_model(&m, 0.0, 0) };
        assert!(simulate_scan(&m, &settings, &uniform_offsets(16)).unwrap().saturated);
        let settings = ScanSettings::for_model(&m, 0.0, 0);
        assert!(!simulate_scan(&m, &settings, &uniform_offsets(16)).unwrap().saturated);
    }

    #[test]
    fn working_point_wraparound() {
        let at = |phase_zero| FringeFit { amplitude: 0.5, visibility_est: 1.0, phase_zero, residual: 0.0 };
        assert_eq!(working_points(&at(0.0)), [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]);
        let w = working_points(&at(3.0 * FRAC_PI_2));
        let expect = [3.0 * FRAC_PI_2, 0.0, FRAC_PI_2, PI];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn flat_fringe_has_low_visibility() {
        let m = LinkModel { visibility: 0.0, ..LinkModel::default() };
        let settings = ScanSettings::for_model(&m, 0.0, 42);
        let curve = simulate_scan(&m, &settings, &uniform_offsets(64)).unwrap();
        let fit = fit_fringe(&curve).unwrap();
        assert!(fit.visibility_est < 0.02, "{fit:?}");
    }

    #[test]
    fn flat_scan_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = LinkModel { visibility: 0.0, ..LinkModel::default() };
        let crit = ChiSquared::new(63.0).unwrap().inverse_cdf(0.95);
        // At the 5% level a flat scan is rejected about 5 times in 100.
        let rejected = (0..100)
            .filter(|&seed| {
                let curve = simulate_scan(&m, &ScanSettings::for_model(&m, 0.0, seed), &uniform_offsets(64)).unwrap();
                let mean = curve.counts.iter().sum::<f64>() / 64.0;
                let p = mean / curve.pulses_per_point as f64;
                let var = curve.pulses_per_point as f64 * p * (1.0 - p);
                let chi2: f64 = curve.counts.iter().map(|c| (c - mean).powi(2) / var).sum();
                chi2 >= crit
            })
            .count();
        assert!(rejected <= 12, "{rejected} of 100 flat scans rejected");
    }

    #[test]
    fn contrast_matches_visibility() {
        let m = LinkModel::default();
        let settings = ScanSettings::for_model(&m, 0.0, 5);
        let curve = simulate_scan(&m, &settings, &uniform_offsets(64)).unwrap();
        // contrast of the linearized rate -ln(1 - p), where darks are negligible
        let rates: Vec<f64> = curve.counts.iter().map(|c| -(1.0 - c / curve.pulses_per_point as f64).ln()).collect();
        let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().cloned().fold(0.0, f64::max);
        let expect = (1.0 - m.visibility) / (1.0 + m.visibility);
        // min-point counts are ~350, so ~6% relative spread
        assert!(((lo / hi) - expect).abs() / expect < 0.2, "{} vs {expect}", lo / hi);
    }

    #[test]
    fn overhead_is_small_by_default() {
        let f = calibration_overhead(DEFAULT_SCAN_POINTS, DEFAULT_PULSES_PER_POINT, DEFAULT_SESSION_PULSES);
        assert!(f <= 0.05);
        assert!((f - 0.0032).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let m = LinkModel::default();
        let curve = simulate_scan(&m, &ScanSettings::for_model(&m, 0.0, 1), &uniform_offsets(16)).unwrap();
        let back = ScanCurve::from_text(&curve.to_text()).unwrap();
        assert_eq!(back, curve);
        let err = ScanCurve::from_text("offset,count,pulses_per_point\n0,1\n").unwrap_err();
        assert_eq!(err, FringeError::Parse { line: 2, message: "expected 3 fields, got 2".into() });
    }
}
