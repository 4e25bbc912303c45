//! Security bounds for the two-intensity (signal + decoy) protocol.
//!
//! Given the counting rates `S_mu`, `S_nu` and the signal QBER `E_mu`, the
//! estimator computes
//!
//! * the finite-size corrected decoy rate `S_nu^L = S_nu (1 - u_a / sqrt(N_nu S_nu))`,
//! * the single-photon yield lower bound `S_1^L`,
//! * the single-photon error upper bound `e_1^U = E_mu S_mu / (S_1^L mu e^-mu)`,
//! * the key rate lower bound
//!   `R^L = q (-S_mu f H2(E_mu) + S_1^L mu e^-mu (1 - H2(e_1^U)))`.
//!
//! Everything here is a pure function of its arguments.

use thiserror::Error;

/// Protocol-level constants shared by every row of an analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Mean photon number of signal pulses.
    pub mu: f64,
    /// Mean photon number of decoy pulses.
    pub nu: f64,
    /// Sifting factor (1/2 for BB84).
    pub q: f64,
    /// Error-correction inefficiency, `f(E) >= 1`.
    pub f_ec: f64,
    /// Statistical confidence multiplier applied to the decoy rate.
    pub u_alpha: f64,
    /// Emitted signal pulses.
    pub n_mu: u64,
    /// Emitted decoy pulses.
    pub n_nu: u64,
}

impl ProtocolParams {
    pub const DEFAULT_MU: f64 = 0.6;
    pub const DEFAULT_NU: f64 = 0.2;
    pub const DEFAULT_Q: f64 = 0.5;
    pub const DEFAULT_F_EC: f64 = 1.2;
    /// Recovered by fitting the bundled reference bounds from the bundled measurements; see the
    /// `u_alpha_recovery` acceptance check.
    pub const DEFAULT_U_ALPHA: f64 = 10.0;
    /// 2e9 pulses in total, split 1:1 between signal and decoy.
    pub const DEFAULT_PULSES_PER_CLASS: u64 = 1_000_000_000;

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let fail = |msg: String| Err(EstimatorError::InvalidParams(msg));
        if !(self.nu > 0.0 && self.nu < self.mu && self.mu.is_finite()) {
            return fail(format!("need 0 < nu < mu, got mu={}, nu={}", self.mu, self.nu));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return fail(format!("q must lie in (0, 1], got {}", self.q));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return fail(format!("f_ec must be >= 1, got {}", self.f_ec));
        }
        if !(self.u_alpha >= 0.0 && self.u_alpha.is_finite()) {
            return fail(format!("u_alpha must be >= 0, got {}", self.u_alpha));
        }
        if self.n_mu == 0 || self.n_nu == 0 {
            return fail(format!("pulse budgets must be >= 1, got n_mu={}, n_nu={}", self.n_mu, self.n_nu));
        }
        Ok(())
    }
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            mu: Self::DEFAULT_MU,
            nu: Self::DEFAULT_NU,
            q: Self::DEFAULT_Q,
            f_ec: Self::DEFAULT_F_EC,
            u_alpha: Self::DEFAULT_U_ALPHA,
            n_mu: Self::DEFAULT_PULSES_PER_CLASS,
            n_nu: Self::DEFAULT_PULSES_PER_CLASS,
        }
    }
}

/// One measured row: fiber length plus per-intensity counting rates and QBERs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredStats {
    pub length_km: f64,
    /// Clicks per emitted signal pulse.
    pub s_mu: f64,
    /// QBER of the signal-pulse key.
    pub e_mu: f64,
    /// Clicks per emitted decoy pulse.
    pub s_nu: f64,
    /// QBER of the decoy-pulse key.
    pub e_nu: f64,
}

impl MeasuredStats {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(EstimatorError::InvalidStats(format!(
                "length_km must be >= 0, got {}",
                self.length_km
            )));
        }
        for (name, v) in [("s_mu", self.s_mu), ("e_mu", self.e_mu), ("s_nu", self.s_nu), ("e_nu", self.e_nu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EstimatorError::InvalidStats(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// True when the decoy rate is not below the signal rate. Such rows are
    /// unphysical for `mu > nu` but are analyzed anyway.
    pub fn rate_order_suspect(&self) -> bool {
        self.s_mu <= self.s_nu
    }
}

/// Derived quantities for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityBounds {
    pub s_nu_lower: f64,
    /// May be negative; no clamping is applied.
    pub s1_lower: f64,
    /// `None` when `s1_lower <= 0` and no single-photon error bound exists.
    pub e1_upper: Option<f64>,
    /// Bits per emitted signal pulse. Negative when no key can be extracted.
    pub r_lower: f64,
    pub secure: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),
    #[error("invalid measured statistics: {0}")]
    InvalidStats(String),
    #[error(
        "statistics insufficient: {detections} expected decoy detections cannot support u_alpha = {u_alpha}"
    )]
    StatisticsInsufficient { detections: f64, u_alpha: f64 },
    #[error("no single-photon bound: S1 lower bound {0} is not positive")]
    NoSinglePhotonBound(f64),
    #[error("row at {length_km} km not analyzable: {cause}")]
    RowNotAnalyzable { length_km: f64, cause: Box<EstimatorError> },
}

impl EstimatorError {
    /// The underlying failure, looking through `RowNotAnalyzable`.
    pub fn root_cause(&self) -> &EstimatorError {
        match self {
            EstimatorError::RowNotAnalyzable { cause, .. } => cause.root_cause(),
            other => other,
        }
    }
}

/// Binary Shannon entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, EstimatorError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EstimatorError::Domain(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Decoy counting rate corrected for statistical fluctuation.
pub fn s_nu_lower(s_nu: f64, n_nu: u64, u_alpha: f64) -> Result<f64, EstimatorError> {
    let detections = n_nu as f64 * s_nu;
    if !(s_nu > 0.0) || n_nu == 0 {
        return Err(EstimatorError::StatisticsInsufficient { detections, u_alpha });
    }
    let corrected = s_nu * (1.0 - u_alpha / detections.sqrt());
    if corrected <= 0.0 {
        return Err(EstimatorError::StatisticsInsufficient { detections, u_alpha });
    }
    Ok(corrected)
}

/// Lower bound on the single-photon yield.
///
/// The expression is kept in its printed form, including the
/// `(mu^2 - nu^2) / (mu^2 / 2)` factor on the error term, so results match
/// the reference table digit for digit.
pub fn s1_lower_bound(params: &ProtocolParams, stats: &MeasuredStats) -> Result<f64, EstimatorError> {
    let (mu, nu) = (params.mu, params.nu);
    let snl = s_nu_lower(stats.s_nu, params.n_nu, params.u_alpha)?;
    let prefactor = mu / (mu * nu - nu * nu);
    let decoy_term = snl * nu.exp();
    let signal_term = stats.s_mu * mu.exp() * (nu * nu) / (mu * mu);
    let error_term = stats.e_mu * stats.s_mu * mu.exp() * (mu * mu - nu * nu) / (0.5 * mu * mu);
    Ok(prefactor * (decoy_term - signal_term - error_term))
}

/// Upper bound on the single-photon QBER given a positive yield bound.
pub fn e1_upper_bound(params: &ProtocolParams, stats: &MeasuredStats, s1_l: f64) -> Result<f64, EstimatorError> {
    if !(s1_l > 0.0) {
        return Err(EstimatorError::NoSinglePhotonBound(s1_l));
    }
    Ok(stats.e_mu * stats.s_mu / (s1_l * params.mu * (-params.mu).exp()))
}

/// Secure key-rate lower bound in bits per emitted signal pulse.
pub fn key_rate(params: &ProtocolParams, stats: &MeasuredStats, s1_l: f64, e1_u: f64) -> Result<f64, EstimatorError> {
    let ec_cost = stats.s_mu * params.f_ec * binary_entropy(stats.e_mu)?;
    let single_photon = s1_l * params.mu * (-params.mu).exp() * (1.0 - binary_entropy(e1_u)?);
    Ok(params.q * (-ec_cost + single_photon))
}

/// Runs the full chain `S_nu^L -> S_1^L -> e_1^U -> R^L` for one row.
///
/// When `S_1^L <= 0` there is no error bound; the rate then carries only the
/// error-correction cost. An error bound at or above 1/2 contributes no
/// privacy-amplified key (`1 - H2` is evaluated at 1/2).
pub fn analyze_row(params: &ProtocolParams, stats: &MeasuredStats) -> Result<SecurityBounds, EstimatorError> {
    let wrap = |cause: EstimatorError| EstimatorError::RowNotAnalyzable {
        length_km: stats.length_km,
        cause: Box::new(cause),
    };
    params.validate().map_err(wrap)?;
    stats.validate().map_err(wrap)?;

    let s_nu_lower = s_nu_lower(stats.s_nu, params.n_nu, params.u_alpha).map_err(wrap)?;
    let s1_lower = s1_lower_bound(params, stats).map_err(wrap)?;

    let (e1_upper, r_lower) = if s1_lower > 0.0 {
        let e1 = e1_upper_bound(params, stats, s1_lower).map_err(wrap)?;
        let r = key_rate(params, stats, s1_lower, e1.min(0.5)).map_err(wrap)?;
        (Some(e1), r)
    } else {
        (None, key_rate(params, stats, 0.0, 0.0).map_err(wrap)?)
    };

    let secure = s1_lower > 0.0 && e1_upper.is_some_and(|e| e < 0.5) && r_lower > 0.0;
    Ok(SecurityBounds { s_nu_lower, s1_lower, e1_upper, r_lower, secure })
}
