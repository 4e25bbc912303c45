//! Checks the estimator's bounds against the simulator's ground truth.

use super::SimTally;
use crate::estimator::{analyze_row, EstimatorError, ProtocolParams, SecurityBounds};

/// Ground truth next to the bounds computed from the same tally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundnessReport {
    /// Clicks per emitted single-photon signal pulse (a yield, the quantity
    /// `S_1^L` bounds).
    pub true_s1: Option<f64>,
    /// Errors among sifted single-photon signal clicks.
    pub true_e1: Option<f64>,
    pub s1_lower: f64,
    pub e1_upper: Option<f64>,
    /// `s1_lower <= true_s1`; `None` when no single-photon pulse was emitted.
    pub s1_holds: Option<bool>,
    /// `e1_upper >= true_e1`; `None` when either side is unavailable.
    pub e1_holds: Option<bool>,
}

impl SoundnessReport {
    /// No available check is violated.
    pub fn holds(&self) -> bool {
        self.s1_holds != Some(false) && self.e1_holds != Some(false)
    }
}

/// Analyzes the tally's empirical statistics with the pulse budgets it
/// actually spent.
pub fn analyze_tally(tally: &SimTally, params: &ProtocolParams) -> Result<SecurityBounds, EstimatorError> {
    let budget = ProtocolParams { n_mu: tally.signal.emitted.max(1), n_nu: tally.decoy.emitted.max(1), ..*params };
    analyze_row(&budget, &tally.measured_stats())
}

pub fn soundness_report(tally: &SimTally, bounds: &SecurityBounds) -> SoundnessReport {
    let single = &tally.truth[1];
    let true_s1 = (single.emitted > 0).then(|| single.clicked as f64 / single.emitted as f64);
    let true_e1 = (single.sifted > 0).then(|| single.errors as f64 / single.sifted as f64);
    let s1_holds = true_s1.map(|s1| bounds.s1_lower <= s1);
    let e1_holds = match (bounds.e1_upper, true_e1) {
        (Some(bound), Some(truth)) => Some(bound >= truth),
        _ => None,
    };
    SoundnessReport { true_s1, true_e1, s1_lower: bounds.s1_lower, e1_upper: bounds.e1_upper, s1_holds, e1_holds }
}
