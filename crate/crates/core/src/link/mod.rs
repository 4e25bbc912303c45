//! Analytic model of a fiber link read out by one interferometric detector.
//!
//! Alice and Bob each apply one of four phases `{0, pi/2, pi, 3pi/2}`. Bob's
//! single detector clicks preferentially when the phase difference is zero;
//! at difference `pi` the light leaks into the detector only through
//! imperfect visibility. A coherent pulse with mean photon number `m` that
//! reaches the interferometer with transmittance `eta` therefore clicks with
//!
//! ```text
//! p = 1 - (1 - y0) exp(-eta m (1 + V cos dphi) / 2)
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::estimator::EstimatorError;

mod fit;
mod sweep;

pub use fit::{fit_link, FitResidual, LinkFit};
pub use sweep::{expected_stats, sweep_key_rate, uniform_grid, LengthSweep};

/// The four phase differences a pulse can see, in slot order.
pub const PHASE_DIFFS: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub alpha_db_per_km: f64,
    /// Fixed insertion loss, including receiver optics.
    pub excess_loss_db: f64,
    pub eta_det: f64,
    /// Dark-count probability per gate.
    pub y0: f64,
    /// Fringe visibility.
    pub visibility: f64,
}

impl LinkModel {
    pub const DEFAULT_Y0: f64 = 5e-7;
    pub const DEFAULT_VISIBILITY: f64 = 0.99;

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |what: &str, v: f64| Err(LinkError::InvalidModel(format!("{what} = {v}")));
        if !(self.alpha_db_per_km >= 0.0 && self.alpha_db_per_km.is_finite()) {
            return bad("alpha_db_per_km", self.alpha_db_per_km);
        }
        if !self.excess_loss_db.is_finite() {
            return bad("excess_loss_db", self.excess_loss_db);
        }
        if !(0.0..=1.0).contains(&self.eta_det) {
            return bad("eta_det", self.eta_det);
        }
        if !(0.0..=1.0).contains(&self.y0) {
            return bad("y0", self.y0);
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return bad("visibility", self.visibility);
        }
        Ok(())
    }

    /// Detector efficiency times fiber and insertion loss.
    pub fn transmittance(&self, length_km: f64) -> f64 {
        let loss_db = self.alpha_db_per_km * length_km + self.excess_loss_db;
        (self.eta_det * 10f64.powf(-loss_db / 10.0)).clamp(0.0, 1.0)
    }

    /// Fraction of a photon's detection probability routed to the detector
    /// at a given phase difference.
    fn fringe_weight(&self, phase_diff: f64) -> f64 {
        (1.0 + self.visibility * phase_diff.cos()) / 2.0
    }

    pub fn click_probability(&self, mean_photons: f64, phase_diff: f64, length_km: f64) -> f64 {
        let eta = self.transmittance(length_km);
        1.0 - (1.0 - self.y0) * (-eta * mean_photons * self.fringe_weight(phase_diff)).exp()
    }

    /// Click probability for a pulse holding exactly `photons` photons.
    ///
    /// Averaging this over a Poisson photon number gives back
    /// [`click_probability`](Self::click_probability).
    pub fn click_probability_n(&self, photons: u32, phase_diff: f64, length_km: f64) -> f64 {
        let per_photon = (self.transmittance(length_km) * self.fringe_weight(phase_diff)).clamp(0.0, 1.0);
        1.0 - (1.0 - self.y0) * (1.0 - per_photon).powi(photons as i32)
    }

    /// Clicks per emitted pulse, averaged over the four equiprobable phase
    /// differences.
    pub fn expected_gain(&self, mean_photons: f64, length_km: f64) -> f64 {
        PHASE_DIFFS
            .iter()
            .map(|&d| self.click_probability(mean_photons, d, length_km))
            .sum::<f64>()
            / 4.0
    }

    /// QBER among basis-matched slots, where difference `pi` is the error port.
    pub fn expected_qber(&self, mean_photons: f64, length_km: f64) -> f64 {
        let right = self.click_probability(mean_photons, 0.0, length_km);
        let wrong = self.click_probability(mean_photons, PI, length_km);
        if right + wrong == 0.0 {
            return 0.0;
        }
        wrong / (right + wrong)
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            alpha_db_per_km: 0.2,
            excess_loss_db: 0.0,
            eta_det: 1.0,
            y0: Self::DEFAULT_Y0,
            visibility: Self::DEFAULT_VISIBILITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("invalid link model: {0}")]
    InvalidModel(String),
    #[error("unidentifiable: {0}")]
    Unidentifiable(String),
    #[error("invalid length grid: {0}")]
    InvalidGrid(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}
