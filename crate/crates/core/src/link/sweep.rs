use rayon::prelude::*;

use super::{LinkError, LinkModel};
use crate::estimator::{analyze_row, MeasuredStats, ProtocolParams};

/// Bisection stops once the bracket is this narrow.
pub const CUTOFF_RESOLUTION_KM: f64 = 0.1;

/// Key rate against fiber length.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthSweep {
    pub lengths: Vec<f64>,
    /// `None` where the row could not be analyzed (too few decoy detections).
    pub rates: Vec<Option<f64>>,
    /// Largest length with a positive secure rate.
    pub cutoff_km: Option<f64>,
    /// False when the rate is still secure at the last grid point, so the
    /// true cutoff lies beyond the grid.
    pub cutoff_bracketed: bool,
}

/// `start, start + step, ...` up to and including `stop`.
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, LinkError> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(LinkError::InvalidGrid(format!("start={start}, stop={stop}, step={step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}

/// Asymptotic statistics the link would produce at `length_km`.
pub fn expected_stats(model: &LinkModel, params: &ProtocolParams, length_km: f64) -> MeasuredStats {
    MeasuredStats {
        length_km,
        s_mu: model.expected_gain(params.mu, length_km),
        e_mu: model.expected_qber(params.mu, length_km),
        s_nu: model.expected_gain(params.nu, length_km),
        e_nu: model.expected_qber(params.nu, length_km),
    }
}

fn secure_at(model: &LinkModel, params: &ProtocolParams, length_km: f64) -> bool {
    analyze_row(params, &expected_stats(model, params, length_km)).is_ok_and(|b| b.secure)
}

pub fn sweep_key_rate(model: &LinkModel, params: &ProtocolParams, grid: &[f64]) -> Result<LengthSweep, LinkError> {
    model.validate()?;
    params.validate()?;
    if grid.is_empty() {
        return Err(LinkError::InvalidGrid("empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LinkError::InvalidGrid("lengths must be finite, non-negative and strictly increasing".into()));
    }

    let evaluated: Vec<(Option<f64>, bool)> = grid
        .par_iter()
        .map(|&l| match analyze_row(params, &expected_stats(model, params, l)) {
            Ok(b) => (Some(b.r_lower), b.secure),
            Err(_) => (None, false),
        })
        .collect();
    let rates = evaluated.iter().map(|e| e.0).collect();

    let (cutoff_km, cutoff_bracketed) = match evaluated.iter().rposition(|e| e.1) {
        None => (None, false),
        Some(i) if i + 1 == grid.len() => (Some(grid[i]), false),
        Some(i) => {
            let (mut lo, mut hi) = (grid[i], grid[i + 1]);
            while hi - lo > CUTOFF_RESOLUTION_KM {
                let mid = 0.5 * (lo + hi);
                if secure_at(model, params, mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (Some(lo), true)
        }
    };

    Ok(LengthSweep { lengths: grid.to_vec(), rates, cutoff_km, cutoff_bracketed })
}
