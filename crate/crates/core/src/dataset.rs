//! Bundled reference measurements and their derived bounds.

use crate::estimator::MeasuredStats;
use crate::table::parse_measured_table;

/// Measured signal/decoy statistics over six fiber lengths, as a
/// header-bearing CSV table.
pub const REFERENCE_CSV: &str = include_str!("../data/reference.csv");

/// SHA-256 of [`REFERENCE_CSV`].
pub const REFERENCE_SHA256: &str = "3bef7b35143dcc45cbf9fca23383af0b5c9ed3fe1c80c6f996ab470731c8c256";

/// Published bounds for the bundled rows, in the same order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceBounds {
    pub length_km: f64,
    pub s1_lower: f64,
    pub e1_upper: f64,
    pub r_lower: f64,
}

/// The 83.7 km single-photon bound is printed as 1.69e-5 in the source
/// table; 1.69e-4 is the value consistent with that row's error bound and
/// with direct recomputation.
pub const REFERENCE_BOUNDS: [ReferenceBounds; 6] = [
    ReferenceBounds { length_km: 123.6, s1_lower: 3.78e-5, e1_upper: 0.0607, r_lower: 9.59e-7 },
    ReferenceBounds { length_km: 108.0, s1_lower: 8.09e-5, e1_upper: 0.0426, r_lower: 4.89e-6 },
    ReferenceBounds { length_km: 97.0, s1_lower: 1.41e-4, e1_upper: 0.0399, r_lower: 9.29e-6 },
    ReferenceBounds { length_km: 83.7, s1_lower: 1.69e-4, e1_upper: 0.0409, r_lower: 1.07e-5 },
    ReferenceBounds { length_km: 62.1, s1_lower: 4.46e-4, e1_upper: 0.0211, r_lower: 4.77e-5 },
    ReferenceBounds { length_km: 49.2, s1_lower: 1.09e-3, e1_upper: 0.0247, r_lower: 1.06e-4 },
];

/// As printed, before the correction above.
pub const PRINTED_S1_83_7_KM: f64 = 1.69e-5;

pub fn reference_measurements() -> Vec<MeasuredStats> {
    parse_measured_table(REFERENCE_CSV).expect("bundled table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_rows() {
        let t = reference_measurements();
        assert_eq!(t.len(), 6);
        assert_eq!(t[0], MeasuredStats { length_km: 123.6, s_mu: 3.8e-5, e_mu: 0.0199, s_nu: 1.36e-5, e_nu: 0.041 });
        assert_eq!(t[5].s_mu, 8.6e-4);
        for (row, reference) in t.iter().zip(REFERENCE_BOUNDS.iter()) {
            assert_eq!(row.length_km, reference.length_km);
        }
    }
}
