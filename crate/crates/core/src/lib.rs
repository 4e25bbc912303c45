//! Two-intensity decoy-state QKD toolkit.
//!
//! The crate is split along the lines of the analysis pipeline:
//!
//! * [`estimator`] turns measured signal/decoy counting rates and QBERs into
//!   single-photon bounds and a secure key-rate lower bound.
//! * [`link`] is an analytic model of a fiber link read out by a single
//!   interferometric photon detector, with a least-squares fit to measured
//!   tables and key-rate-versus-length sweeps.
//! * [`sim`] is a pulse-level Monte Carlo of the one-detector phase-coded
//!   session, keeping per-photon-number ground truth so the estimator's bounds
//!   can be checked.
//! * [`fringe`] simulates and inverts the phase scan used to locate the
//!   interferometer's working points.
//! * [`table`] and [`dataset`] hold the delimited-text formats and the bundled
//!   reference measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod estimator;
pub mod fringe;
pub mod link;
pub mod sim;
pub mod table;

pub use estimator::{
    analyze_row, binary_entropy, e1_upper_bound, key_rate, s1_lower_bound, s_nu_lower,
    EstimatorError, MeasuredStats, ProtocolParams, SecurityBounds,
};
pub use fringe::{fit_fringe, fit_fringe_with_dark, simulate_scan, working_points, FringeError, FringeFit, ScanCurve, ScanSettings};
pub use link::{fit_link, sweep_key_rate, LengthSweep, LinkError, LinkFit, LinkModel};
pub use sim::{merge_tallies, run_session, soundness_report, SimConfig, SimError, SimTally, SoundnessReport};
pub use table::{BoundsRow, TableError};
