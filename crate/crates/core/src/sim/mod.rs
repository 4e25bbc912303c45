//! Pulse-level Monte Carlo of a one-detector, two-intensity decoy session.
//!
//! Each pulse picks an intensity class, a Poisson photon number, and
//! independent uniform phases for Alice and Bob from `{0, pi/2, pi, 3pi/2}`.
//! Phases `0, pi/2` encode bit 0 and `pi, 3pi/2` encode bit 1. Bob's detector
//! fires with the photon-number conditioned probability
//! `1 - (1 - y0) (1 - eta (1 + V cos dphi) / 2)^n`, whose Poisson average is
//! the aggregate click model of [`LinkModel`].
//!
//! # Random streams
//!
//! A session is seeded by one `u64`. Pulse `i` reads exactly four `u64`s,
//! i.e. 32-bit words `[8i, 8i + 8)`, from the ChaCha8 keystream of that seed,
//! in the order class, photon number, phases, click. Any chunking of the
//! session therefore reproduces the sequential run bit for bit.

use std::f64::consts::FRAC_PI_2;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{EstimatorError, ProtocolParams};
use crate::link::{LinkError, LinkModel};

mod soundness;
mod tally;

pub use soundness::{analyze_tally, soundness_report, SoundnessReport};
pub use tally::{merge_tallies, ClassTally, PhotonBin, SimTally, PHOTON_BINS};

/// Pulses per parallel work item.
pub const CHUNK_PULSES: u64 = 1 << 16;

const WORDS_PER_PULSE: u128 = 8;

/// Photon numbers with precomputed click probabilities.
const TABLE_PHOTONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_pulses: u64,
    /// Probability that a pulse is a decoy.
    pub decoy_fraction: f64,
    pub seed: u64,
    pub length_km: f64,
    pub link: LinkModel,
    /// Only `mu` and `nu` drive the simulation; the rest is used when the
    /// tally is analyzed.
    pub params: ProtocolParams,
    /// Residual error of Bob's working points, added to every phase
    /// difference (radians).
    pub phase_error: f64,
}

impl SimConfig {
    pub fn new(n_pulses: u64, seed: u64, length_km: f64, link: LinkModel, params: ProtocolParams) -> Self {
        Self { n_pulses, decoy_fraction: 0.5, seed, length_km, link, params, phase_error: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_pulses == 0 {
            return Err(SimError::InvalidConfig("n_pulses must be >= 1".into()));
        }
        if !(self.decoy_fraction > 0.0 && self.decoy_fraction < 1.0) {
            return Err(SimError::InvalidConfig(format!("decoy_fraction must lie in (0, 1), got {}", self.decoy_fraction)));
        }
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(SimError::InvalidConfig(format!("length_km = {}", self.length_km)));
        }
        if !self.phase_error.is_finite() {
            return Err(SimError::InvalidConfig("phase_error must be finite".into()));
        }
        // Zero intensities are allowed here for dark-count studies.
        if !(self.params.mu >= 0.0 && self.params.nu >= 0.0 && self.params.mu.is_finite() && self.params.nu.is_finite()) {
            return Err(SimError::InvalidConfig(format!("intensities mu={}, nu={}", self.params.mu, self.params.nu)));
        }
        self.link.validate()?;
        Ok(())
    }

    /// Everything that must agree for two tallies to be merged: all fields
    /// except the seed and the pulse count.
    pub fn fingerprint(&self) -> String {
        let l = &self.link;
        let p = &self.params;
        format!(
            "mu={:e};nu={:e};decoy_fraction={:e};length_km={:e};alpha_db_per_km={:e};excess_loss_db={:e};eta_det={:e};y0={:e};visibility={:e};phase_error={:e}",
            p.mu, p.nu, self.decoy_fraction, self.length_km, l.alpha_db_per_km, l.excess_loss_db, l.eta_det, l.y0, l.visibility, self.phase_error
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("cannot merge tallies: {0}")]
    Merge(String),
    #[error("malformed tally: {0}")]
    Parse(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntensityClass {
    Signal,
    Decoy,
}

/// One simulated pulse. Phases are stored as quarter turns `0..4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseRecord {
    pub intensity_class: IntensityClass,
    pub alice_phase: u8,
    pub bob_phase: u8,
    pub photon_count: u32,
    pub clicked: bool,
    pub basis_matched: bool,
    pub bit_error: bool,
}

impl PulseRecord {
    pub fn alice_phase_radians(&self) -> f64 {
        self.alice_phase as f64 * FRAC_PI_2
    }

    pub fn bob_phase_radians(&self) -> f64 {
        self.bob_phase as f64 * FRAC_PI_2
    }

    pub fn sifted(&self) -> bool {
        self.clicked && self.basis_matched
    }
}

/// Bit carried by a phase: `{0, pi/2} -> 0`, `{pi, 3pi/2} -> 1`.
pub fn phase_bit(quarter_turns: u8) -> u8 {
    (quarter_turns & 3) / 2
}

fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Per-class lookup tables built once per session.
struct ClassPlan {
    mean: f64,
    /// Cumulative Poisson probabilities for `n = 0, 1, ...` until the tail
    /// is below rounding.
    cdf: Vec<f64>,
    /// `click[d][n]` for quarter-turn difference `d`.
    click: [[f64; TABLE_PHOTONS]; 4],
}

struct Plan {
    decoy_fraction: f64,
    signal: ClassPlan,
    decoy: ClassPlan,
    link: LinkModel,
    length_km: f64,
    phase_error: f64,
}

impl Plan {
    fn new(config: &SimConfig) -> Self {
        let class = |mean: f64| {
            let mut cdf = Vec::new();
            let mut p = (-mean).exp();
            let mut acc = 0.0;
            let mut n = 0u32;
            loop {
                acc += p;
                cdf.push(acc);
                n += 1;
                p *= mean / n as f64;
                if (1.0 - acc) < 1e-17 || p == 0.0 || n > 1000 {
                    break;
                }
            }
            let mut click = [[0.0; TABLE_PHOTONS]; 4];
            for (d, row) in click.iter_mut().enumerate() {
                for (n, c) in row.iter_mut().enumerate() {
                    *c = config.link.click_probability_n(n as u32, d as f64 * FRAC_PI_2 + config.phase_error, config.length_km);
                }
            }
            ClassPlan { mean, cdf, click }
        };
        Self {
            decoy_fraction: config.decoy_fraction,
            signal: class(config.params.mu),
            decoy: class(config.params.nu),
            link: config.link,
            length_km: config.length_km,
            phase_error: config.phase_error,
        }
    }

    fn photon_count(class: &ClassPlan, u: f64) -> u32 {
        match class.cdf.iter().position(|&c| u < c) {
            Some(n) => n as u32,
            // u fell into the truncated tail; walk the law further.
            None => {
                let mut n = class.cdf.len() as u32;
                let mut acc = *class.cdf.last().unwrap_or(&0.0);
                let mut p = (-class.mean).exp() * (0..n).fold(1.0, |w, k| w * class.mean / (k + 1) as f64);
                while u >= acc + p && p > 0.0 {
                    acc += p;
                    n += 1;
                    p *= class.mean / n as f64;
                }
                n
            }
        }
    }

    fn pulse(&self, rng: &mut ChaCha8Rng) -> PulseRecord {
        let u_class = unit_f64(rng.next_u64());
        let u_photon = unit_f64(rng.next_u64());
        let phases = rng.next_u64();
        let u_click = unit_f64(rng.next_u64());

        let (intensity_class, class) = if u_class < self.decoy_fraction {
            (IntensityClass::Decoy, &self.decoy)
        } else {
            (IntensityClass::Signal, &self.signal)
        };
        let photon_count = Self::photon_count(class, u_photon);
        let alice_phase = (phases & 3) as u8;
        let bob_phase = ((phases >> 2) & 3) as u8;
        let diff = alice_phase.wrapping_sub(bob_phase) & 3;
        let p_click = match class.click[diff as usize].get(photon_count as usize) {
            Some(&p) => p,
            None => self.link.click_probability_n(photon_count, diff as f64 * FRAC_PI_2 + self.phase_error, self.length_km),
        };
        let clicked = u_click < p_click;
        let basis_matched = diff & 1 == 0;
        let bit_error = clicked && basis_matched && phase_bit(alice_phase) != phase_bit(bob_phase);
        PulseRecord { intensity_class, alice_phase, bob_phase, photon_count, clicked, basis_matched, bit_error }
    }
}

fn stream_at(seed: u64, first_pulse: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(first_pulse as u128 * WORDS_PER_PULSE);
    rng
}

/// Pulses `first_pulse .. first_pulse + count` of the session, one record each.
pub fn pulse_records(config: &SimConfig, first_pulse: u64, count: u64) -> Result<Vec<PulseRecord>, SimError> {
    config.validate()?;
    let plan = Plan::new(config);
    let mut rng = stream_at(config.seed, first_pulse);
    Ok((0..count).map(|_| plan.pulse(&mut rng)).collect())
}

fn run_range(config: &SimConfig, plan: &Plan, first_pulse: u64, count: u64) -> SimTally {
    let mut tally = SimTally::zero(config.fingerprint());
    let mut rng = stream_at(config.seed, first_pulse);
    for _ in 0..count {
        tally.record(&plan.pulse(&mut rng));
    }
    tally
}

/// Simulates pulses `first_pulse .. first_pulse + count` of the session
/// described by `config` (whose `n_pulses` is ignored).
pub fn run_chunk(config: &SimConfig, first_pulse: u64, count: u64) -> Result<SimTally, SimError> {
    config.validate()?;
    Ok(run_range(config, &Plan::new(config), first_pulse, count))
}

/// Runs the session in fixed-size chunks on the rayon pool and merges the
/// chunk tallies.
pub fn run_session(config: &SimConfig) -> Result<SimTally, SimError> {
    config.validate()?;
    let plan = Plan::new(config);
    let chunks = config.n_pulses.div_ceil(CHUNK_PULSES);
    let parts: Vec<SimTally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK_PULSES;
            run_range(config, &plan, first, CHUNK_PULSES.min(config.n_pulses - first))
        })
        .collect();
    merge_tallies(&parts)
}

/// Single-threaded run over one stream; identical to [`run_session`].
pub fn run_session_sequential(config: &SimConfig) -> Result<SimTally, SimError> {
    config.validate()?;
    Ok(run_range(config, &Plan::new(config), 0, config.n_pulses))
}
