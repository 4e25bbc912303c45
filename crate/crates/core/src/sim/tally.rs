use std::fmt::Write as _;

use super::{IntensityClass, PulseRecord, SimError};
use crate::estimator::MeasuredStats;
use crate::table::parse_key_values;

/// Labels of the ground-truth photon-number bins; the last one collects
/// every pulse with three or more photons.
pub const PHOTON_BINS: [&str; 4] = ["n0", "n1", "n2", "n3plus"];

const TALLY_HEADER: &str = "# decoy-qkd sim tally v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassTally {
    pub emitted: u64,
    pub clicked: u64,
    /// Clicks in basis-matched slots.
    pub sifted: u64,
    pub errors: u64,
}

impl ClassTally {
    fn add(&mut self, other: &ClassTally) {
        self.emitted += other.emitted;
        self.clicked += other.clicked;
        self.sifted += other.sifted;
        self.errors += other.errors;
    }

    fn record(&mut self, r: &PulseRecord) {
        self.emitted += 1;
        self.clicked += r.clicked as u64;
        self.sifted += r.sifted() as u64;
        self.errors += r.bit_error as u64;
    }

    /// Clicks per emitted pulse.
    pub fn gain(&self) -> f64 {
        if self.emitted == 0 {
            0.0
        } else {
            self.clicked as f64 / self.emitted as f64
        }
    }

    /// Errors among sifted clicks; zero when nothing was sifted.
    pub fn qber(&self) -> f64 {
        if self.sifted == 0 {
            0.0
        } else {
            self.errors as f64 / self.sifted as f64
        }
    }
}

/// Ground truth for signal pulses of one photon-number bin.
pub type PhotonBin = ClassTally;

#[derive(Debug, Clone, PartialEq)]
pub struct SimTally {
    /// [`SimConfig::fingerprint`](super::SimConfig::fingerprint) of the
    /// producing session.
    pub config: String,
    pub length_km: f64,
    pub signal: ClassTally,
    pub decoy: ClassTally,
    /// Signal pulses only, binned by photon number.
    pub truth: [PhotonBin; 4],
}

impl SimTally {
    pub fn zero(config: String) -> Self {
        let length_km = config
            .split(';')
            .find_map(|kv| kv.strip_prefix("length_km="))
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0);
        Self {
            config,
            length_km,
            signal: ClassTally::default(),
            decoy: ClassTally::default(),
            truth: [PhotonBin::default(); 4],
        }
    }

    pub(super) fn record(&mut self, r: &PulseRecord) {
        match r.intensity_class {
            IntensityClass::Decoy => self.decoy.record(r),
            IntensityClass::Signal => {
                self.signal.record(r);
                self.truth[(r.photon_count as usize).min(3)].record(r);
            }
        }
    }

    /// Empirical counting rates and QBERs in the measured-table shape.
    pub fn measured_stats(&self) -> MeasuredStats {
        MeasuredStats {
            length_km: self.length_km,
            s_mu: self.signal.gain(),
            e_mu: self.signal.qber(),
            s_nu: self.decoy.gain(),
            e_nu: self.decoy.qber(),
        }
    }

    /// Plain-text `key=value` form, one field per line, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TALLY_HEADER}");
        let _ = writeln!(out, "config={}", self.config);
        let mut sections = vec![("signal".to_string(), &self.signal), ("decoy".to_string(), &self.decoy)];
        sections.extend(PHOTON_BINS.iter().zip(self.truth.iter()).map(|(n, b)| (format!("truth.{n}"), b)));
        for (prefix, t) in sections {
            let _ = writeln!(out, "{prefix}.emitted={}", t.emitted);
            let _ = writeln!(out, "{prefix}.clicked={}", t.clicked);
            let _ = writeln!(out, "{prefix}.sifted={}", t.sifted);
            let _ = writeln!(out, "{prefix}.errors={}", t.errors);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let kv = parse_key_values(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let get = |key: &str| {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| SimError::Parse(format!("missing key {key}")))
        };
        let count = |key: &str| -> Result<u64, SimError> {
            let v = get(key)?;
            v.parse().map_err(|_| SimError::Parse(format!("{key}: {v:?} is not a count")))
        };
        let class = |prefix: &str| -> Result<ClassTally, SimError> {
            Ok(ClassTally {
                emitted: count(&format!("{prefix}.emitted"))?,
                clicked: count(&format!("{prefix}.clicked"))?,
                sifted: count(&format!("{prefix}.sifted"))?,
                errors: count(&format!("{prefix}.errors"))?,
            })
        };
        let expected_keys = 1 + 4 * (2 + PHOTON_BINS.len());
        if kv.len() != expected_keys {
            return Err(SimError::Parse(format!("expected {expected_keys} keys, got {}", kv.len())));
        }
        let mut tally = SimTally::zero(get("config")?.to_string());
        tally.signal = class("signal")?;
        tally.decoy = class("decoy")?;
        for (slot, name) in tally.truth.iter_mut().zip(PHOTON_BINS) {
            *slot = class(&format!("truth.{name}"))?;
        }
        tally.check()?;
        Ok(tally)
    }

    /// Checks the counting invariants.
    pub fn check(&self) -> Result<(), SimError> {
        for (name, t) in [("signal", &self.signal), ("decoy", &self.decoy)].into_iter().chain(
            PHOTON_BINS.iter().copied().zip(self.truth.iter()),
        ) {
            if !(t.errors <= t.sifted && t.sifted <= t.clicked && t.clicked <= t.emitted) {
                return Err(SimError::Parse(format!("{name}: need errors <= sifted <= clicked <= emitted")));
            }
        }
        let binned: u64 = self.truth.iter().map(|b| b.emitted).sum();
        if binned != self.signal.emitted {
            return Err(SimError::Parse(format!(
                "photon-number bins hold {binned} pulses but {} signal pulses were emitted",
                self.signal.emitted
            )));
        }
        Ok(())
    }

    fn add(&mut self, other: &SimTally) {
        self.signal.add(&other.signal);
        self.decoy.add(&other.decoy);
        for (a, b) in self.truth.iter_mut().zip(other.truth.iter()) {
            a.add(b);
        }
    }
}

/// Field-wise sum of tallies from the same configuration.
pub fn merge_tallies(parts: &[SimTally]) -> Result<SimTally, SimError> {
    let first = parts.first().ok_or_else(|| SimError::Merge("no tallies given".into()))?;
    let mut total = SimTally::zero(first.config.clone());
    for part in parts {
        if part.config != first.config {
            return Err(SimError::Merge(format!("config mismatch: {:?} vs {:?}", part.config, first.config)));
        }
        total.add(part);
    }
    Ok(total)
}
