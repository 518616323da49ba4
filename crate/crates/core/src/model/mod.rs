//! Domain types shared by every stage of the pipeline.
//!
//! All times are integer picoseconds. Floating point only appears in
//! physical parameters (rates, lifetimes, detunings), never in accumulated
//! time, so runs of 10⁸ pulses do not drift.

pub(crate) mod histogram;
pub(crate) mod seed;
pub(crate) mod tags;

pub use histogram::{merge_histograms, CoincidenceHistogram};
pub use seed::{substream, RunSeed, Stage, StreamRng};
pub use tags::TagStream;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Speed of light expressed so that `ν[GHz] = C / λ[nm]`.
pub const SPEED_OF_LIGHT_NM_GHZ: f64 = 299_792_458.0;

/// A vacuum wavelength in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Wavelength(f64);

impl Wavelength {
    pub fn new(nm: f64) -> Result<Self> {
        if nm.is_finite() && nm > 0.0 {
            Ok(Self(nm))
        } else {
            Err(config_err(format!("wavelength must be positive, got {nm} nm")))
        }
    }

    pub fn from_frequency_ghz(ghz: f64) -> Result<Self> {
        Self::new(SPEED_OF_LIGHT_NM_GHZ / ghz)
    }

    pub fn nm(self) -> f64 {
        self.0
    }

    pub fn frequency_ghz(self) -> f64 {
        SPEED_OF_LIGHT_NM_GHZ / self.0
    }
}

/// Pulsed excitation laser.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrainConfig {
    pub rep_rate_mhz: f64,
    pub pulse_width_ps: f64,
    pub n_pulses: u64,
}

impl PulseTrainConfig {
    pub fn new(rep_rate_mhz: f64, pulse_width_ps: f64, n_pulses: u64) -> Result<Self> {
        let cfg = Self {
            rep_rate_mhz,
            pulse_width_ps,
            n_pulses,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate_mhz.is_finite() && self.rep_rate_mhz > 0.0) {
            return Err(config_err("rep_rate_mhz must be positive"));
        }
        if !(self.pulse_width_ps >= 0.0) {
            return Err(config_err("pulse_width_ps must be non-negative"));
        }
        if self.pulse_width_ps >= self.period_ps() as f64 {
            return Err(config_err("pulse width must be shorter than the repetition period"));
        }
        Ok(())
    }

    /// Repetition period rounded to the picosecond grid.
    pub fn period_ps(&self) -> u64 {
        (1.0e6 / self.rep_rate_mhz).round() as u64
    }

    pub fn pulse_start_ps(&self, pulse_index: u64) -> u64 {
        pulse_index * self.period_ps()
    }

    /// Total simulated duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.n_pulses as f64 * self.period_ps() as f64 * 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

/// Where a photon came from. Set at creation, never changed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Signal,
    Multiphoton,
    Noise,
}

/// One photon travelling through the setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonRecord {
    pub emit_time_ps: u64,
    pub wavelength: Wavelength,
    /// Offset from the nominal line centre, in GHz.
    pub detuning_ghz: f64,
    pub polarization: Polarization,
    pub origin: Origin,
    pub pulse_index: u64,
}

impl PhotonRecord {
    /// Optical frequency including detuning.
    pub fn frequency_ghz(&self) -> f64 {
        self.wavelength.frequency_ghz() + self.detuning_ghz
    }
}
