//! Two-photon interference visibility from co- and cross-polarized
//! correlation histograms.
//!
//! Coincidence model for the delay-matched interferometer, with every area
//! normalized by an uncorrelated side peak:
//!
//! ```text
//! A = C·(1 − k·(1−ε)²·M) + D·g²,    k = 2·R₂T₂ / (R₂² + T₂²)
//! ```
//!
//! `C` counts single-photon pairs from consecutive pulses that meet at the
//! second splitter, `D` counts same-pulse photon pairs travelling one arm.
//! Cross polarization sets `M = 0`, so `A⊥ − A∥ = C·k·(1−ε)²·M`.

use crate::analysis::peaks::integrate_peaks;
use crate::error::{config_err, Error, Result};
use crate::model::CoincidenceHistogram;

/// Values above this are reported but flagged.
pub const V_CORR_FLAG: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityCalibration {
    /// First splitter.
    pub r1: f64,
    pub t1: f64,
    /// Second splitter.
    pub r2: f64,
    pub t2: f64,
    pub epsilon: f64,
    pub g2: f64,
}

impl Default for VisibilityCalibration {
    fn default() -> Self {
        Self {
            r1: 0.5,
            t1: 0.5,
            r2: 0.5,
            t2: 0.5,
            epsilon: 0.0,
            g2: 0.0,
        }
    }
}

impl VisibilityCalibration {
    /// Per-photon-pair side-peak weight.
    fn side(&self) -> f64 {
        (self.t1 * self.t2 + self.r1 * self.r2) * (self.t1 * self.r2 + self.r1 * self.t2)
    }

    /// Two-photon coefficient `C`.
    pub fn two_photon_coefficient(&self) -> f64 {
        self.t1 * self.r1 * (self.r2 * self.r2 + self.t2 * self.t2) / self.side()
    }

    /// Same-pulse coefficient `D`.
    pub fn multiphoton_coefficient(&self) -> f64 {
        (self.t1 * self.t1 + self.r1 * self.r1) * self.r2 * self.t2 / self.side()
    }

    pub fn interference_factor(&self) -> f64 {
        2.0 * self.r2 * self.t2 / (self.r2 * self.r2 + self.t2 * self.t2)
    }

    /// Normalized central area for ground-truth overlap `m` (`m = 0` for cross).
    pub fn expected_central_area(&self, m: f64) -> f64 {
        let c = self.two_photon_coefficient();
        c * (1.0 - self.interference_factor() * (1.0 - self.epsilon).powi(2) * m)
            + self.multiphoton_coefficient() * self.g2
    }

    /// Overlap implied by a pair of normalized central areas.
    pub fn invert(&self, a_par: f64, a_perp: f64) -> f64 {
        (a_perp - a_par)
            / ((a_perp - self.multiphoton_coefficient() * self.g2)
                * self.interference_factor()
                * (1.0 - self.epsilon).powi(2))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if !(ok(self.r1) && ok(self.t1) && ok(self.r2) && ok(self.t2) && ok(self.epsilon) && self.g2 >= 0.0) {
            return Err(config_err("calibration ratios must lie in [0, 1] and g2 must be non-negative"));
        }
        if self.r2 * self.t2 == 0.0 || self.r1 * self.t1 == 0.0 || self.epsilon >= 1.0 {
            return Err(config_err("calibration describes an interferometer without interference"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityResult {
    pub a_par: f64,
    pub a_par_err: f64,
    pub a_perp: f64,
    pub a_perp_err: f64,
    pub v_raw: f64,
    pub v_raw_err: f64,
    pub v_corr: f64,
    pub v_corr_err: f64,
    pub calib: VisibilityCalibration,
    pub flagged: bool,
}

/// Central peak area divided by the mean side peak at `±norm_delay_ps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub area: f64,
    pub err: f64,
}

pub fn normalized_central(
    h: &CoincidenceHistogram,
    rep_period_ps: u64,
    half_window_ps: u64,
    norm_delay_ps: i64,
) -> Result<Normalized> {
    let peaks = integrate_peaks(h, rep_period_ps, half_window_ps)?;
    let central = peaks
        .area_at(0)
        .ok_or_else(|| config_err("histogram does not cover zero delay"))? as f64;
    let side: Vec<u64> = [norm_delay_ps, -norm_delay_ps]
        .iter()
        .filter_map(|&d| peaks.area_at(d))
        .collect();
    let side_total: u64 = side.iter().sum();
    if side.is_empty() || side_total == 0 {
        return Err(config_err(format!("no populated normalization peak at {norm_delay_ps} ps")));
    }
    let norm = side_total as f64 / side.len() as f64;
    let area = central / norm;
    let err = area * (1.0 / central.max(1.0) + 1.0 / side_total as f64).sqrt();
    Ok(Normalized { area, err })
}

/// Raw and corrected visibility. `norm_delay_ps` must be a multiple of
/// `rep_period_ps` covered by both histograms.
pub fn estimate_visibility(
    h_co: &CoincidenceHistogram,
    h_cross: &CoincidenceHistogram,
    norm_delay_ps: i64,
    rep_period_ps: u64,
    half_window_ps: u64,
    calib: VisibilityCalibration,
) -> Result<VisibilityResult> {
    calib.validate()?;
    let par = normalized_central(h_co, rep_period_ps, half_window_ps, norm_delay_ps)?;
    let perp = normalized_central(h_cross, rep_period_ps, half_window_ps, norm_delay_ps)?;
    if perp.area <= 0.0 {
        return Err(Error::Domain("cross-polarized central area is zero".into()));
    }
    let v_raw = (perp.area - par.area) / perp.area;
    // d v_raw = (A∥/A⊥²) dA⊥ − (1/A⊥) dA∥
    let v_raw_err = ((par.area / perp.area.powi(2) * perp.err).powi(2) + (par.err / perp.area).powi(2)).sqrt();
    let v_corr = calib.invert(par.area, perp.area);
    let h = 1e-6;
    let dpar = (calib.invert(par.area + h, perp.area) - calib.invert(par.area - h, perp.area)) / (2.0 * h);
    let dperp = (calib.invert(par.area, perp.area + h) - calib.invert(par.area, perp.area - h)) / (2.0 * h);
    let v_corr_err = ((dpar * par.err).powi(2) + (dperp * perp.err).powi(2)).sqrt();
    Ok(VisibilityResult {
        a_par: par.area,
        a_par_err: par.err,
        a_perp: perp.area,
        a_perp_err: perp.err,
        v_raw,
        v_raw_err,
        v_corr,
        v_corr_err,
        calib,
        flagged: !v_corr.is_finite() || v_corr > V_CORR_FLAG,
    })
}
