//! Peak-area integration of pulsed correlation histograms and the g²(0)
//! estimate built on it.

use crate::error::{config_err, Error, Result};
use crate::model::CoincidenceHistogram;

/// Areas of the peaks found at integer multiples of the repetition period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakIntegration {
    pub peak_centers: Vec<i64>,
    pub half_window_ps: i64,
    pub areas: Vec<u64>,
}

impl PeakIntegration {
    pub fn area_at(&self, center_ps: i64) -> Option<u64> {
        self.peak_centers.iter().position(|&c| c == center_ps).map(|i| self.areas[i])
    }

    /// Appends the peaks of `other` that are not already present.
    pub fn extend(&mut self, other: &PeakIntegration) -> Result<()> {
        if other.half_window_ps != self.half_window_ps {
            return Err(config_err("peak integrations use different windows"));
        }
        for (&c, &a) in other.peak_centers.iter().zip(&other.areas) {
            if self.area_at(c).is_none() {
                self.peak_centers.push(c);
                self.areas.push(a);
            }
        }
        Ok(())
    }
}

/// Sums the bins whose centers lie within `half_window` of each multiple of
/// `rep_period` that is fully covered by `h`.
pub fn integrate_peaks(h: &CoincidenceHistogram, rep_period_ps: u64, half_window_ps: u64) -> Result<PeakIntegration> {
    let (t, hw) = (rep_period_ps as i64, half_window_ps as i64);
    if t <= 2 * hw {
        return Err(config_err(format!(
            "repetition period {t} ps must exceed twice the half window {hw} ps"
        )));
    }
    let mut out = PeakIntegration {
        peak_centers: Vec::new(),
        half_window_ps: hw,
        areas: Vec::new(),
    };
    if h.is_empty() {
        return Ok(out);
    }
    let first = h.bin_center(0);
    let last = h.bin_center(h.len() - 1);
    let w = h.bin_width_ps;
    let k_lo = (first + hw).div_euclid(t) + i64::from((first + hw).rem_euclid(t) != 0);
    let k_hi = (last - hw).div_euclid(t);
    for k in k_lo..=k_hi {
        let c = k * t;
        // First bin whose center is ≥ c − hw.
        let i0 = (c - hw - first + w - 1).div_euclid(w).max(0) as usize;
        let i1 = ((c + hw - first).div_euclid(w) as usize).min(h.len() - 1);
        let area = if i0 <= i1 { h.counts[i0..=i1].iter().sum() } else { 0 };
        out.peak_centers.push(c);
        out.areas.push(area);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Estimate {
    pub g2: f64,
    pub g2_err: f64,
    pub central_area: u64,
    /// Mean area of the reference peak(s).
    pub reference_area: f64,
}

/// `area(0) / area(reference)` with Poisson counting errors. When peaks at
/// both `+reference` and `−reference` exist their mean is used.
pub fn estimate_g2(peaks: &PeakIntegration, reference_delay_ps: i64) -> Result<G2Estimate> {
    let central = peaks
        .area_at(0)
        .ok_or_else(|| config_err("no central peak in the integration"))?;
    let refs: Vec<u64> = [reference_delay_ps, -reference_delay_ps]
        .iter()
        .filter(|&&d| d != 0)
        .filter_map(|&d| peaks.area_at(d))
        .collect();
    if refs.is_empty() {
        return Err(config_err(format!("no peak at the reference delay {reference_delay_ps} ps")));
    }
    let ref_total: u64 = refs.iter().sum();
    if ref_total == 0 {
        return Err(Error::Domain("reference peak area is zero".into()));
    }
    let reference_area = ref_total as f64 / refs.len() as f64;
    let g2 = central as f64 / reference_area;
    let g2_err = if central == 0 {
        // One-count upper scale keeps the error informative on an empty peak.
        1.0 / reference_area
    } else {
        g2 * (1.0 / central as f64 + 1.0 / ref_total as f64).sqrt()
    };
    Ok(G2Estimate {
        g2,
        g2_err,
        central_area: central,
        reference_area,
    })
}

/// Nearest multiple of `rep_period` to `delay`.
pub fn snap_to_period(delay_ps: i64, rep_period_ps: u64) -> i64 {
    let t = rep_period_ps as i64;
    (delay_ps as f64 / t as f64).round() as i64 * t
}
