//! Decay-time fit: exponential convolved with a measured IRF.
//!
//! Model for bin `i`: `A · Σ_j irf_j · K(i − j) + B`, where `irf` is the
//! normalized IRF histogram and `K(m)` is the probability that an
//! exponential delay starting at `t0` lands in the bin `m` widths away.

use nalgebra::DMatrix;

use crate::error::{config_err, Error, Result};
use crate::fit::{levenberg_marquardt, numeric_column, LeastSquares, LmOptions};
use crate::model::CoincidenceHistogram;

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeFit {
    pub tau_ps: f64,
    pub tau_err_ps: f64,
    pub amplitude: f64,
    pub baseline: f64,
    /// Delay of the decay onset relative to the IRF.
    pub offset_ps: f64,
    pub offset_err_ps: f64,
    pub irf_sigma_used_ps: f64,
    /// RMS of the variance-normalized residuals.
    pub residual_rms: f64,
    pub iterations: usize,
}

/// IRF bins below this fraction of the IRF maximum are dropped.
const IRF_TRIM: f64 = 1e-4;

struct DecayProblem<'a> {
    y: &'a [f64],
    /// Inverse standard deviation per bin.
    inv_sigma: Vec<f64>,
    /// `(bin offset, weight)` of the trimmed, normalized IRF.
    irf: Vec<(i64, f64)>,
    bin_width: f64,
    /// Distance from a bin center to its lower edge.
    half_low: f64,
}

impl DecayProblem<'_> {
    fn kernel(&self, tau: f64, t0: f64) -> (Vec<f64>, i64) {
        let n = self.y.len() as i64;
        let (jmin, jmax) = (self.irf.first().map_or(0, |e| e.0), self.irf.last().map_or(0, |e| e.0));
        let mmin = -jmax;
        let mmax = n - 1 - jmin;
        let cdf = |u: f64| if u > t0 { -(-(u - t0) / tau).exp_m1() } else { 0.0 };
        let k = (mmin..=mmax)
            .map(|m| {
                let lo = m as f64 * self.bin_width - self.half_low;
                cdf(lo + self.bin_width) - cdf(lo)
            })
            .collect();
        (k, mmin)
    }

    fn convolved(&self, tau: f64, t0: f64) -> Vec<f64> {
        let (k, mmin) = self.kernel(tau, t0);
        (0..self.y.len() as i64)
            .map(|i| self.irf.iter().map(|&(j, w)| w * k[(i - j - mmin) as usize]).sum())
            .collect()
    }

    fn model(&self, p: &[f64]) -> Vec<f64> {
        self.convolved(p[1], p[2]).into_iter().map(|c| p[0] * c + p[3]).collect()
    }
}

impl LeastSquares for DecayProblem<'_> {
    fn n_params(&self) -> usize {
        4
    }

    fn n_residuals(&self) -> usize {
        self.y.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, m) in self.model(p).into_iter().enumerate() {
            out[i] = (self.y[i] - m) * self.inv_sigma[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let conv = self.convolved(p[1], p[2]);
        for (i, c) in conv.into_iter().enumerate() {
            jac[(i, 0)] = -c * self.inv_sigma[i];
            jac[(i, 3)] = -self.inv_sigma[i];
        }
        numeric_column(self, p, 1, jac);
        numeric_column(self, p, 2, jac);
    }

    fn feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0 && p.iter().all(|x| x.is_finite())
    }
}

fn trimmed_irf(irf: &CoincidenceHistogram) -> Result<(Vec<(i64, f64)>, f64)> {
    let max = irf.counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(config_err("IRF histogram is empty"));
    }
    let keep: Vec<(i64, f64)> = irf
        .counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c as f64 >= IRF_TRIM * max as f64)
        .map(|(j, &c)| (j as i64, c as f64))
        .collect();
    let total: f64 = keep.iter().map(|e| e.1).sum();
    let w = irf.bin_width_ps as f64;
    let mean = keep.iter().map(|&(j, c)| j as f64 * w * c).sum::<f64>() / total;
    let var = keep.iter().map(|&(j, c)| (j as f64 * w - mean).powi(2) * c).sum::<f64>() / total;
    Ok((keep.into_iter().map(|(j, c)| (j, c / total)).collect(), var.sqrt()))
}

fn centroid(h: &CoincidenceHistogram, baseline: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &c) in h.counts.iter().enumerate() {
        let v = (c as f64 - baseline).max(0.0);
        num += v * h.bin_center(i) as f64;
        den += v;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn fit_lifetime(h: &CoincidenceHistogram, irf: &CoincidenceHistogram) -> Result<LifetimeFit> {
    if h.bin_width_ps != irf.bin_width_ps || h.offset_ps != irf.offset_ps || h.len() != irf.len() {
        return Err(config_err("decay and IRF histograms must share binning"));
    }
    if h.len() < 8 || h.total() == 0 {
        return Err(Error::Fit("decay histogram is empty or too short".into()));
    }
    let (irf_bins, irf_sigma) = trimmed_irf(irf)?;
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let w = h.bin_width_ps as f64;

    // Baseline from the earliest tenth of the window, which precedes the IRF.
    let head = (y.len() / 10).max(1);
    let b0 = y[..head].iter().sum::<f64>() / head as f64;
    let irf_hist_mean = centroid(irf, 0.0);
    let tau0 = (centroid(h, b0) - irf_hist_mean).clamp(w, w * y.len() as f64 / 2.0);
    let a0 = (h.total() as f64 - b0 * y.len() as f64).max(1.0);
    let mut problem = DecayProblem {
        y: &y,
        inv_sigma: y.iter().map(|&v| 1.0 / v.max(1.0).sqrt()).collect(),
        irf: irf_bins,
        bin_width: w,
        half_low: (h.bin_width_ps / 2) as f64,
    };

    let opts = LmOptions::default();
    let first = levenberg_marquardt(&problem, &[a0, tau0, 0.0, b0.max(0.0)], opts)?;
    // Second pass with model-based variances removes the low-count bias of
    // data-based weights.
    let model = problem.model(&first.params);
    problem.inv_sigma = model.iter().map(|&m| 1.0 / m.max(1e-3).sqrt()).collect();
    let fit = levenberg_marquardt(&problem, &first.params, opts)?;

    let mut r = vec![0.0; y.len()];
    problem.residuals(&fit.params, &mut r);
    let residual_rms = (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt();
    let p = &fit.params;
    if !(p[1] > 0.0) {
        return Err(Error::Fit(format!("non-physical lifetime {:.3} ps", p[1])));
    }
    Ok(LifetimeFit {
        tau_ps: p[1],
        tau_err_ps: fit.std_err(1),
        amplitude: p[0],
        baseline: p[3],
        offset_ps: p[2],
        offset_err_ps: fit.std_err(2),
        irf_sigma_used_ps: irf_sigma,
        residual_rms,
        iterations: first.iterations + fit.iterations,
    })
}

/// Fitted model evaluated on the binning of `irf`.
pub fn model_curve(irf: &CoincidenceHistogram, fit: &LifetimeFit) -> Result<Vec<f64>> {
    let (irf_bins, _) = trimmed_irf(irf)?;
    let y = vec![0.0; irf.len()];
    let problem = DecayProblem {
        y: &y,
        inv_sigma: vec![1.0; irf.len()],
        irf: irf_bins,
        bin_width: irf.bin_width_ps as f64,
        half_low: (irf.bin_width_ps / 2) as f64,
    };
    Ok(problem.model(&[fit.amplitude, fit.tau_ps, fit.offset_ps, fit.baseline]))
}
