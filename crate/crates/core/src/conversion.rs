//! Difference-frequency conversion stage: wavelength mapping, pump-power
//! saturation, spectral filtering, noise, and the classical efficiency
//! estimators used to characterise the converter.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Poisson};

use crate::error::{config_err, Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::model::{Origin, PhotonRecord, Polarization, StreamRng, Wavelength};

/// Output wavelength of difference-frequency generation, `1/(1/λ₁ − 1/λ₂)`.
pub fn dfg_wavelength(signal: Wavelength, pump: Wavelength) -> Result<Wavelength> {
    if pump.nm() <= signal.nm() {
        return Err(Error::Domain(format!(
            "pump at {} nm must be redder than the signal at {} nm",
            pump.nm(),
            signal.nm()
        )));
    }
    Wavelength::new(1.0 / (1.0 / signal.nm() - 1.0 / pump.nm()))
}

/// Pump wavelength that maps `signal` onto `output`.
pub fn pump_for_output(signal: Wavelength, output: Wavelength) -> Result<Wavelength> {
    if output.nm() <= signal.nm() {
        return Err(Error::Domain("output must be redder than the signal".into()));
    }
    Wavelength::new(1.0 / (1.0 / signal.nm() - 1.0 / output.nm()))
}

/// Fractional losses of the optical path around the converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBudget {
    pub lens_in: f64,
    pub lens_out: f64,
    pub coupling: f64,
    pub filter_chain: f64,
    pub fiber_out: f64,
}

impl Default for LossBudget {
    fn default() -> Self {
        Self {
            lens_in: 0.065,
            lens_out: 0.065,
            coupling: 0.04,
            filter_chain: 0.15,
            fiber_out: 0.30,
        }
    }
}

impl LossBudget {
    fn fractions(&self) -> [f64; 5] {
        [self.lens_in, self.lens_out, self.coupling, self.filter_chain, self.fiber_out]
    }

    /// Product of `(1 − loss)` over every element.
    pub fn transmission(&self) -> f64 {
        self.fractions().iter().map(|l| 1.0 - l).product()
    }
}

/// Two-parameter pump saturation curve `η_max·sin²((π/2)·√(P/P_sat))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationModel {
    pub eta_max: f64,
    pub p_sat_mw: f64,
}

impl SaturationModel {
    pub fn efficiency(&self, pump_mw: f64) -> f64 {
        if pump_mw <= 0.0 {
            return 0.0;
        }
        let s = (std::f64::consts::FRAC_PI_2 * (pump_mw / self.p_sat_mw).sqrt()).sin();
        (self.eta_max * s * s).clamp(0.0, self.eta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionConfig {
    pub pump_wavelength: Wavelength,
    pub pump_power_mw: f64,
    pub eta_max: f64,
    pub p_sat_mw: f64,
    pub filter_center: Wavelength,
    pub filter_fwhm_ghz: f64,
    pub loss_budget: LossBudget,
    pub noise_rate_cps: f64,
    /// FWHM of a Lorentzian detuning kick added during conversion. Zero
    /// means the conversion is a coherent frequency translation.
    pub conversion_dephasing_ghz: f64,
}

impl ConversionConfig {
    /// Converter tuned so that `signal` lands on the filter centre.
    pub fn tuned(signal: Wavelength, pump: Wavelength, eta_max: f64, p_sat_mw: f64) -> Result<Self> {
        Ok(Self {
            pump_wavelength: pump,
            pump_power_mw: p_sat_mw,
            eta_max,
            p_sat_mw,
            filter_center: dfg_wavelength(signal, pump)?,
            filter_fwhm_ghz: 115.0,
            loss_budget: LossBudget::default(),
            noise_rate_cps: 0.0,
            conversion_dephasing_ghz: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.loss_budget.fractions().iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(config_err("loss fractions must lie in [0, 1]"));
        }
        if !(self.filter_fwhm_ghz > 0.0) {
            return Err(config_err("filter_fwhm_ghz must be positive"));
        }
        if !(self.eta_max > 0.0 && self.eta_max <= 1.0) {
            return Err(config_err("eta_max must lie in (0, 1]"));
        }
        if self.eta_max > self.loss_budget.transmission() + 1e-12 {
            return Err(config_err(format!(
                "eta_max = {} exceeds the loss-budget transmission {:.4}",
                self.eta_max,
                self.loss_budget.transmission()
            )));
        }
        if !(self.p_sat_mw > 0.0) || !(self.pump_power_mw >= 0.0) {
            return Err(config_err("pump powers must be positive"));
        }
        if !(self.noise_rate_cps >= 0.0) || !(self.conversion_dephasing_ghz >= 0.0) {
            return Err(config_err("noise rate and conversion dephasing must be non-negative"));
        }
        Ok(())
    }

    pub fn saturation(&self) -> SaturationModel {
        SaturationModel {
            eta_max: self.eta_max,
            p_sat_mw: self.p_sat_mw,
        }
    }

    /// Gaussian filter transmission at `offset_ghz` from the filter centre.
    pub fn filter_transmission(&self, offset_ghz: f64) -> f64 {
        let x = offset_ghz / self.filter_fwhm_ghz;
        (-4.0 * std::f64::consts::LN_2 * x * x).exp()
    }

    /// Filter transmission averaged over a Gaussian line of FWHM
    /// `line_fwhm_ghz` centred on the filter.
    pub fn band_averaged_transmission(&self, line_fwhm_ghz: f64) -> f64 {
        let r = line_fwhm_ghz / self.filter_fwhm_ghz;
        1.0 / (1.0 + r * r).sqrt()
    }

    /// Expected survival probability of an on-line photon at the configured pump power.
    pub fn on_line_efficiency(&self) -> f64 {
        saturation_efficiency(self, self.pump_power_mw)
    }
}

pub fn saturation_efficiency(cfg: &ConversionConfig, pump_mw: f64) -> f64 {
    cfg.saturation().efficiency(pump_mw)
}

/// Passes one photon through the converter. Returns `None` when it is lost.
pub fn convert_photon(cfg: &ConversionConfig, photon: &PhotonRecord, rng: &mut StreamRng) -> Option<PhotonRecord> {
    debug_assert_ne!(photon.origin, Origin::Noise, "noise photons are created after conversion");
    let out_wavelength = dfg_wavelength(photon.wavelength, cfg.pump_wavelength).ok()?;
    let mut detuning = photon.detuning_ghz;
    if cfg.conversion_dephasing_ghz > 0.0 {
        detuning += Cauchy::new(0.0, cfg.conversion_dephasing_ghz / 2.0)
            .expect("positive scale")
            .sample(rng);
    }
    let offset = out_wavelength.frequency_ghz() + detuning - cfg.filter_center.frequency_ghz();
    let survive = saturation_efficiency(cfg, cfg.pump_power_mw) * cfg.filter_transmission(offset);
    rng.random_bool(survive.clamp(0.0, 1.0)).then(|| PhotonRecord {
        wavelength: out_wavelength,
        detuning_ghz: detuning,
        ..*photon
    })
}

/// Unfiltered background photons in `[t0, t1)`.
pub fn inject_noise(
    cfg: &ConversionConfig,
    window: (u64, u64),
    pulse_index: u64,
    rng: &mut StreamRng,
) -> Vec<PhotonRecord> {
    let (t0, t1) = window;
    debug_assert!(t1 > t0);
    let mean = cfg.noise_rate_cps * (t1 - t0) as f64 * 1e-12;
    if mean <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    (0..n)
        .map(|_| PhotonRecord {
            emit_time_ps: rng.random_range(t0..t1),
            wavelength: cfg.filter_center,
            detuning_ghz: 0.0,
            polarization: if rng.random_bool(0.5) { Polarization::H } else { Polarization::V },
            origin: Origin::Noise,
            pulse_index,
        })
        .collect()
}

/// Photon-number conversion ratio `(P_out·λ₃)/(P_in·λ₁)`.
pub fn external_efficiency(p_in_mw: f64, p_out_mw: f64, lambda_in: Wavelength, lambda_out: Wavelength) -> Result<f64> {
    if !(p_in_mw > 0.0) {
        return Err(config_err("input power must be positive"));
    }
    Ok(p_out_mw * lambda_out.nm() / (p_in_mw * lambda_in.nm()))
}

/// Ratio of photon rates measured before and after the converter.
pub fn rate_efficiency(n_in: f64, n_out: f64) -> Result<f64> {
    if !(n_in > 0.0) {
        return Err(config_err("input rate must be positive"));
    }
    Ok(n_out / n_in)
}

/// Powers measured around the waveguide for the internal-efficiency bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalEfficiencyMeasurement {
    pub p_in_before_lens_mw: f64,
    pub p_out_after_lens_mw: f64,
    pub lens_loss: f64,
    pub coupling: f64,
    /// Signal transmission with the pump on.
    pub depletion_on_mw: f64,
    /// Signal transmission with the pump off.
    pub depletion_off_mw: f64,
    pub lambda_in: Wavelength,
    pub lambda_out: Wavelength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyBounds {
    pub eta_int_lower: f64,
    pub eta_int_upper: f64,
}

/// Lower bound from factoring out lens and coupling losses, upper bound from
/// depletion of the signal beam when the pump is switched on.
pub fn internal_efficiency_bounds(m: &InternalEfficiencyMeasurement) -> Result<EfficiencyBounds> {
    if !(m.depletion_off_mw > 0.0) {
        return Err(config_err("depletion_off must be positive"));
    }
    if !(m.p_in_before_lens_mw > 0.0) {
        return Err(config_err("input power must be positive"));
    }
    if !(0.0..1.0).contains(&m.lens_loss) || !(m.coupling > 0.0 && m.coupling <= 1.0) {
        return Err(config_err("lens loss must lie in [0, 1) and coupling in (0, 1]"));
    }
    let photon_ratio = external_efficiency(m.p_in_before_lens_mw, m.p_out_after_lens_mw, m.lambda_in, m.lambda_out)?;
    let lower = photon_ratio / ((1.0 - m.lens_loss).powi(2) * m.coupling.powi(2));
    let upper = 1.0 - m.depletion_on_mw / m.depletion_off_mw;
    let inside = |x: f64| (0.0..=1.0).contains(&x);
    if !inside(lower) || !inside(upper) || lower > upper + 1e-12 {
        return Err(Error::InconsistentMeasurement(format!(
            "internal efficiency bounds [{lower:.4}, {upper:.4}] are not an interval inside [0, 1]"
        )));
    }
    Ok(EfficiencyBounds {
        eta_int_lower: lower,
        eta_int_upper: upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationFit {
    pub eta_max: f64,
    pub p_sat_mw: f64,
    pub eta_max_err: f64,
    pub p_sat_err_mw: f64,
    pub residual_rms: f64,
}

impl SaturationFit {
    pub fn model(&self) -> SaturationModel {
        SaturationModel {
            eta_max: self.eta_max,
            p_sat_mw: self.p_sat_mw,
        }
    }
}

struct SaturationProblem<'a> {
    points: &'a [(f64, f64)],
}

impl LeastSquares for SaturationProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn n_residuals(&self) -> usize {
        self.points.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let m = SaturationModel {
            eta_max: p[0],
            p_sat_mw: p[1],
        };
        for (o, &(pw, eta)) in out.iter_mut().zip(self.points) {
            *o = eta - m.efficiency(pw);
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut nalgebra::DMatrix<f64>) {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
        let (eta_max, p_sat) = (p[0], p[1]);
        for (i, &(pw, _)) in self.points.iter().enumerate() {
            let x = (pw.max(0.0) / p_sat).sqrt();
            let s = (FRAC_PI_2 * x).sin();
            jac[(i, 0)] = -s * s;
            jac[(i, 1)] = eta_max * (PI * x).sin() * FRAC_PI_4 * x / p_sat;
        }
    }

    fn feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0
    }
}

/// Least-squares fit of the saturation curve to `(pump_mw, efficiency)` points.
pub fn fit_saturation(points: &[(f64, f64)]) -> Result<SaturationFit> {
    if points.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", points.len())));
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.0).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 3 || powers[0] < 0.0 {
        return Err(Error::Fit("pump powers must take at least 3 distinct non-negative values".into()));
    }
    let &(p_peak, eta_peak) = points
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    if !(eta_peak > 0.0 && p_peak > 0.0) {
        return Err(Error::Fit("no positive efficiency in the scan".into()));
    }
    let problem = SaturationProblem { points };
    let fit = levenberg_marquardt(&problem, &[eta_peak, p_peak], LmOptions::default())?;
    let dof = (points.len() - 2) as f64;
    let scale = fit.cost / dof;
    Ok(SaturationFit {
        eta_max: fit.params[0],
        p_sat_mw: fit.params[1],
        eta_max_err: (fit.covariance[(0, 0)] * scale).sqrt(),
        p_sat_err_mw: (fit.covariance[(1, 1)] * scale).sqrt(),
        residual_rms: (fit.cost / points.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RunSeed;
    use rand_distr::Normal;

    fn nm(x: f64) -> Wavelength {
        Wavelength::new(x).unwrap()
    }

    fn cfg() -> ConversionConfig {
        ConversionConfig::tuned(nm(942.0), nm(2400.0), 0.408, 327.0).unwrap()
    }

    #[test]
    fn dfg_examples() {
        let out = dfg_wavelength(nm(940.0), nm(2400.0)).unwrap();
        assert!((out.nm() - 940.0 * 2400.0 / 1460.0).abs() < 1e-9);
        assert!((out.nm() - 1545.2).abs() < 0.01);
        let pump = pump_for_output(nm(942.0), nm(1550.0)).unwrap();
        assert!((pump.nm() - 2401.5).abs() < 0.05, "{}", pump.nm());
        let far = dfg_wavelength(nm(940.0), nm(1e15)).unwrap();
        assert!((far.nm() - 940.0).abs() < 1e-6);
    }

    #[test]
    fn dfg_rejects_blue_pump() {
        assert!(matches!(dfg_wavelength(nm(940.0), nm(900.0)), Err(Error::Domain(_))));
        assert!(dfg_wavelength(nm(940.0), nm(940.0)).is_err());
    }

    #[test]
    fn saturation_points() {
        let m = SaturationModel {
            eta_max: 0.417,
            p_sat_mw: 327.0,
        };
        assert!((m.efficiency(327.0) - 0.417).abs() < 1e-12);
        assert_eq!(m.efficiency(0.0), 0.0);
        assert!((m.efficiency(327.0 / 4.0) - 0.417 / 2.0).abs() < 1e-12);
        // Symmetric about P_sat in √P.
        for k in 1..10 {
            let d = 0.05 * k as f64;
            let lo = m.efficiency(327.0 * (1.0 - d).powi(2));
            let hi = m.efficiency(327.0 * (1.0 + d).powi(2));
            assert!((lo - hi).abs() < 1e-12);
            assert!(hi <= 0.417);
        }
    }

    #[test]
    fn filter_half_maximum() {
        let c = cfg();
        assert!((c.filter_transmission(57.5) - 0.5).abs() < 1e-12);
        assert_eq!(c.filter_transmission(0.0), 1.0);
    }

    #[test]
    fn narrow_line_passes_filter() {
        let c = cfg();
        // Midpoint quadrature over ±8σ of a 0.5 GHz FWHM Gaussian line.
        let sigma = 0.5 / (8.0 * std::f64::consts::LN_2).sqrt();
        let n = 20_000;
        let h = 16.0 * sigma / n as f64;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for i in 0..n {
            let x = -8.0 * sigma + (i as f64 + 0.5) * h;
            let w = (-0.5 * (x / sigma).powi(2)).exp();
            acc += w * c.filter_transmission(x);
            norm += w;
        }
        let numeric = acc / norm;
        assert!(numeric > 0.9999);
        assert!((numeric - c.band_averaged_transmission(0.5)).abs() < 1e-9);
    }

    #[test]
    fn conversion_preserves_time_and_detuning() {
        let c = cfg();
        let photon = PhotonRecord {
            emit_time_ps: 12_345,
            wavelength: nm(942.0),
            detuning_ghz: 0.3,
            polarization: Polarization::H,
            origin: Origin::Signal,
            pulse_index: 0,
        };
        let mut survived = 0u32;
        for i in 0..10_000 {
            let mut rng = RunSeed(4).substream(i, crate::model::Stage::Conversion);
            if let Some(out) = convert_photon(&c, &photon, &mut rng) {
                survived += 1;
                assert_eq!(out.emit_time_ps, photon.emit_time_ps);
                assert_eq!(out.detuning_ghz, photon.detuning_ghz);
                assert_eq!(out.origin, photon.origin);
                assert!((out.wavelength.nm() - c.filter_center.nm()).abs() < 1e-9);
            }
        }
        let p = 0.408 * c.filter_transmission(0.3);
        let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
        assert!((survived as f64 - 10_000.0 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn noise_poisson_statistics() {
        let mut c = cfg();
        let mut rng = RunSeed(1).substream(0, crate::model::Stage::Noise);
        assert!(inject_noise(&c, (0, 1_000_000_000_000), 0, &mut rng).is_empty());
        c.noise_rate_cps = 1000.0;
        let counts: Vec<f64> = (0..100)
            .map(|i| {
                let mut rng = RunSeed(1).substream(i, crate::model::Stage::Noise);
                let v = inject_noise(&c, (0, 1_000_000_000_000), i, &mut rng);
                assert!(v.iter().all(|p| p.origin == Origin::Noise && p.emit_time_ps < 1_000_000_000_000));
                v.len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / 100.0;
        assert!((mean - 1000.0).abs() < 3.0 * (1000.0f64 / 100.0).sqrt());
    }

    #[test]
    fn external_efficiency_examples() {
        let eta = external_efficiency(1.0, 0.2529, nm(940.0), nm(1550.0)).unwrap();
        assert!((eta - 0.417).abs() < 5e-4);
        assert_eq!(external_efficiency(1.0, 0.0, nm(940.0), nm(1550.0)).unwrap(), 0.0);
        let rate = rate_efficiency(2.21e6, 905e3).unwrap();
        assert!((rate - 0.410).abs() < 1e-3);
        assert!((rate - 0.408).abs() < 0.008);
        assert!(external_efficiency(0.0, 1.0, nm(940.0), nm(1550.0)).is_err());
    }

    fn bounds_input(p_out: f64, on: f64) -> InternalEfficiencyMeasurement {
        InternalEfficiencyMeasurement {
            p_in_before_lens_mw: 1.0,
            p_out_after_lens_mw: p_out,
            lens_loss: 0.065,
            coupling: 0.96,
            depletion_on_mw: on,
            depletion_off_mw: 1.0,
            lambda_in: nm(940.0),
            lambda_out: nm(1550.0),
        }
    }

    #[test]
    fn internal_bounds_examples() {
        // Inverted so that the loss-factored ratio equals 0.86.
        let p_out = 0.86 * 0.935f64.powi(2) * 0.96f64.powi(2) * 940.0 / 1550.0;
        let b = internal_efficiency_bounds(&bounds_input(p_out, 0.05)).unwrap();
        assert!((b.eta_int_lower - 0.86).abs() < 1e-12);
        assert!((b.eta_int_upper - 0.95).abs() < 1e-12);

        let mut lossless = bounds_input(940.0 / 1550.0, 0.0);
        lossless.lens_loss = 0.0;
        lossless.coupling = 1.0;
        let b = internal_efficiency_bounds(&lossless).unwrap();
        assert!((b.eta_int_lower - 1.0).abs() < 1e-12);
    }

    #[test]
    fn internal_bounds_inconsistent() {
        // Lower bound above the upper bound.
        let p_out = 0.9 * 0.935f64.powi(2) * 0.96f64.powi(2) * 940.0 / 1550.0;
        assert!(matches!(
            internal_efficiency_bounds(&bounds_input(p_out, 0.2)),
            Err(Error::InconsistentMeasurement(_))
        ));
        let mut zero = bounds_input(0.1, 0.05);
        zero.depletion_off_mw = 0.0;
        assert!(internal_efficiency_bounds(&zero).is_err());
    }

    fn scan(model: SaturationModel) -> Vec<(f64, f64)> {
        (1..=15).map(|i| {
            let p = 45.0 * i as f64;
            (p, model.efficiency(p))
        }).collect()
    }

    #[test]
    fn fit_recovers_noiseless_parameters() {
        let truth = SaturationModel {
            eta_max: 0.417,
            p_sat_mw: 327.0,
        };
        let fit = fit_saturation(&scan(truth)).unwrap();
        assert!((fit.eta_max - 0.417).abs() / 0.417 < 1e-3);
        assert!((fit.p_sat_mw - 327.0).abs() / 327.0 < 1e-3);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn fit_tolerates_multiplicative_noise() {
        let truth = SaturationModel {
            eta_max: 0.417,
            p_sat_mw: 327.0,
        };
        let noise = Normal::new(0.0, 0.01).unwrap();
        for r in 0..100 {
            let mut rng = RunSeed(99).substream(r, crate::model::Stage::Synthetic);
            let pts: Vec<_> = scan(truth)
                .into_iter()
                .map(|(p, e)| (p, e * (1.0 + noise.sample(&mut rng))))
                .collect();
            let fit = fit_saturation(&pts).unwrap();
            assert!((fit.eta_max - 0.417).abs() < 0.01, "realization {r}: {fit:?}");
        }
    }

    #[test]
    fn fit_rejects_degenerate_scans() {
        assert!(fit_saturation(&[(0.0, 0.0), (327.0, 0.417)]).is_err());
        assert!(fit_saturation(&[(100.0, 0.1); 6]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.eta_max = 0.9;
        assert!(c.validate().is_err());
        c = cfg();
        c.filter_fwhm_ghz = 0.0;
        assert!(c.validate().is_err());
        c = cfg();
        c.loss_budget.coupling = 1.5;
        assert!(c.validate().is_err());
    }
}
