//! Run configuration: sectioned TOML with units in the key names. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::VisibilityCalibration;
use crate::conversion::{pump_for_output, ConversionConfig, LossBudget};
use crate::error::{config_err, Result};
use crate::experiment::{hbt_arm_detection, SourceChain};
use crate::model::{PulseTrainConfig, RunSeed, Wavelength};
use crate::optics::{BeamSplitter, DetectorConfig, HomInterferometer, PolarizationConfig};
use crate::source::{calibrate_p_multi, dephasing_for_overlap, Blinking, EmitterConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lifetime,
    Hbt,
    HomCo,
    HomCross,
    HomPaired,
    Rate,
    SaturationScan,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lifetime => "lifetime",
            Self::Hbt => "hbt",
            Self::HomCo => "hom_co",
            Self::HomCross => "hom_cross",
            Self::HomPaired => "hom_paired",
            Self::Rate => "rate",
            Self::SaturationScan => "saturation_scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub pulse_train: PulseTrainSection,
    #[serde(default)]
    pub emitter: EmitterSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<ConversionSection>,
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub detectors: DetectorsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_scan: Option<SaturationScanSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("photonflow-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrainSection {
    #[serde(default = "default_rep_rate")]
    pub rep_rate_mhz: f64,
    #[serde(default = "default_pulse_width")]
    pub pulse_width_ps: f64,
    pub n_pulses: u64,
}

fn default_rep_rate() -> f64 {
    73.0
}

fn default_pulse_width() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub wavelength_nm: f64,
    pub lifetime_tau_ps: f64,
    pub p_emit: f64,
    /// Explicit impurity; exclusive with `target_g2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_multi: Option<f64>,
    /// Impurity calibrated so a balanced HBT with the configured detectors measures this g²(0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_g2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_linewidth_ghz: Option<f64>,
    /// Consecutive-photon overlap; sets the dephasing linewidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_overlap: Option<f64>,
    #[serde(default)]
    pub spectral_diffusion_sigma_ghz: f64,
    #[serde(default = "default_block")]
    pub diffusion_block_pulses: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blinking: Option<BlinkingSection>,
}

fn default_block() -> u64 {
    1000
}

impl Default for EmitterSection {
    fn default() -> Self {
        Self {
            wavelength_nm: 930.0,
            lifetime_tau_ps: 271.0,
            p_emit: 0.1,
            p_multi: None,
            target_g2: None,
            dephasing_linewidth_ghz: None,
            target_overlap: None,
            spectral_diffusion_sigma_ghz: 0.0,
            diffusion_block_pulses: default_block(),
            blinking: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkingSection {
    #[serde(default = "default_blink_rate")]
    pub on_rate_per_us: f64,
    #[serde(default = "default_blink_rate")]
    pub off_rate_per_us: f64,
}

fn default_blink_rate() -> f64 {
    Blinking::symmetric_10us().on_rate_per_us
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionSection {
    /// Pump wavelength; derived from `output_wavelength_nm` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_wavelength_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_wavelength_nm: Option<f64>,
    pub pump_power_mw: f64,
    pub eta_max: f64,
    pub p_sat_mw: f64,
    /// Defaults to the converted line center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_center_nm: Option<f64>,
    #[serde(default = "default_filter_fwhm")]
    pub filter_fwhm_ghz: f64,
    #[serde(default)]
    pub noise_rate_cps: f64,
    #[serde(default)]
    pub conversion_dephasing_ghz: f64,
    #[serde(default)]
    pub loss_budget: LossBudgetSection,
}

fn default_filter_fwhm() -> f64 {
    115.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBudgetSection {
    pub lens_in: f64,
    pub lens_out: f64,
    pub coupling: f64,
    pub filter_chain: f64,
    pub fiber_out: f64,
}

impl Default for LossBudgetSection {
    fn default() -> Self {
        let d = LossBudget::default();
        Self {
            lens_in: d.lens_in,
            lens_out: d.lens_out,
            coupling: d.coupling,
            filter_chain: d.filter_chain,
            fiber_out: d.fiber_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsSection {
    /// HBT splitter.
    pub bs_reflectance: f64,
    pub bs_transmittance: f64,
    pub bs_in_reflectance: f64,
    pub bs_in_transmittance: f64,
    pub bs_out_reflectance: f64,
    pub bs_out_transmittance: f64,
    /// Defaults to one repetition period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_delay_ps: Option<u64>,
    pub classical_visibility: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        Self {
            bs_reflectance: 0.5,
            bs_transmittance: 0.5,
            bs_in_reflectance: 0.5,
            bs_in_transmittance: 0.5,
            bs_out_reflectance: 0.5,
            bs_out_transmittance: 0.5,
            arm_delay_ps: None,
            classical_visibility: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorPreset {
    Ideal,
    #[serde(rename = "nir930")]
    Nir930,
    #[serde(rename = "telecom1550")]
    Telecom1550,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub preset: DetectorPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irf_sigma_ps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dead_time_ps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_rate_cps: Option<f64>,
}

impl DetectorSection {
    fn preset(preset: DetectorPreset) -> Self {
        Self {
            preset,
            efficiency: None,
            irf_sigma_ps: None,
            dead_time_ps: None,
            dark_rate_cps: None,
        }
    }

    pub fn resolve(&self) -> Result<DetectorConfig> {
        let base = match self.preset {
            DetectorPreset::Ideal => DetectorConfig::ideal(),
            DetectorPreset::Nir930 => DetectorConfig::nir_930(),
            DetectorPreset::Telecom1550 => DetectorConfig::telecom_1550(),
        };
        let det = DetectorConfig {
            efficiency: self.efficiency.unwrap_or(base.efficiency),
            irf_sigma_ps: self.irf_sigma_ps.unwrap_or(base.irf_sigma_ps),
            dead_time_ps: self.dead_time_ps.unwrap_or(base.dead_time_ps),
            dark_rate_cps: self.dark_rate_cps.unwrap_or(base.dark_rate_cps),
        };
        det.validate()?;
        Ok(det)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorsSection {
    pub ch1: DetectorSection,
    pub ch2: DetectorSection,
    /// Detector before the converter in the rate experiment.
    pub input: DetectorSection,
}

impl Default for DetectorsSection {
    fn default() -> Self {
        Self {
            ch1: DetectorSection::preset(DetectorPreset::Nir930),
            ch2: DetectorSection::preset(DetectorPreset::Nir930),
            input: DetectorSection::preset(DetectorPreset::Nir930),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub bin_width_ps: u64,
    pub half_window_ps: u64,
    /// Side peak used for g²; chosen automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2_reference_delay_ps: Option<i64>,
    /// Side peak used to normalize HOM traces.
    pub norm_delay_ps: i64,
    pub lifetime_bin_ps: u64,
    pub lifetime_window_start_ps: i64,
    pub lifetime_window_end_ps: i64,
    pub irf_photon_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib_g2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib_epsilon: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bin_width_ps: 1,
            half_window_ps: 2_000,
            g2_reference_delay_ps: None,
            norm_delay_ps: 500_000,
            lifetime_bin_ps: 8,
            lifetime_window_start_ps: -2_000,
            lifetime_window_end_ps: 10_000,
            irf_photon_probability: 0.5,
            calib_g2: None,
            calib_epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationScanSection {
    pub points: usize,
    pub max_power_mw: f64,
    pub noise_fraction: f64,
    pub eta_int_lower: f64,
    pub eta_int_upper: f64,
}

impl Default for SaturationScanSection {
    fn default() -> Self {
        Self {
            points: 15,
            max_power_mw: 1000.0,
            noise_fraction: 0.01,
            eta_int_lower: 0.86,
            eta_int_upper: 0.95,
        }
    }
}

/// Fully resolved simulation inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: PulseTrainConfig,
    pub emitter: EmitterConfig,
    pub conversion: Option<ConversionConfig>,
    pub hbt_splitter: BeamSplitter,
    pub interferometer: HomInterferometer,
    pub ch1: DetectorConfig,
    pub ch2: DetectorConfig,
    pub input: DetectorConfig,
    pub calibration: VisibilityCalibration,
    /// g² the impurity was calibrated to, if any.
    pub calibrated_g2: Option<f64>,
}

impl Resolved {
    pub fn chain(&self, seed: RunSeed) -> Result<SourceChain> {
        SourceChain::new(self.emitter.clone(), self.train.clone(), self.conversion.clone(), seed)
    }

    pub fn chain_survival(&self) -> f64 {
        self.conversion.as_ref().map_or(1.0, |c| c.on_line_efficiency())
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run_seed(&self) -> RunSeed {
        RunSeed(self.seed)
    }

    fn conversion(&self) -> Result<Option<ConversionConfig>> {
        let Some(c) = &self.conversion else {
            return Ok(None);
        };
        let signal = Wavelength::new(self.emitter.wavelength_nm)?;
        let pump = match (c.pump_wavelength_nm, c.output_wavelength_nm) {
            (Some(p), None) => Wavelength::new(p)?,
            (None, Some(o)) => pump_for_output(signal, Wavelength::new(o)?)?,
            _ => {
                return Err(config_err(
                    "conversion needs exactly one of pump_wavelength_nm and output_wavelength_nm",
                ))
            }
        };
        let mut cfg = ConversionConfig::tuned(signal, pump, c.eta_max, c.p_sat_mw)?;
        cfg.pump_power_mw = c.pump_power_mw;
        if let Some(f) = c.filter_center_nm {
            cfg.filter_center = Wavelength::new(f)?;
        }
        cfg.filter_fwhm_ghz = c.filter_fwhm_ghz;
        cfg.noise_rate_cps = c.noise_rate_cps;
        cfg.conversion_dephasing_ghz = c.conversion_dephasing_ghz;
        let l = &c.loss_budget;
        cfg.loss_budget = LossBudget {
            lens_in: l.lens_in,
            lens_out: l.lens_out,
            coupling: l.coupling,
            filter_chain: l.filter_chain,
            fiber_out: l.fiber_out,
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }

    /// Validates everything and derives the simulation inputs.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.seed > i64::MAX as u64 {
            return Err(config_err("seed must fit in a signed 64-bit integer"));
        }
        let train = PulseTrainConfig::new(
            self.pulse_train.rep_rate_mhz,
            self.pulse_train.pulse_width_ps,
            self.pulse_train.n_pulses,
        )?;
        let e = &self.emitter;
        let conversion = self.conversion()?;
        let o = &self.optics;
        let hbt_splitter = BeamSplitter::new(o.bs_reflectance, o.bs_transmittance)?;
        let ch1 = self.detectors.ch1.resolve()?;
        let ch2 = self.detectors.ch2.resolve()?;
        let input = self.detectors.input.resolve()?;

        let dephasing = match (e.dephasing_linewidth_ghz, e.target_overlap) {
            (Some(_), Some(_)) => return Err(config_err("set dephasing_linewidth_ghz or target_overlap, not both")),
            (Some(d), None) => d,
            (None, Some(m)) => {
                if !(m > 0.0 && m <= 1.0) {
                    return Err(config_err("target_overlap must lie in (0, 1]"));
                }
                if e.spectral_diffusion_sigma_ghz > 0.0 {
                    return Err(config_err("target_overlap cannot be combined with spectral diffusion"));
                }
                dephasing_for_overlap(e.lifetime_tau_ps, m)
            }
            (None, None) => 0.0,
        };
        let survival = conversion.as_ref().map_or(1.0, |c| c.on_line_efficiency());
        let arms = hbt_arm_detection(survival, &BeamSplitter::balanced(), &ch1, &ch2);
        let (p_multi, calibrated_g2) = match (e.p_multi, e.target_g2) {
            (Some(_), Some(_)) => return Err(config_err("set p_multi or target_g2, not both")),
            (Some(p), None) => (p, None),
            (None, Some(g)) => (calibrate_p_multi(g, e.p_emit, arms)?, Some(g)),
            (None, None) => (0.0, None),
        };
        let emitter = EmitterConfig {
            wavelength: Wavelength::new(e.wavelength_nm)?,
            lifetime_tau_ps: e.lifetime_tau_ps,
            p_emit: e.p_emit,
            p_multi,
            dephasing_linewidth_ghz: dephasing,
            spectral_diffusion_sigma_ghz: e.spectral_diffusion_sigma_ghz,
            diffusion_block_pulses: e.diffusion_block_pulses,
            blinking: e.blinking.as_ref().map(|b| Blinking {
                on_rate_per_us: b.on_rate_per_us,
                off_rate_per_us: b.off_rate_per_us,
            }),
        };
        emitter.validate()?;

        let period = train.period_ps();
        let interferometer = HomInterferometer {
            bs_in: BeamSplitter::new(o.bs_in_reflectance, o.bs_in_transmittance)?,
            bs_out: BeamSplitter::new(o.bs_out_reflectance, o.bs_out_transmittance)?,
            arm_delay_ps: o.arm_delay_ps.unwrap_or(period),
            pulse_period_ps: period,
            classical_visibility: o.classical_visibility,
            polarization: PolarizationConfig::Co,
            photon_lifetime_ps: e.lifetime_tau_ps,
        };
        interferometer.validate()?;

        let a = &self.analysis;
        if a.bin_width_ps == 0 || a.lifetime_bin_ps == 0 {
            return Err(config_err("bin widths must be positive"));
        }
        if period <= 2 * a.half_window_ps {
            return Err(config_err("half_window_ps must be below half the repetition period"));
        }
        if a.lifetime_window_end_ps <= a.lifetime_window_start_ps {
            return Err(config_err("lifetime window is empty"));
        }
        if (a.lifetime_window_end_ps - a.lifetime_window_start_ps) as u64 >= period {
            return Err(config_err("lifetime window must be shorter than the repetition period"));
        }
        let calib_g2 = a
            .calib_g2
            .unwrap_or_else(|| crate::source::hbt_g2(emitter.p_emit, emitter.p_multi, arms));
        let calibration = VisibilityCalibration {
            r1: interferometer.bs_in.reflectance,
            t1: interferometer.bs_in.transmittance,
            r2: interferometer.bs_out.reflectance,
            t2: interferometer.bs_out.transmittance,
            epsilon: a.calib_epsilon.unwrap_or(1.0 - o.classical_visibility),
            g2: calib_g2,
        };
        if matches!(self.experiment, ExperimentKind::Rate) && conversion.is_none() {
            return Err(config_err("the rate experiment needs a [conversion] section"));
        }
        if matches!(self.experiment, ExperimentKind::SaturationScan) {
            if conversion.is_none() {
                return Err(config_err("saturation_scan needs a [conversion] section"));
            }
            let s = self.saturation_scan.clone().unwrap_or_default();
            if s.points < 4 || !(s.max_power_mw > 0.0) || !(s.noise_fraction >= 0.0) {
                return Err(config_err("saturation_scan needs ≥ 4 points, a positive power range and noise ≥ 0"));
            }
        }
        Ok(Resolved {
            train,
            emitter,
            conversion,
            hbt_splitter,
            interferometer,
            ch1,
            ch2,
            input,
            calibration,
            calibrated_g2,
        })
    }
}
