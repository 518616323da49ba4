//! Pulsed, resonantly driven quantum-dot emitter.
//!
//! Each pulse yields at most one signal photon and, with a smaller
//! probability, an extra distinguishable photon (the impurity that shows up
//! as a non-zero central HBT peak). Spectral noise has a fast Lorentzian
//! part drawn per photon and a slow Gaussian wander drawn per block of
//! pulses. Blinking is an optional two-state telegraph process.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal};
use smallvec::SmallVec;

use crate::error::{config_err, Result};
use crate::math::{erfcx, lifetime_linewidth_ghz};
use crate::model::{Origin, PhotonRecord, Polarization, PulseTrainConfig, RunSeed, Stage, StreamRng, Wavelength};

pub type PulsePhotons = SmallVec<[PhotonRecord; 2]>;

/// Telegraph switching rates. `on_rate` is dark→bright, `off_rate` bright→dark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blinking {
    pub on_rate_per_us: f64,
    pub off_rate_per_us: f64,
}

impl Blinking {
    /// Symmetric telegraph with 10 µs mean dwell in each state.
    pub fn symmetric_10us() -> Self {
        Self {
            on_rate_per_us: 0.1,
            off_rate_per_us: 0.1,
        }
    }

    pub fn bright_fraction(&self) -> f64 {
        self.on_rate_per_us / (self.on_rate_per_us + self.off_rate_per_us)
    }

    /// Normalized intensity correlation `⟨I(t)I(t+τ)⟩/⟨I⟩²` of the telegraph.
    pub fn bunching(&self, delay_ps: f64) -> f64 {
        let f = self.bright_fraction();
        let k = (self.on_rate_per_us + self.off_rate_per_us) * 1e-6;
        1.0 + (1.0 - f) / f * (-k * delay_ps.abs()).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmitterConfig {
    pub wavelength: Wavelength,
    pub lifetime_tau_ps: f64,
    pub p_emit: f64,
    pub p_multi: f64,
    /// FWHM of the per-photon Lorentzian broadening, GHz.
    pub dephasing_linewidth_ghz: f64,
    /// Standard deviation of the slow Gaussian wander, GHz.
    pub spectral_diffusion_sigma_ghz: f64,
    /// Pulses sharing one slow-wander sample.
    pub diffusion_block_pulses: u64,
    pub blinking: Option<Blinking>,
}

impl EmitterConfig {
    pub fn ideal(wavelength: Wavelength, lifetime_tau_ps: f64, p_emit: f64) -> Self {
        Self {
            wavelength,
            lifetime_tau_ps,
            p_emit,
            p_multi: 0.0,
            dephasing_linewidth_ghz: 0.0,
            spectral_diffusion_sigma_ghz: 0.0,
            diffusion_block_pulses: 1000,
            blinking: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lifetime_tau_ps > 0.0 && self.lifetime_tau_ps.is_finite()) {
            return Err(config_err("lifetime_tau_ps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_emit) {
            return Err(config_err("p_emit must lie in [0, 1]"));
        }
        if !(self.p_multi >= 0.0 && self.p_multi <= self.p_emit) {
            return Err(config_err("p_multi must lie in [0, p_emit]"));
        }
        if !(self.dephasing_linewidth_ghz >= 0.0) || !(self.spectral_diffusion_sigma_ghz >= 0.0) {
            return Err(config_err("linewidths must be non-negative"));
        }
        if self.diffusion_block_pulses == 0 {
            return Err(config_err("diffusion_block_pulses must be at least 1"));
        }
        if let Some(b) = &self.blinking {
            if !(b.on_rate_per_us > 0.0 && b.off_rate_per_us > 0.0) {
                return Err(config_err("blinking rates must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlinkPhase {
    Bright,
    Dark,
}

impl BlinkPhase {
    fn flipped(self) -> Self {
        match self {
            Self::Bright => Self::Dark,
            Self::Dark => Self::Bright,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlinkState {
    pub current: BlinkPhase,
    pub next_switch_time_ps: u64,
}

impl BlinkState {
    pub const ALWAYS_BRIGHT: Self = Self {
        current: BlinkPhase::Bright,
        next_switch_time_ps: u64::MAX,
    };
}

/// Pre-drawn telegraph trajectory for a whole run. It is generated once from
/// its own substream, which lets pulses be processed in any order.
#[derive(Debug, Clone)]
pub struct BlinkTrace {
    initial: BlinkPhase,
    switches: Vec<u64>,
}

impl BlinkTrace {
    pub fn generate(blinking: &Blinking, seed: RunSeed, horizon_ps: u64) -> Self {
        let mut rng = seed.substream(0, Stage::Blinking);
        let initial = if rng.random_bool(blinking.bright_fraction()) {
            BlinkPhase::Bright
        } else {
            BlinkPhase::Dark
        };
        let leave_bright = Exp::new(blinking.off_rate_per_us * 1e-6).expect("positive rate");
        let leave_dark = Exp::new(blinking.on_rate_per_us * 1e-6).expect("positive rate");
        let mut switches = Vec::new();
        let mut phase = initial;
        let mut t = 0.0f64;
        while t < horizon_ps as f64 {
            t += match phase {
                BlinkPhase::Bright => leave_bright.sample(&mut rng),
                BlinkPhase::Dark => leave_dark.sample(&mut rng),
            };
            switches.push(t.round() as u64);
            phase = phase.flipped();
        }
        Self { initial, switches }
    }

    pub fn state_at(&self, t_ps: u64) -> BlinkState {
        let n = self.switches.partition_point(|&s| s <= t_ps);
        let current = if n % 2 == 0 { self.initial } else { self.initial.flipped() };
        BlinkState {
            current,
            next_switch_time_ps: self.switches.get(n).copied().unwrap_or(u64::MAX),
        }
    }
}

fn lorentzian_sample(fwhm_ghz: f64, rng: &mut StreamRng) -> f64 {
    if fwhm_ghz > 0.0 {
        Cauchy::new(0.0, fwhm_ghz / 2.0).expect("positive scale").sample(rng)
    } else {
        0.0
    }
}

fn emission_time(train: &PulseTrainConfig, tau: &Exp<f64>, pulse_index: u64, rng: &mut StreamRng) -> u64 {
    let jitter = rng.random::<f64>() * train.pulse_width_ps;
    let delay = tau.sample(rng);
    train.pulse_start_ps(pulse_index) + (jitter + delay).round() as u64
}

/// Photons produced by one excitation pulse.
///
/// `slow_detuning_ghz` is the spectral-wander value of the block this pulse
/// belongs to.
pub fn emit_pulse(
    cfg: &EmitterConfig,
    train: &PulseTrainConfig,
    pulse_index: u64,
    rng: &mut StreamRng,
    blink: &BlinkState,
    slow_detuning_ghz: f64,
) -> PulsePhotons {
    debug_assert!(pulse_index < train.n_pulses);
    let mut out = PulsePhotons::new();
    if blink.current == BlinkPhase::Dark || cfg.p_emit <= 0.0 {
        return out;
    }
    // One uniform decides the photon number: 2 w.p. p_multi, 1 w.p. p_emit - p_multi.
    let u = rng.random::<f64>();
    if u >= cfg.p_emit {
        return out;
    }
    let tau = Exp::new(1.0 / cfg.lifetime_tau_ps).expect("positive lifetime");
    let mut photon = |origin| PhotonRecord {
        emit_time_ps: emission_time(train, &tau, pulse_index, rng),
        wavelength: cfg.wavelength,
        detuning_ghz: slow_detuning_ghz + lorentzian_sample(cfg.dephasing_linewidth_ghz, rng),
        polarization: Polarization::H,
        origin,
        pulse_index,
    };
    out.push(photon(Origin::Signal));
    if u < cfg.p_multi {
        out.push(photon(Origin::Multiphoton));
    }
    out
}

/// Emitter bound to a pulse train and a seed.
#[derive(Debug, Clone)]
pub struct Emitter {
    pub cfg: EmitterConfig,
    pub train: PulseTrainConfig,
    seed: RunSeed,
    blink: Option<BlinkTrace>,
}

impl Emitter {
    pub fn new(cfg: EmitterConfig, train: PulseTrainConfig, seed: RunSeed) -> Result<Self> {
        cfg.validate()?;
        train.validate()?;
        let blink = cfg
            .blinking
            .as_ref()
            .map(|b| BlinkTrace::generate(b, seed, train.pulse_start_ps(train.n_pulses + 1)));
        Ok(Self { cfg, train, seed, blink })
    }

    pub fn seed(&self) -> RunSeed {
        self.seed
    }

    pub fn blink_state(&self, pulse_index: u64) -> BlinkState {
        match &self.blink {
            Some(trace) => trace.state_at(self.train.pulse_start_ps(pulse_index)),
            None => BlinkState::ALWAYS_BRIGHT,
        }
    }

    pub fn slow_detuning_ghz(&self, pulse_index: u64) -> f64 {
        let sigma = self.cfg.spectral_diffusion_sigma_ghz;
        if sigma <= 0.0 {
            return 0.0;
        }
        let block = pulse_index / self.cfg.diffusion_block_pulses;
        let mut rng = self.seed.substream(block, Stage::SpectralDiffusion);
        Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng)
    }

    pub fn emit(&self, pulse_index: u64) -> PulsePhotons {
        let mut rng = self.seed.substream(pulse_index, Stage::Emission);
        emit_pulse(
            &self.cfg,
            &self.train,
            pulse_index,
            &mut rng,
            &self.blink_state(pulse_index),
            self.slow_detuning_ghz(pulse_index),
        )
    }
}

/// Expected overlap of two photons whose detunings differ by a Lorentzian
/// of FWHM `dephasing` plus a Gaussian of standard deviation `√2·sigma`.
fn averaged_overlap(lifetime_ps: f64, dephasing_ghz: f64, sigma_ghz: f64) -> f64 {
    let gamma = lifetime_linewidth_ghz(lifetime_ps);
    if sigma_ghz <= 0.0 {
        return gamma / (gamma + dephasing_ghz);
    }
    gamma * std::f64::consts::PI.sqrt() * erfcx((gamma + dephasing_ghz) / (2.0 * sigma_ghz)) / (2.0 * sigma_ghz)
}

/// Expected two-photon overlap for photons from consecutive pulses.
///
/// Consecutive pulses share their slow-wander sample except across a block
/// boundary, which happens for one pair in `diffusion_block_pulses`.
pub fn pairwise_overlap(cfg: &EmitterConfig) -> f64 {
    let tau = cfg.lifetime_tau_ps;
    let same_block = averaged_overlap(tau, cfg.dephasing_linewidth_ghz, 0.0);
    if cfg.spectral_diffusion_sigma_ghz <= 0.0 {
        return same_block;
    }
    let crossing = 1.0 / cfg.diffusion_block_pulses as f64;
    let across = averaged_overlap(tau, cfg.dephasing_linewidth_ghz, cfg.spectral_diffusion_sigma_ghz);
    (1.0 - crossing) * same_block + crossing * across
}

/// Dephasing FWHM that yields `overlap` for a lifetime-limited line of `tau`.
pub fn dephasing_for_overlap(lifetime_ps: f64, overlap: f64) -> f64 {
    lifetime_linewidth_ghz(lifetime_ps) * (1.0 / overlap - 1.0)
}

/// Central-to-uncorrelated HBT peak ratio for a source emitting one photon
/// with probability `p_emit - p_multi` and two with probability `p_multi`,
/// where each photon independently reaches detector `k` with probability
/// `arm_detect[k]`.
pub fn hbt_g2(p_emit: f64, p_multi: f64, arm_detect: [f64; 2]) -> f64 {
    if p_emit <= 0.0 {
        return 0.0;
    }
    let [e1, e2] = arm_detect;
    2.0 * p_multi / ((p_emit + p_multi * (1.0 - e1)) * (p_emit + p_multi * (1.0 - e2)))
}

/// Inverts [`hbt_g2`] for `p_multi`.
pub fn calibrate_p_multi(target_g2: f64, p_emit: f64, arm_detect: [f64; 2]) -> Result<f64> {
    if !(target_g2 >= 0.0) {
        return Err(config_err("target g2 must be non-negative"));
    }
    if target_g2 == 0.0 {
        return Ok(0.0);
    }
    if p_emit <= 0.0 {
        return Err(config_err("cannot calibrate impurity of a source with p_emit = 0"));
    }
    if hbt_g2(p_emit, p_emit, arm_detect) < target_g2 {
        return Err(config_err(format!("g2 = {target_g2} is unreachable with p_emit = {p_emit}")));
    }
    // hbt_g2 is increasing in p_multi on [0, p_emit].
    let (mut lo, mut hi) = (0.0, p_emit);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hbt_g2(p_emit, mid, arm_detect) < target_g2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
