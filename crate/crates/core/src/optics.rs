//! Beam splitters, the unbalanced Mach–Zehnder used for two-photon
//! interference, and the single-photon detector model.
//!
//! Two-photon interference is sampled at the level of output-port
//! probabilities: for two photons meeting at a splitter with intensity
//! ratios `R`, `T` and effective overlap `M`, one photon leaves each port
//! with probability `R² + T² − 2RT·M` and both share a port otherwise.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{config_err, Result};
use crate::math::detuned_overlap;
use crate::model::{Origin, PhotonRecord, StreamRng, TagStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    Reflect,
    Transmit,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSplitter {
    pub reflectance: f64,
    pub transmittance: f64,
}

impl Default for BeamSplitter {
    fn default() -> Self {
        Self::balanced()
    }
}

impl BeamSplitter {
    pub fn new(reflectance: f64, transmittance: f64) -> Result<Self> {
        if !(reflectance >= 0.0 && transmittance >= 0.0 && reflectance + transmittance <= 1.0 + 1e-12) {
            return Err(config_err(format!(
                "beam splitter needs R, T ≥ 0 and R + T ≤ 1 (got {reflectance}, {transmittance})"
            )));
        }
        Ok(Self {
            reflectance,
            transmittance,
        })
    }

    pub fn balanced() -> Self {
        Self {
            reflectance: 0.5,
            transmittance: 0.5,
        }
    }

    pub fn survival(&self) -> f64 {
        self.reflectance + self.transmittance
    }

    pub fn split(&self, rng: &mut StreamRng) -> Port {
        let u = rng.random::<f64>();
        if u < self.reflectance {
            Port::Reflect
        } else if u < self.reflectance + self.transmittance {
            Port::Transmit
        } else {
            Port::Lost
        }
    }
}

/// Routes one photon through `bs`.
pub fn split(bs: &BeamSplitter, _photon: &PhotonRecord, rng: &mut StreamRng) -> Port {
    bs.split(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarizationConfig {
    Co,
    Cross,
}

/// Output detector reached from the second splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    Det1,
    Det2,
    Lost,
}

/// Unbalanced Mach–Zehnder: `bs_in` reflects into the long (delayed) arm
/// and transmits into the short arm. At `bs_out` the short arm transmits to
/// detector 1 and the long arm reflects to detector 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HomInterferometer {
    pub bs_in: BeamSplitter,
    pub bs_out: BeamSplitter,
    pub arm_delay_ps: u64,
    /// Excitation period; photons `k` pulses apart meet when the delay is `k` periods.
    pub pulse_period_ps: u64,
    pub classical_visibility: f64,
    pub polarization: PolarizationConfig,
    /// Radiative lifetime setting the wavepacket shape.
    pub photon_lifetime_ps: f64,
}

impl HomInterferometer {
    /// Balanced splitters, delay matched to the repetition period.
    pub fn matched(pulse_period_ps: u64, photon_lifetime_ps: f64, polarization: PolarizationConfig) -> Self {
        Self {
            bs_in: BeamSplitter::balanced(),
            bs_out: BeamSplitter::balanced(),
            arm_delay_ps: pulse_period_ps,
            pulse_period_ps,
            classical_visibility: 1.0,
            polarization,
            photon_lifetime_ps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        BeamSplitter::new(self.bs_in.reflectance, self.bs_in.transmittance)?;
        BeamSplitter::new(self.bs_out.reflectance, self.bs_out.transmittance)?;
        if !(0.0..=1.0).contains(&self.classical_visibility) {
            return Err(config_err("classical_visibility must lie in [0, 1]"));
        }
        if self.pulse_period_ps == 0 || self.arm_delay_ps < self.pulse_period_ps / 2 {
            return Err(config_err("arm delay must be at least half a repetition period"));
        }
        if !(self.photon_lifetime_ps > 0.0) {
            return Err(config_err("photon lifetime must be positive"));
        }
        Ok(())
    }

    /// Number of repetition periods spanned by the long arm.
    pub fn delay_slots(&self) -> u64 {
        ((self.arm_delay_ps as f64 / self.pulse_period_ps as f64).round() as u64).max(1)
    }

    /// Wavepacket overlap of two photons meeting at `bs_out`. Zero unless both
    /// are signal photons of the same polarization.
    pub fn pair_overlap(&self, long: &PhotonRecord, short: &PhotonRecord) -> f64 {
        if long.origin != Origin::Signal || short.origin != Origin::Signal || long.polarization != short.polarization {
            return 0.0;
        }
        let spacing = short.pulse_index.saturating_sub(long.pulse_index) * self.pulse_period_ps;
        let mismatch = (self.arm_delay_ps as f64 - spacing as f64).abs();
        let temporal = (-mismatch / self.photon_lifetime_ps).exp();
        detuned_overlap(short.frequency_ghz() - long.frequency_ghz(), self.photon_lifetime_ps) * temporal
    }

    pub fn effective_overlap(&self, long: &PhotonRecord, short: &PhotonRecord) -> f64 {
        match self.polarization {
            PolarizationConfig::Cross => 0.0,
            PolarizationConfig::Co => self.classical_visibility.powi(2) * self.pair_overlap(long, short),
        }
    }

    pub fn route_short(&self, rng: &mut StreamRng) -> Output {
        match self.bs_out.split(rng) {
            Port::Transmit => Output::Det1,
            Port::Reflect => Output::Det2,
            Port::Lost => Output::Lost,
        }
    }

    pub fn route_long(&self, rng: &mut StreamRng) -> Output {
        match self.bs_out.split(rng) {
            Port::Reflect => Output::Det1,
            Port::Transmit => Output::Det2,
            Port::Lost => Output::Lost,
        }
    }

    /// Joint output ports of a short-arm and a long-arm photon arriving together.
    pub fn route_pair(&self, overlap: f64, rng: &mut StreamRng) -> (Output, Output) {
        let s = self.bs_out.survival();
        let short_alive = rng.random_bool(s.min(1.0));
        let long_alive = rng.random_bool(s.min(1.0));
        let r = self.bs_out.reflectance / s;
        let t = self.bs_out.transmittance / s;
        let single = |rng: &mut StreamRng, through: Output, cross: Output| {
            if rng.random_bool(t) {
                through
            } else {
                cross
            }
        };
        match (short_alive, long_alive) {
            (false, false) => (Output::Lost, Output::Lost),
            (true, false) => (single(rng, Output::Det1, Output::Det2), Output::Lost),
            (false, true) => (Output::Lost, single(rng, Output::Det2, Output::Det1)),
            (true, true) => {
                let split_prob = t * t + r * r - 2.0 * r * t * overlap;
                let together = r * t * (1.0 + overlap);
                let u = rng.random::<f64>();
                if u < split_prob {
                    // Distinguishable labelling: short→1 & long→2 (t²) or short→2 & long→1 (r²).
                    if u < split_prob * t * t / (t * t + r * r) {
                        (Output::Det1, Output::Det2)
                    } else {
                        (Output::Det2, Output::Det1)
                    }
                } else if u < split_prob + together {
                    (Output::Det1, Output::Det1)
                } else {
                    (Output::Det2, Output::Det2)
                }
            }
        }
    }
}

/// Arrival times at the two detectors for two photons sent through the
/// interferometer, `early` before `late`.
pub fn hom_interfere(
    ifo: &HomInterferometer,
    early: &PhotonRecord,
    late: &PhotonRecord,
    rng: &mut StreamRng,
) -> (Vec<u64>, Vec<u64>) {
    debug_assert!(early.emit_time_ps <= late.emit_time_ps);
    let mut det1 = Vec::new();
    let mut det2 = Vec::new();
    let arm = |rng: &mut StreamRng| ifo.bs_in.split(rng);
    let early_arm = arm(rng);
    let late_arm = arm(rng);
    let mut push = |out: Output, t: u64| match out {
        Output::Det1 => det1.push(t),
        Output::Det2 => det2.push(t),
        Output::Lost => {}
    };
    let slots = ifo.delay_slots();
    let meet = early_arm == Port::Reflect
        && late_arm == Port::Transmit
        && early.pulse_index + slots == late.pulse_index;
    if meet {
        let overlap = ifo.effective_overlap(early, late);
        let (short_out, long_out) = ifo.route_pair(overlap, rng);
        push(short_out, late.emit_time_ps);
        push(long_out, early.emit_time_ps + ifo.arm_delay_ps);
    } else {
        for (photon, port) in [(early, early_arm), (late, late_arm)] {
            match port {
                Port::Transmit => push(ifo.route_short(rng), photon.emit_time_ps),
                Port::Reflect => push(ifo.route_long(rng), photon.emit_time_ps + ifo.arm_delay_ps),
                Port::Lost => {}
            }
        }
    }
    det1.sort_unstable();
    det2.sort_unstable();
    (det1, det2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub irf_sigma_ps: f64,
    pub dead_time_ps: u64,
    pub dark_rate_cps: f64,
}

impl DetectorConfig {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            irf_sigma_ps: 0.0,
            dead_time_ps: 0,
            dark_rate_cps: 0.0,
        }
    }

    /// Slower near-infrared channel.
    pub fn nir_930() -> Self {
        Self {
            efficiency: 0.85,
            irf_sigma_ps: 180.0,
            dead_time_ps: 25_000,
            dark_rate_cps: 100.0,
        }
    }

    /// Faster telecom channel.
    pub fn telecom_1550() -> Self {
        Self {
            irf_sigma_ps: 40.0,
            ..Self::nir_930()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(config_err("detector efficiency must lie in [0, 1]"));
        }
        if !(self.irf_sigma_ps >= 0.0) || !(self.dark_rate_cps >= 0.0) {
            return Err(config_err("irf_sigma_ps and dark_rate_cps must be non-negative"));
        }
        Ok(())
    }

    /// Efficiency and timing jitter for one photon. `None` if not detected.
    pub fn register(&self, arrival_ps: u64, rng: &mut StreamRng) -> Option<u64> {
        if self.efficiency < 1.0 && !rng.random_bool(self.efficiency) {
            return None;
        }
        if self.irf_sigma_ps <= 0.0 {
            return Some(arrival_ps);
        }
        let jitter: f64 = Normal::new(0.0, self.irf_sigma_ps).expect("positive sigma").sample(rng);
        Some((arrival_ps as f64 + jitter).round().max(0.0) as u64)
    }

    pub fn dark_counts(&self, window: (u64, u64), rng: &mut StreamRng) -> Vec<u64> {
        let mean = self.dark_rate_cps * (window.1 - window.0) as f64 * 1e-12;
        if mean <= 0.0 {
            return Vec::new();
        }
        let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
        (0..n).map(|_| rng.random_range(window.0..window.1)).collect()
    }
}

/// A registered detector event before the dead-time veto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub time_ps: u64,
    pub dark: bool,
}

/// Outcome counts of one detector channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub registered: u64,
    pub vetoed: u64,
    pub undetected: u64,
    pub dark_registered: u64,
    pub dark_vetoed: u64,
}

impl DetectionCounts {
    pub fn add(&mut self, other: &Self) {
        self.registered += other.registered;
        self.vetoed += other.vetoed;
        self.undetected += other.undetected;
        self.dark_registered += other.dark_registered;
        self.dark_vetoed += other.dark_vetoed;
    }
}

/// Sorts `events` and drops any event within `dead_time_ps` of the previous
/// kept event. Sequential by nature.
pub fn apply_dead_time(mut events: Vec<Event>, dead_time_ps: u64, counts: &mut DetectionCounts) -> Vec<u64> {
    events.sort_unstable();
    let mut kept = Vec::with_capacity(events.len());
    let mut last: Option<u64> = None;
    for ev in events {
        let live = last.is_none_or(|l| ev.time_ps >= l + dead_time_ps.max(1) || dead_time_ps == 0);
        match (live, ev.dark) {
            (true, false) => counts.registered += 1,
            (true, true) => counts.dark_registered += 1,
            (false, false) => counts.vetoed += 1,
            (false, true) => counts.dark_vetoed += 1,
        }
        if live {
            kept.push(ev.time_ps);
            last = Some(ev.time_ps);
        }
    }
    kept
}

/// Detects photons arriving at one port during `window`.
pub fn detect(
    cfg: &DetectorConfig,
    channel_id: u16,
    arrivals: &[u64],
    window: (u64, u64),
    rng: &mut StreamRng,
) -> (TagStream, DetectionCounts) {
    let mut counts = DetectionCounts::default();
    let mut events = Vec::with_capacity(arrivals.len());
    for &t in arrivals {
        match cfg.register(t, rng) {
            Some(time_ps) => events.push(Event { time_ps, dark: false }),
            None => counts.undetected += 1,
        }
    }
    events.extend(cfg.dark_counts(window, rng).into_iter().map(|time_ps| Event { time_ps, dark: true }));
    let tags = apply_dead_time(events, cfg.dead_time_ps, &mut counts);
    (TagStream::from_unsorted(channel_id, tags), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polarization, RunSeed, Stage, Wavelength};

    fn rng(i: u64) -> StreamRng {
        RunSeed(17).substream(i, Stage::Synthetic)
    }

    fn photon(pulse_index: u64, t: u64) -> PhotonRecord {
        PhotonRecord {
            emit_time_ps: t,
            wavelength: Wavelength::new(1550.0).unwrap(),
            detuning_ghz: 0.0,
            polarization: Polarization::H,
            origin: Origin::Signal,
            pulse_index,
        }
    }

    #[test]
    fn full_reflector() {
        let bs = BeamSplitter::new(1.0, 0.0).unwrap();
        let mut r = rng(0);
        assert!((0..1000).all(|_| bs.split(&mut r) == Port::Reflect));
    }

    #[test]
    fn balanced_split_fraction() {
        let bs = BeamSplitter::balanced();
        let mut r = rng(1);
        let n = 1_000_000;
        let refl = (0..n).filter(|_| bs.split(&mut r) == Port::Reflect).count() as f64 / n as f64;
        assert!((refl - 0.5).abs() < 0.0015);
    }

    #[test]
    fn lossy_splitter_loses_ten_percent() {
        let bs = BeamSplitter::new(0.45, 0.45).unwrap();
        let mut r = rng(2);
        let n = 1_000_000;
        let lost = (0..n).filter(|_| bs.split(&mut r) == Port::Lost).count() as f64;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((lost - 0.1 * n as f64).abs() < 3.0 * sigma);
        assert!(BeamSplitter::new(0.6, 0.6).is_err());
    }

    #[test]
    fn ideal_detector_is_transparent() {
        let arrivals = [10u64, 500, 9_000];
        let (tags, counts) = detect(&DetectorConfig::ideal(), 1, &arrivals, (0, 10_000), &mut rng(3));
        assert_eq!(tags.tags(), &arrivals);
        assert_eq!(counts.registered, 3);
    }

    #[test]
    fn dead_time_veto() {
        let cfg = DetectorConfig {
            dead_time_ps: 50_000,
            ..DetectorConfig::ideal()
        };
        let (tags, counts) = detect(&cfg, 1, &[1_000, 1_010], (0, 100_000), &mut rng(4));
        assert_eq!(tags.len(), 1);
        assert_eq!(counts.vetoed, 1);
    }

    #[test]
    fn jitter_width() {
        let cfg = DetectorConfig {
            irf_sigma_ps: 100.0,
            ..DetectorConfig::ideal()
        };
        let mut r = rng(5);
        let t0 = 1_000_000u64;
        let xs: Vec<f64> = (0..100_000).map(|_| cfg.register(t0, &mut r).unwrap() as f64 - t0 as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var.sqrt() - 100.0).abs() < 2.0, "sigma {}", var.sqrt());
    }

    #[test]
    fn perfect_hom_dip() {
        let ifo = HomInterferometer::matched(13_699, 271.0, PolarizationConfig::Co);
        let (early, late) = (photon(0, 100), photon(1, 13_799));
        for i in 0..20_000 {
            let (d1, d2) = hom_interfere(&ifo, &early, &late, &mut rng(100 + i));
            let central = d1.iter().any(|a| d2.iter().any(|b| a.abs_diff(*b) < 6_000));
            assert!(!central);
        }
    }

    #[test]
    fn pair_route_probabilities_sum() {
        let ifo = HomInterferometer {
            bs_out: BeamSplitter::new(0.4, 0.55).unwrap(),
            ..HomInterferometer::matched(13_699, 271.0, PolarizationConfig::Co)
        };
        let mut r = rng(6);
        let n = 400_000;
        let m = 0.7;
        let mut split = 0u32;
        for _ in 0..n {
            let (a, b) = ifo.route_pair(m, &mut r);
            if (a == Output::Det1 && b == Output::Det2) || (a == Output::Det2 && b == Output::Det1) {
                split += 1;
            }
        }
        let (rr, tt) = (0.4, 0.55);
        let p = rr * rr + tt * tt - 2.0 * rr * tt * m;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((split as f64 - n as f64 * p).abs() < 4.0 * sigma);
    }

    #[test]
    fn overlap_zero_for_impurity_and_cross() {
        let mut ifo = HomInterferometer::matched(13_699, 271.0, PolarizationConfig::Co);
        let mut companion = photon(0, 100);
        companion.origin = Origin::Multiphoton;
        assert_eq!(ifo.effective_overlap(&companion, &photon(1, 13_799)), 0.0);
        assert_eq!(ifo.effective_overlap(&photon(0, 100), &photon(1, 13_799)), 1.0);
        ifo.polarization = PolarizationConfig::Cross;
        assert_eq!(ifo.effective_overlap(&photon(0, 100), &photon(1, 13_799)), 0.0);
    }
}
