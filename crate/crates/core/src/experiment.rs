//! End-to-end measurement runs: emitter → optional converter → setup →
//! detectors. Pulses are simulated in parallel chunks; the dead-time veto
//! runs afterwards as one ordered pass per channel.

use rand::Rng;

use crate::conversion::{convert_photon, inject_noise, ConversionConfig};
use crate::error::Result;
use crate::model::{Origin, PulseTrainConfig, RunSeed, Stage, StreamRng, TagStream};
use crate::optics::{
    apply_dead_time, BeamSplitter, DetectionCounts, DetectorConfig, Event, HomInterferometer, Output, Port,
};
use crate::par;
use crate::source::{Emitter, EmitterConfig, PulsePhotons};

/// Dark counts are drawn per block of this many pulses.
pub const DARK_BLOCK_PULSES: u64 = 1 << 16;

/// Photon bookkeeping for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhotonLedger {
    pub emitted: u64,
    pub conversion_lost: u64,
    pub noise_added: u64,
    /// Photons entering the measurement setup.
    pub optics_input: u64,
    pub optics_lost: u64,
    pub channels: Vec<DetectionCounts>,
}

impl PhotonLedger {
    fn with_channels(n: usize) -> Self {
        Self {
            channels: vec![DetectionCounts::default(); n],
            ..Self::default()
        }
    }

    fn add(&mut self, other: &Self) {
        self.emitted += other.emitted;
        self.conversion_lost += other.conversion_lost;
        self.noise_added += other.noise_added;
        self.optics_input += other.optics_input;
        self.optics_lost += other.optics_lost;
        if self.channels.len() < other.channels.len() {
            self.channels.resize(other.channels.len(), DetectionCounts::default());
        }
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.add(b);
        }
    }

    /// Every photon entering the setup ends up registered, vetoed, undetected or lost.
    pub fn is_balanced(&self) -> bool {
        let accounted: u64 = self
            .channels
            .iter()
            .map(|c| c.registered + c.vetoed + c.undetected)
            .sum::<u64>()
            + self.optics_lost;
        accounted == self.optics_input
    }
}

/// Emitter plus optional frequency converter.
#[derive(Debug, Clone)]
pub struct SourceChain {
    pub emitter: Emitter,
    pub conversion: Option<ConversionConfig>,
}

impl SourceChain {
    pub fn new(
        emitter: EmitterConfig,
        train: PulseTrainConfig,
        conversion: Option<ConversionConfig>,
        seed: RunSeed,
    ) -> Result<Self> {
        if let Some(c) = &conversion {
            c.validate()?;
        }
        Ok(Self {
            emitter: Emitter::new(emitter, train, seed)?,
            conversion,
        })
    }

    pub fn train(&self) -> &PulseTrainConfig {
        &self.emitter.train
    }

    pub fn seed(&self) -> RunSeed {
        self.emitter.seed()
    }

    pub fn period_ps(&self) -> u64 {
        self.train().period_ps()
    }

    /// Mean survival of a signal photon through the converter.
    pub fn survival(&self) -> f64 {
        self.conversion.as_ref().map_or(1.0, |c| c.on_line_efficiency())
    }

    /// Photons delivered to the setup by pulse `i`.
    pub fn pulse(&self, i: u64, ledger: &mut PhotonLedger) -> PulsePhotons {
        let emitted = self.emitter.emit(i);
        ledger.emitted += emitted.len() as u64;
        self.convert(i, emitted, ledger)
    }

    /// Converter stage for the photons of pulse `i`, including background.
    pub fn convert(&self, i: u64, emitted: PulsePhotons, ledger: &mut PhotonLedger) -> PulsePhotons {
        let Some(conv) = &self.conversion else {
            return emitted;
        };
        let mut rng = self.seed().substream(i, Stage::Conversion);
        let mut out: PulsePhotons = emitted.iter().filter_map(|p| convert_photon(conv, p, &mut rng)).collect();
        ledger.conversion_lost += (emitted.len() - out.len()) as u64;
        if conv.noise_rate_cps > 0.0 {
            let train = self.train();
            let window = (train.pulse_start_ps(i), train.pulse_start_ps(i + 1));
            let noise = inject_noise(conv, window, i, &mut self.seed().substream(i, Stage::Noise));
            ledger.noise_added += noise.len() as u64;
            out.extend(noise);
        }
        out
    }
}

struct ChunkOutput {
    events: Vec<Vec<Event>>,
    ledger: PhotonLedger,
}

impl ChunkOutput {
    fn new(channels: usize) -> Self {
        Self {
            events: vec![Vec::new(); channels],
            ledger: PhotonLedger::with_channels(channels),
        }
    }

    fn detect(&mut self, ch: usize, det: &DetectorConfig, arrival_ps: u64, rng: &mut StreamRng) {
        match det.register(arrival_ps, rng) {
            Some(time_ps) => self.events[ch].push(Event { time_ps, dark: false }),
            None => self.ledger.channels[ch].undetected += 1,
        }
    }
}

fn dark_events(seed: RunSeed, train: &PulseTrainConfig, det: &DetectorConfig, channel: u64, horizon: u64) -> Vec<Event> {
    if det.dark_rate_cps <= 0.0 {
        return Vec::new();
    }
    let blocks = horizon.div_ceil(DARK_BLOCK_PULSES);
    let per_block = par::map_chunks(blocks, 64, |range| {
        let mut out = Vec::new();
        for b in range {
            let window = (
                train.pulse_start_ps(b * DARK_BLOCK_PULSES),
                train.pulse_start_ps(((b + 1) * DARK_BLOCK_PULSES).min(horizon)),
            );
            let mut rng = seed.substream(b * 16 + channel, Stage::DarkCounts);
            out.extend(det.dark_counts(window, &mut rng).into_iter().map(|time_ps| Event { time_ps, dark: true }));
        }
        out
    });
    per_block.concat()
}

/// Merges chunk outputs, adds dark counts and applies the dead-time veto.
fn finish(
    chain_seed: RunSeed,
    train: &PulseTrainConfig,
    chunks: Vec<ChunkOutput>,
    detectors: &[(u16, &DetectorConfig)],
    horizon: u64,
) -> (Vec<TagStream>, PhotonLedger) {
    let n = detectors.len();
    let mut ledger = PhotonLedger::with_channels(n);
    let mut events: Vec<Vec<Event>> = vec![Vec::new(); n];
    for chunk in chunks {
        ledger.add(&chunk.ledger);
        for (dst, src) in events.iter_mut().zip(chunk.events) {
            dst.extend(src);
        }
    }
    let mut streams = Vec::with_capacity(n);
    for (ch, (id, det)) in detectors.iter().enumerate() {
        let mut ev = std::mem::take(&mut events[ch]);
        ev.extend(dark_events(chain_seed, train, det, *id as u64, horizon));
        let tags = apply_dead_time(ev, det.dead_time_ps, &mut ledger.channels[ch]);
        streams.push(TagStream::from_unsorted(*id, tags));
    }
    (streams, ledger)
}

/// Output of a two-detector run.
#[derive(Debug, Clone)]
pub struct TwoChannelRun {
    pub ch1: TagStream,
    pub ch2: TagStream,
    pub ledger: PhotonLedger,
}

/// Probability that one photon from the chain clicks each HBT arm, ignoring dead time.
pub fn hbt_arm_detection(chain_survival: f64, bs: &BeamSplitter, det1: &DetectorConfig, det2: &DetectorConfig) -> [f64; 2] {
    [
        chain_survival * bs.reflectance * det1.efficiency,
        chain_survival * bs.transmittance * det2.efficiency,
    ]
}

pub fn run_hbt(
    chain: &SourceChain,
    bs: &BeamSplitter,
    det1: &DetectorConfig,
    det2: &DetectorConfig,
) -> Result<TwoChannelRun> {
    det1.validate()?;
    det2.validate()?;
    let seed = chain.seed();
    let n = chain.train().n_pulses;
    let chunks = par::map_chunks(n, par::DEFAULT_CHUNK, |range| {
        let mut out = ChunkOutput::new(2);
        for i in range {
            let photons = chain.pulse(i, &mut out.ledger);
            if photons.is_empty() {
                continue;
            }
            let mut rng_bs = seed.substream(i, Stage::BeamSplitter);
            let mut rng_det = seed.substream(i, Stage::Detection);
            for ph in &photons {
                out.ledger.optics_input += 1;
                match bs.split(&mut rng_bs) {
                    Port::Reflect => out.detect(0, det1, ph.emit_time_ps, &mut rng_det),
                    Port::Transmit => out.detect(1, det2, ph.emit_time_ps, &mut rng_det),
                    Port::Lost => out.ledger.optics_lost += 1,
                }
            }
        }
        out
    });
    let (mut streams, ledger) = finish(seed, chain.train(), chunks, &[(1, det1), (2, det2)], n);
    let ch2 = streams.pop().expect("two channels");
    let ch1 = streams.pop().expect("two channels");
    Ok(TwoChannelRun { ch1, ch2, ledger })
}

#[derive(Default, Clone)]
struct Arms {
    short: PulsePhotons,
    long: PulsePhotons,
}

fn split_arms(chain: &SourceChain, ifo: &HomInterferometer, p: u64, ledger: &mut PhotonLedger) -> Arms {
    let photons = chain.pulse(p, ledger);
    let mut arms = Arms::default();
    if photons.is_empty() {
        return arms;
    }
    let mut rng = chain.seed().substream(p, Stage::BeamSplitter);
    for ph in photons {
        ledger.optics_input += 1;
        match ifo.bs_in.split(&mut rng) {
            Port::Transmit => arms.short.push(ph),
            Port::Reflect => arms.long.push(ph),
            Port::Lost => ledger.optics_lost += 1,
        }
    }
    arms
}

/// Unbalanced Mach–Zehnder run. Slot `j` collects the short-arm photons of
/// pulse `j` and the long-arm photons of pulse `j − k`, where `k` is the
/// delay in periods.
pub fn run_hom(
    chain: &SourceChain,
    ifo: &HomInterferometer,
    det1: &DetectorConfig,
    det2: &DetectorConfig,
) -> Result<TwoChannelRun> {
    ifo.validate()?;
    det1.validate()?;
    det2.validate()?;
    let seed = chain.seed();
    let n = chain.train().n_pulses;
    let k = ifo.delay_slots();
    let chunks = par::map_chunks(n + k, par::DEFAULT_CHUNK, |range| {
        let mut out = ChunkOutput::new(2);
        let first = range.start.saturating_sub(k);
        let mut scratch = PhotonLedger::default();
        let mut arms: Vec<Arms> = (first..range.start)
            .map(|p| if p < n { split_arms(chain, ifo, p, &mut scratch) } else { Arms::default() })
            .collect();
        for j in range {
            arms.push(if j < n { split_arms(chain, ifo, j, &mut out.ledger) } else { Arms::default() });
            let short = &arms[(j - first) as usize].short;
            let empty = PulsePhotons::new();
            let long = if j >= k { &arms[(j - k - first) as usize].long } else { &empty };
            if short.is_empty() && long.is_empty() {
                continue;
            }
            let mut rng_out = seed.substream(j, Stage::OutputSplitter);
            let mut rng_det = seed.substream(j, Stage::Detection);
            let deliver = |out: &mut ChunkOutput, port: Output, t: u64, rng: &mut StreamRng| match port {
                Output::Det1 => out.detect(0, det1, t, rng),
                Output::Det2 => out.detect(1, det2, t, rng),
                Output::Lost => out.ledger.optics_lost += 1,
            };
            let si = short.iter().position(|p| p.origin == Origin::Signal);
            let li = long.iter().position(|p| p.origin == Origin::Signal);
            let pair = si.zip(li);
            if let Some((si, li)) = pair {
                let overlap = ifo.effective_overlap(&long[li], &short[si]);
                let (a, b) = ifo.route_pair(overlap, &mut rng_out);
                deliver(&mut out, a, short[si].emit_time_ps, &mut rng_det);
                deliver(&mut out, b, long[li].emit_time_ps + ifo.arm_delay_ps, &mut rng_det);
            }
            for (idx, ph) in short.iter().enumerate() {
                if pair.is_some_and(|(s, _)| s == idx) {
                    continue;
                }
                let port = ifo.route_short(&mut rng_out);
                deliver(&mut out, port, ph.emit_time_ps, &mut rng_det);
            }
            for (idx, ph) in long.iter().enumerate() {
                if pair.is_some_and(|(_, l)| l == idx) {
                    continue;
                }
                let port = ifo.route_long(&mut rng_out);
                deliver(&mut out, port, ph.emit_time_ps + ifo.arm_delay_ps, &mut rng_det);
            }
        }
        out
    });
    let (mut streams, ledger) = finish(seed, chain.train(), chunks, &[(1, det1), (2, det2)], n + k);
    let ch2 = streams.pop().expect("two channels");
    let ch1 = streams.pop().expect("two channels");
    Ok(TwoChannelRun { ch1, ch2, ledger })
}

/// Time-resolved decay measurement plus a separate IRF measurement with
/// prompt laser photons.
#[derive(Debug, Clone)]
pub struct LifetimeRun {
    pub sync: TagStream,
    pub signal: TagStream,
    pub irf_sync: TagStream,
    pub irf: TagStream,
    pub ledger: PhotonLedger,
}

/// Sync channel ids.
pub const SYNC_CHANNEL: u16 = 0;
pub const IRF_SYNC_CHANNEL: u16 = 8;
pub const IRF_CHANNEL: u16 = 9;

/// Sync tags for the pulses around each detection. Equivalent to the full
/// sync train for any correlation window shorter than one period.
pub fn conditional_sync(train: &PulseTrainConfig, channel_id: u16, detections: &TagStream) -> TagStream {
    let period = train.period_ps();
    let mut out: Vec<u64> = Vec::with_capacity(detections.len() * 2);
    for &t in detections.tags() {
        let p = t / period;
        for q in [p.saturating_sub(1), p, p + 1] {
            let s = q * period;
            if out.last().is_none_or(|&l| s > l) {
                out.push(s);
            }
        }
    }
    // Candidates arrive in ascending order per detection; a final sort guards the rare overlap.
    TagStream::from_unsorted(channel_id, {
        out.sort_unstable();
        out.dedup();
        out
    })
}

pub fn run_lifetime(chain: &SourceChain, det: &DetectorConfig, irf_photon_probability: f64) -> Result<LifetimeRun> {
    det.validate()?;
    let seed = chain.seed();
    let train = chain.train();
    let n = train.n_pulses;
    let q = irf_photon_probability.clamp(0.0, 1.0);
    let chunks = par::map_chunks(n, par::DEFAULT_CHUNK, |range| {
        let mut out = ChunkOutput::new(2);
        for i in range {
            let photons = chain.pulse(i, &mut out.ledger);
            if !photons.is_empty() {
                let mut rng = seed.substream(i, Stage::Detection);
                for ph in &photons {
                    out.ledger.optics_input += 1;
                    out.detect(0, det, ph.emit_time_ps, &mut rng);
                }
            }
            let mut rng = seed.substream(i, Stage::Irf);
            if q > 0.0 && rng.random_bool(q) {
                let t = train.pulse_start_ps(i) + (rng.random::<f64>() * train.pulse_width_ps).round() as u64;
                out.ledger.optics_input += 1;
                out.detect(1, det, t, &mut rng);
            }
        }
        out
    });
    let (mut streams, ledger) = finish(seed, train, chunks, &[(1, det), (IRF_CHANNEL, det)], n);
    let irf = streams.pop().expect("two channels");
    let signal = streams.pop().expect("two channels");
    Ok(LifetimeRun {
        sync: conditional_sync(train, SYNC_CHANNEL, &signal),
        irf_sync: conditional_sync(train, IRF_SYNC_CHANNEL, &irf),
        signal,
        irf,
        ledger,
    })
}

/// Count-rate estimate of one channel with dead-time and dark-count correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// Photon rate at the detector input.
    pub rate_cps: f64,
    pub rate_err_cps: f64,
    pub registered: u64,
}

/// Photon rate implied by `registered` clicks over a pulse train.
///
/// A registered click blocks the next `floor(dead/T)` pulses, so the
/// per-pulse click probability `d` relates to the observed click fraction `c`
/// by `c = d·(1 − k·c)`.
pub fn pulsed_rate(registered: u64, train: &PulseTrainConfig, det: &DetectorConfig) -> RateEstimate {
    let n = train.n_pulses.max(1) as f64;
    let dark = det.dark_rate_cps * train.duration_s();
    let c = registered as f64 / n;
    let k = (det.dead_time_ps / train.period_ps()) as f64;
    let d = c / (1.0 - k * c);
    let clicks = (d * n - dark).max(0.0);
    let per_s = 1.0 / (train.duration_s() * det.efficiency.max(f64::MIN_POSITIVE));
    let rel = if registered > 0 { 1.0 / (registered as f64).sqrt() } else { 0.0 };
    RateEstimate {
        rate_cps: clicks * per_s,
        rate_err_cps: clicks * per_s * rel,
        registered,
    }
}

/// Rates before and after conversion measured on the same pulses.
#[derive(Debug, Clone)]
pub struct RateRun {
    pub input: TagStream,
    pub output: TagStream,
    pub ledger: PhotonLedger,
    pub n_in: RateEstimate,
    pub n_out: RateEstimate,
    pub eta: f64,
    pub eta_err: f64,
}

pub const INPUT_CHANNEL: u16 = 3;
pub const OUTPUT_CHANNEL: u16 = 4;

pub fn run_rate(chain: &SourceChain, det_in: &DetectorConfig, det_out: &DetectorConfig) -> Result<RateRun> {
    det_in.validate()?;
    det_out.validate()?;
    let seed = chain.seed();
    let train = chain.train();
    let n = train.n_pulses;
    let chunks = par::map_chunks(n, par::DEFAULT_CHUNK, |range| {
        let mut out = ChunkOutput::new(2);
        for i in range {
            // Tap measurement of the unconverted photons.
            let emitted = chain.emitter.emit(i);
            out.ledger.emitted += emitted.len() as u64;
            if !emitted.is_empty() {
                let mut rng = seed.substream(i, Stage::Tap);
                for ph in &emitted {
                    out.ledger.optics_input += 1;
                    out.detect(0, det_in, ph.emit_time_ps, &mut rng);
                }
            }
            let converted = chain.convert(i, emitted, &mut out.ledger);
            if !converted.is_empty() {
                let mut rng = seed.substream(i, Stage::Detection);
                for ph in &converted {
                    out.ledger.optics_input += 1;
                    out.detect(1, det_out, ph.emit_time_ps, &mut rng);
                }
            }
        }
        out
    });
    let (mut streams, ledger) = finish(seed, train, chunks, &[(INPUT_CHANNEL, det_in), (OUTPUT_CHANNEL, det_out)], n);
    let output = streams.pop().expect("two channels");
    let input = streams.pop().expect("two channels");
    let n_in = pulsed_rate(ledger.channels[0].registered, train, det_in);
    let n_out = pulsed_rate(ledger.channels[1].registered, train, det_out);
    let eta = crate::conversion::rate_efficiency(n_in.rate_cps, n_out.rate_cps)?;
    let rel_in = n_in.rate_err_cps / n_in.rate_cps;
    let rel_out = if n_out.rate_cps > 0.0 { n_out.rate_err_cps / n_out.rate_cps } else { 0.0 };
    let eta_err = eta * (rel_in * rel_in + rel_out * rel_out).sqrt();
    Ok(RateRun {
        input,
        output,
        ledger,
        n_in,
        n_out,
        eta,
        eta_err,
    })
}
