//! Executes one configured experiment and writes its artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand_distr::{Distribution, StandardNormal};

use crate::analysis::peaks::snap_to_period;
use crate::analysis::visibility::normalized_central;
use crate::analysis::{
    cross_correlate_range, estimate_g2, estimate_visibility, fit_lifetime, integrate_peaks, model_curve,
    PeakIntegration,
};
use crate::cli::config::{ExperimentKind, Resolved, RunConfig};
use crate::cli::manifest;
use crate::cli::report::Report;
use crate::cli::svg::{self, Band, Plot, Series};
use crate::conversion::fit_saturation;
use crate::error::{config_err, Result};
use crate::experiment::{run_hbt, run_hom, run_lifetime, run_rate, PhotonLedger, TwoChannelRun};
use crate::model::{CoincidenceHistogram, Stage, TagStream};
use crate::optics::PolarizationConfig;
use crate::par;
use crate::source::pairwise_overlap;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ENV: &str = "PHOTONFLOW_OUTPUT";

/// Reference delay used for g² when the emitter blinks.
const BLINKING_REFERENCE_PS: i64 = 40_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Csv,
    Svg,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    fn svg(self) -> bool {
        matches!(self, Self::Svg | Self::Both)
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown format '{other}' (expected csv, svg or both)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub format: OutputFormat,
    pub output_dir: Option<PathBuf>,
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub report: Report,
    pub flagged: bool,
}

impl Artifacts {
    fn new(report: Report) -> Self {
        Self {
            files: Vec::new(),
            report,
            flagged: false,
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_tags(&mut self, name: &str, tags: &TagStream) -> Result<()> {
        let mut buf = Vec::new();
        tags.write_to(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    fn add_histogram(&mut self, name: &str, h: &CoincidenceHistogram) -> Result<()> {
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub report: Report,
    pub flagged: bool,
}

/// Bin-grid-aligned `(lo, hi)` centers covering `center ± half_span`.
fn grid_around(center: i64, half_span: i64, w: u64) -> (i64, i64) {
    let w = w as i64;
    let m = (half_span + w - 1) / w;
    (center - m * w, center + m * w)
}

fn central_cluster(a: &TagStream, b: &TagStream, period: u64, hw: u64, w: u64) -> Result<CoincidenceHistogram> {
    let (lo, hi) = grid_around(0, 3 * period as i64 + hw as i64, w);
    cross_correlate_range(a, b, lo, hi, w)
}

/// Peaks of the central cluster plus the peaks at `±reference`.
fn peaks_with_reference(
    a: &TagStream,
    b: &TagStream,
    central: &CoincidenceHistogram,
    period: u64,
    hw: u64,
    w: u64,
    reference: i64,
) -> Result<PeakIntegration> {
    let mut peaks = integrate_peaks(central, period, hw)?;
    for d in [reference, -reference] {
        if peaks.area_at(d).is_none() {
            let (lo, hi) = grid_around(d, hw as i64, w);
            let h = cross_correlate_range(a, b, lo, hi, w)?;
            peaks.extend(&integrate_peaks(&h, period, hw)?)?;
        }
    }
    Ok(peaks)
}

/// Sub-histogram with bin centers in `[lo, hi]`.
fn slice(h: &CoincidenceHistogram, lo: i64, hi: i64) -> CoincidenceHistogram {
    let idx: Vec<usize> = (0..h.len()).filter(|&i| (lo..=hi).contains(&h.bin_center(i))).collect();
    match (idx.first(), idx.last()) {
        (Some(&i0), Some(&i1)) => CoincidenceHistogram {
            bin_width_ps: h.bin_width_ps,
            offset_ps: h.bin_center(i0),
            counts: h.counts[i0..=i1].to_vec(),
        },
        _ => CoincidenceHistogram::zeros(h.bin_width_ps, lo, 0),
    }
}

fn ledger_report(report: &mut Report, ledger: &PhotonLedger, names: &[&str]) {
    report.set("photons_emitted", ledger.emitted);
    report.set("photons_conversion_lost", ledger.conversion_lost);
    report.set("photons_noise_added", ledger.noise_added);
    report.set("photons_setup_input", ledger.optics_input);
    report.set("photons_setup_lost", ledger.optics_lost);
    for (c, name) in ledger.channels.iter().zip(names) {
        report.set(&format!("{name}_registered"), c.registered);
        report.set(&format!("{name}_vetoed"), c.vetoed);
        report.set(&format!("{name}_undetected"), c.undetected);
        report.set(&format!("{name}_dark_registered"), c.dark_registered);
    }
    report.set("photon_ledger_balanced", ledger.is_balanced());
}

fn g2_reference(cfg: &RunConfig, r: &Resolved) -> Result<i64> {
    let t = r.train.period_ps();
    let reference = match cfg.analysis.g2_reference_delay_ps {
        Some(d) => snap_to_period(d, t),
        None if r.emitter.blinking.is_some() => snap_to_period(BLINKING_REFERENCE_PS, t),
        // First peak whose pulses cannot be blocked by the dead time of the previous click.
        None => ((r.ch1.dead_time_ps.max(r.ch2.dead_time_ps) / t + 1) * t) as i64,
    };
    if reference == 0 {
        return Err(config_err("g2 reference delay snaps to zero"));
    }
    Ok(reference)
}

fn histogram_plot(title: &str, series: Vec<Series>) -> Vec<u8> {
    svg::render(&Plot {
        title: title.into(),
        x_label: "delay (ps)".into(),
        y_label: "coincidences".into(),
        series,
        band: None,
        markers: false,
    })
    .into_bytes()
}

fn describe(report: &mut Report, cfg: &RunConfig, r: &Resolved) {
    report.set("seed", cfg.seed);
    report.set("n_pulses", r.train.n_pulses);
    report.set("period_ps", r.train.period_ps());
    report.set("p_emit", r.emitter.p_emit);
    report.set("p_multi", r.emitter.p_multi);
    report.set("dephasing_linewidth_ghz", r.emitter.dephasing_linewidth_ghz);
    report.set("conversion_efficiency", r.chain_survival());
    if let Some(g) = r.calibrated_g2 {
        report.set("target_g2", g);
    }
}

fn hbt(cfg: &RunConfig, r: &Resolved, format: OutputFormat) -> Result<Artifacts> {
    let chain = r.chain(cfg.run_seed())?;
    let run = run_hbt(&chain, &r.hbt_splitter, &r.ch1, &r.ch2)?;
    let (t, a) = (r.train.period_ps(), &cfg.analysis);
    let reference = g2_reference(cfg, r)?;
    let central = central_cluster(&run.ch1, &run.ch2, t, a.half_window_ps, a.bin_width_ps)?;
    let peaks = peaks_with_reference(&run.ch1, &run.ch2, &central, t, a.half_window_ps, a.bin_width_ps, reference)?;
    let g = estimate_g2(&peaks, reference)?;

    let mut report = Report::new(cfg.experiment.name());
    describe(&mut report, cfg, r);
    report.set_measure("g2", g.g2, g.g2_err);
    report.set("central_area", g.central_area);
    report.set("reference_area", g.reference_area);
    report.set("reference_delay_ps", reference);
    ledger_report(&mut report, &run.ledger, &["ch1", "ch2"]);

    let mut out = Artifacts::new(report);
    out.add_tags("ch1.tags", &run.ch1)?;
    out.add_tags("ch2.tags", &run.ch2)?;
    if format.csv() {
        out.add_histogram("histogram.csv", &central)?;
    }
    if format.svg() {
        out.add("hbt.svg", histogram_plot("HBT correlation", vec![svg::histogram_series(&central, "ch1 × ch2", "#5b2a86")]));
    }
    Ok(out)
}

fn hom_single(cfg: &RunConfig, r: &Resolved, pol: PolarizationConfig) -> Result<(TwoChannelRun, CoincidenceHistogram)> {
    let chain = r.chain(cfg.run_seed())?;
    let mut ifo = r.interferometer.clone();
    ifo.polarization = pol;
    let run = run_hom(&chain, &ifo, &r.ch1, &r.ch2)?;
    let (t, a) = (r.train.period_ps(), &cfg.analysis);
    let norm = snap_to_period(a.norm_delay_ps, t).abs();
    let span = norm.max(3 * t as i64) + a.half_window_ps as i64;
    let (lo, hi) = grid_around(0, span, a.bin_width_ps);
    let h = cross_correlate_range(&run.ch1, &run.ch2, lo, hi, a.bin_width_ps)?;
    Ok((run, h))
}

fn cluster_view(h: &CoincidenceHistogram, t: u64, hw: u64) -> CoincidenceHistogram {
    let span = 3 * t as i64 + hw as i64;
    slice(h, -span, span)
}

fn hom(cfg: &RunConfig, r: &Resolved, format: OutputFormat) -> Result<Artifacts> {
    let (t, a) = (r.train.period_ps(), &cfg.analysis);
    let norm = snap_to_period(a.norm_delay_ps, t);
    if norm == 0 {
        return Err(config_err("norm_delay_ps snaps to zero"));
    }
    let mut report = Report::new(cfg.experiment.name());
    describe(&mut report, cfg, r);
    report.set("ground_truth_overlap", pairwise_overlap(&r.emitter));
    report.set("norm_delay_ps", norm);
    let pols: &[(PolarizationConfig, &str)] = match cfg.experiment {
        ExperimentKind::HomCo => &[(PolarizationConfig::Co, "")],
        ExperimentKind::HomCross => &[(PolarizationConfig::Cross, "")],
        _ => &[(PolarizationConfig::Co, "co_"), (PolarizationConfig::Cross, "cross_")],
    };
    let mut files = Vec::new();
    let mut hists = Vec::new();
    let mut series = Vec::new();
    for &(pol, prefix) in pols {
        let (run, h) = hom_single(cfg, r, pol)?;
        let n = normalized_central(&h, t, a.half_window_ps, norm)?;
        report.set_measure(&format!("{prefix}normalized_central_area"), n.area, n.err);
        let names = [format!("{prefix}ch1"), format!("{prefix}ch2")];
        ledger_report(&mut report, &run.ledger, &[names[0].as_str(), names[1].as_str()]);
        let mut buf = Vec::new();
        run.ch1.write_to(&mut buf)?;
        files.push((format!("{prefix}ch1.tags"), buf));
        let mut buf = Vec::new();
        run.ch2.write_to(&mut buf)?;
        files.push((format!("{prefix}ch2.tags"), buf));
        let view = cluster_view(&h, t, a.half_window_ps);
        let (label, color) = match pol {
            PolarizationConfig::Co => ("co-polarized", "#1f77b4"),
            PolarizationConfig::Cross => ("cross-polarized", "#d62728"),
        };
        series.push(svg::histogram_series(&view, label, color));
        hists.push((prefix, view, h));
    }
    let mut flagged = false;
    if let [(_, _, co), (_, _, cross)] = hists.as_slice() {
        let v = estimate_visibility(co, cross, norm, t, a.half_window_ps, r.calibration)?;
        report.set_measure("a_par", v.a_par, v.a_par_err);
        report.set_measure("a_perp", v.a_perp, v.a_perp_err);
        report.set_measure("v_raw", v.v_raw, v.v_raw_err);
        report.set_measure("v_corr", v.v_corr, v.v_corr_err);
        let c = &v.calib;
        report.set("calib_r1", c.r1);
        report.set("calib_t1", c.t1);
        report.set("calib_r2", c.r2);
        report.set("calib_t2", c.t2);
        report.set("calib_epsilon", c.epsilon);
        report.set("calib_g2", c.g2);
        report.set("flagged", v.flagged);
        flagged = v.flagged;
    }
    let mut out = Artifacts::new(report);
    out.flagged = flagged;
    for (name, bytes) in files {
        out.add(&name, bytes);
    }
    if format.csv() {
        for (prefix, view, _) in &hists {
            out.add_histogram(&format!("{prefix}histogram.csv"), view)?;
        }
    }
    if format.svg() {
        out.add("hom.svg", histogram_plot("Two-photon interference", series));
    }
    Ok(out)
}

fn lifetime(cfg: &RunConfig, r: &Resolved, format: OutputFormat) -> Result<Artifacts> {
    let chain = r.chain(cfg.run_seed())?;
    let a = &cfg.analysis;
    let run = run_lifetime(&chain, &r.ch1, a.irf_photon_probability)?;
    let w = a.lifetime_bin_ps;
    let lo = a.lifetime_window_start_ps;
    let span = (a.lifetime_window_end_ps - lo) as u64;
    let hi = lo + (span.div_ceil(w) * w) as i64;
    let h = cross_correlate_range(&run.sync, &run.signal, lo, hi, w)?;
    let irf = cross_correlate_range(&run.irf_sync, &run.irf, lo, hi, w)?;
    let fit = fit_lifetime(&h, &irf)?;

    let mut report = Report::new(cfg.experiment.name());
    describe(&mut report, cfg, r);
    report.set_measure("tau_ps", fit.tau_ps, fit.tau_err_ps);
    report.set_measure("offset_ps", fit.offset_ps, fit.offset_err_ps);
    report.set("amplitude", fit.amplitude);
    report.set("baseline", fit.baseline);
    report.set("irf_sigma_used_ps", fit.irf_sigma_used_ps);
    report.set("residual_rms", fit.residual_rms);
    report.set("decay_counts", h.total());
    report.set("irf_counts", irf.total());
    ledger_report(&mut report, &run.ledger, &["ch1", "irf"]);

    let mut out = Artifacts::new(report);
    out.add_tags("sync.tags", &run.sync)?;
    out.add_tags("ch1.tags", &run.signal)?;
    out.add_tags("irf_sync.tags", &run.irf_sync)?;
    out.add_tags("irf.tags", &run.irf)?;
    if format.csv() {
        out.add_histogram("histogram.csv", &h)?;
        out.add_histogram("irf.csv", &irf)?;
    }
    if format.svg() {
        let model = model_curve(&irf, &fit)?;
        let fit_series = Series {
            label: format!("fit τ = {:.1} ± {:.1} ps", fit.tau_ps, fit.tau_err_ps),
            color: "#d62728",
            points: (0..h.len()).map(|i| (h.bin_center(i) as f64, model[i])).collect(),
            dashed: true,
        };
        let scale = h.total() as f64 / irf.total().max(1) as f64;
        let mut irf_series = svg::histogram_series(&irf, "IRF (scaled)", "#e0b000");
        for p in &mut irf_series.points {
            p.1 *= scale;
        }
        out.add(
            "lifetime.svg",
            histogram_plot(
                "Decay histogram",
                vec![svg::histogram_series(&h, "decay", "#5b2a86"), irf_series, fit_series],
            ),
        );
    }
    Ok(out)
}

fn rate(cfg: &RunConfig, r: &Resolved) -> Result<Artifacts> {
    let chain = r.chain(cfg.run_seed())?;
    let run = run_rate(&chain, &r.input, &r.ch1)?;
    let mut report = Report::new(cfg.experiment.name());
    describe(&mut report, cfg, r);
    report.set_measure("n_in_cps", run.n_in.rate_cps, run.n_in.rate_err_cps);
    report.set_measure("n_out_cps", run.n_out.rate_cps, run.n_out.rate_err_cps);
    report.set_measure("eta_ext", run.eta, run.eta_err);
    ledger_report(&mut report, &run.ledger, &["input", "output"]);
    let mut out = Artifacts::new(report);
    out.add_tags("input.tags", &run.input)?;
    out.add_tags("output.tags", &run.output)?;
    Ok(out)
}

fn saturation_scan(cfg: &RunConfig, r: &Resolved, format: OutputFormat) -> Result<Artifacts> {
    let conv = r.conversion.as_ref().ok_or_else(|| config_err("saturation_scan needs [conversion]"))?;
    let s = cfg.saturation_scan.clone().unwrap_or_default();
    let model = conv.saturation();
    let mut rng = cfg.run_seed().substream(0, Stage::Synthetic);
    let points: Vec<(f64, f64)> = (0..s.points)
        .map(|k| {
            let p = s.max_power_mw * (k + 1) as f64 / s.points as f64;
            let z: f64 = StandardNormal.sample(&mut rng);
            (p, model.efficiency(p) * (1.0 + s.noise_fraction * z))
        })
        .collect();
    let fit = fit_saturation(&points)?;
    let mut report = Report::new(cfg.experiment.name());
    report.set("seed", cfg.seed);
    report.set("points", s.points);
    report.set_measure("eta_max", fit.eta_max, fit.eta_max_err);
    report.set_measure("p_sat_mw", fit.p_sat_mw, fit.p_sat_err_mw);
    report.set("residual_rms", fit.residual_rms);

    let mut out = Artifacts::new(report);
    let fitted = fit.model();
    if format.csv() {
        let mut csv = String::from("pump_mw,eta_measured,eta_fit\n");
        for &(p, e) in &points {
            csv.push_str(&format!("{p},{e},{}\n", fitted.efficiency(p)));
        }
        out.add("saturation.csv", csv.into_bytes());
    }
    if format.svg() {
        let xs: Vec<f64> = (0..=200).map(|i| s.max_power_mw * i as f64 / 200.0).collect();
        let shape = |p: f64| fitted.efficiency(p) / fitted.eta_max;
        let transmission = conv.loss_budget.transmission();
        let band = Band {
            label: "ideal-case bounds".into(),
            lower: xs.iter().map(|&p| transmission * s.eta_int_lower * shape(p)).collect(),
            upper: xs.iter().map(|&p| transmission * s.eta_int_upper * shape(p)).collect(),
            x: xs.clone(),
        };
        let plot = Plot {
            title: "Conversion efficiency vs pump power".into(),
            x_label: "pump power (mW)".into(),
            y_label: "external efficiency".into(),
            series: vec![
                Series {
                    label: "data".into(),
                    color: "#5b2a86",
                    points: points.clone(),
                    dashed: false,
                },
                Series {
                    label: "fit".into(),
                    color: "#5b2a86",
                    points: xs.iter().map(|&p| (p, fitted.efficiency(p))).collect(),
                    dashed: true,
                },
            ],
            band: Some(band),
            markers: true,
        };
        out.add("saturation.svg", svg::render(&plot).into_bytes());
    }
    Ok(out)
}

/// Runs the configured experiment without touching the filesystem.
pub fn simulate(cfg: &RunConfig, workers: Option<usize>, format: OutputFormat) -> Result<Artifacts> {
    let r = cfg.resolve()?;
    let mut out = par::with_workers(workers, || match cfg.experiment {
        ExperimentKind::Hbt => hbt(cfg, &r, format),
        ExperimentKind::HomCo | ExperimentKind::HomCross | ExperimentKind::HomPaired => hom(cfg, &r, format),
        ExperimentKind::Lifetime => lifetime(cfg, &r, format),
        ExperimentKind::Rate => rate(cfg, &r),
        ExperimentKind::SaturationScan => saturation_scan(cfg, &r, format),
    })?;
    out.add("report.txt", out.report.render().into_bytes());
    out.add("resolved.cfg", cfg.to_toml().into_bytes());
    Ok(out)
}

/// Loads `config_path`, runs it and writes artifacts plus a manifest.
pub fn execute(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.resolve()?;
    }
    let output_dir = opts.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let artifacts = simulate(&cfg, opts.workers, opts.format)?;
    write_artifacts(&output_dir, &cfg, &artifacts)?;
    Ok(RunOutcome {
        output_dir,
        report: artifacts.report,
        flagged: artifacts.flagged,
    })
}

pub fn write_artifacts(dir: &Path, cfg: &RunConfig, artifacts: &Artifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &artifacts.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let text = manifest::render(&cfg.to_toml(), cfg.seed, created, &artifacts.files);
    std::fs::write(dir.join(manifest::MANIFEST_NAME), text)?;
    Ok(())
}

/// Resolved configuration plus derived quantities, for `--dry-run`.
pub fn describe_config(cfg: &RunConfig) -> Result<String> {
    let r = cfg.resolve()?;
    let mut text = cfg.to_toml();
    text.push_str("\n# derived\n");
    text.push_str(&format!("# period_ps = {}\n", r.train.period_ps()));
    text.push_str(&format!("# p_multi = {}\n", r.emitter.p_multi));
    text.push_str(&format!("# dephasing_linewidth_ghz = {}\n", r.emitter.dephasing_linewidth_ghz));
    text.push_str(&format!("# pairwise_overlap = {}\n", pairwise_overlap(&r.emitter)));
    text.push_str(&format!("# conversion_efficiency = {}\n", r.chain_survival()));
    if let Some(c) = &r.conversion {
        text.push_str(&format!("# pump_wavelength_nm = {}\n", c.pump_wavelength.nm()));
    }
    Ok(text)
}
