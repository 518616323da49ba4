use std::f64::consts::PI;

use photonflow::model::Wavelength;
use photonflow::source::{pairwise_overlap, EmitterConfig};

const TAU: f64 = 271.0;

fn lifetime_limited(delta_ghz: f64) -> f64 {
    let x = 2.0 * PI * TAU * 1e-3 * delta_ghz;
    1.0 / (1.0 + x * x)
}

/// Averages the detuned overlap over two independent Lorentzian detunings
/// of FWHM `gamma`, each mapped to a uniform angle so the heavy tails are
/// integrated exactly.
fn lorentzian_double_integral(gamma: f64, n: usize) -> f64 {
    let hwhm = gamma / 2.0;
    let node = |k: usize| hwhm * (-PI / 2.0 + (k as f64 + 0.5) * PI / n as f64).tan();
    let nodes: Vec<f64> = (0..n).map(node).collect();
    let mut sum = 0.0;
    for &a in &nodes {
        for &b in &nodes {
            sum += lifetime_limited(a - b);
        }
    }
    sum / (n * n) as f64
}

/// Same for two independent Gaussian detunings of standard deviation `sigma`.
fn gaussian_double_integral(sigma: f64, n: usize) -> f64 {
    let half = 8.0 * sigma;
    let h = 2.0 * half / n as f64;
    let nodes: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x = -half + (k as f64 + 0.5) * h;
            (x, (-0.5 * (x / sigma).powi(2)).exp() * h / (sigma * (2.0 * PI).sqrt()))
        })
        .collect();
    let mut sum = 0.0;
    for &(a, wa) in &nodes {
        for &(b, wb) in &nodes {
            sum += wa * wb * lifetime_limited(a - b);
        }
    }
    sum
}

fn emitter() -> EmitterConfig {
    EmitterConfig::ideal(Wavelength::new(945.0).unwrap(), TAU, 0.5)
}

#[test]
fn pure_wavepackets_fully_overlap() {
    assert_eq!(pairwise_overlap(&emitter()), 1.0);
}

#[test]
fn lorentzian_dephasing_matches_double_integral() {
    for gamma in [0.01, 0.05, 0.2, 1.0] {
        let cfg = EmitterConfig { dephasing_linewidth_ghz: gamma, ..emitter() };
        let oracle = lorentzian_double_integral(gamma, 1500);
        let got = pairwise_overlap(&cfg);
        assert!((got - oracle).abs() < 2e-3, "gamma {gamma}: {got} vs {oracle}");
    }
}

#[test]
fn uncorrelated_wander_matches_double_integral() {
    // One pulse per block: consecutive photons see independent wander.
    for sigma in [0.1, 0.5, 3.0] {
        let cfg = EmitterConfig {
            spectral_diffusion_sigma_ghz: sigma,
            diffusion_block_pulses: 1,
            ..emitter()
        };
        let oracle = gaussian_double_integral(sigma, 1200);
        let got = pairwise_overlap(&cfg);
        assert!((got - oracle).abs() < 2e-3, "sigma {sigma}: {got} vs {oracle}");
    }
}

#[test]
fn broad_wander_destroys_overlap() {
    let cfg = EmitterConfig {
        spectral_diffusion_sigma_ghz: 10.0,
        diffusion_block_pulses: 1,
        ..emitter()
    };
    let got = pairwise_overlap(&cfg);
    assert!(got < 0.1, "{got}");
    assert!((got - gaussian_double_integral(10.0, 1600)).abs() < 2e-3);
}

#[test]
fn overlap_never_increases_with_broadening() {
    let mut last = f64::INFINITY;
    for k in 0..40 {
        let cfg = EmitterConfig { dephasing_linewidth_ghz: 0.02 * k as f64, ..emitter() };
        let m = pairwise_overlap(&cfg);
        assert!(m <= last + 1e-15);
        last = m;
    }
    let mut last = f64::INFINITY;
    for k in 0..40 {
        let cfg = EmitterConfig {
            dephasing_linewidth_ghz: 0.05,
            spectral_diffusion_sigma_ghz: 0.05 * k as f64,
            diffusion_block_pulses: 3,
            ..emitter()
        };
        let m = pairwise_overlap(&cfg);
        assert!(m <= last + 1e-15);
        last = m;
    }
}
