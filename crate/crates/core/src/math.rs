//! Small numerical helpers.

use statrs::function::erf::erfc;

/// Scaled complementary error function `exp(x²)·erfc(x)`, for `x ≥ 0`.
pub fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        (x * x).exp() * erfc(x)
    } else {
        // Asymptotic series; the next term is below 1e-8 relative here.
        let inv2 = 1.0 / (2.0 * x * x);
        (1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2 * inv2 * inv2) / (x * std::f64::consts::PI.sqrt())
    }
}

/// Overlap `|⟨ψ₁|ψ₂⟩|²` of two lifetime-limited wavepackets detuned by `delta_ghz`.
pub fn detuned_overlap(delta_ghz: f64, lifetime_ps: f64) -> f64 {
    let x = 2.0 * std::f64::consts::PI * lifetime_ps * 1e-3 * delta_ghz;
    1.0 / (1.0 + x * x)
}

/// Lifetime-limited linewidth `1/(2πτ)` in GHz for `τ` in ps.
pub fn lifetime_linewidth_ghz(lifetime_ps: f64) -> f64 {
    1.0e3 / (2.0 * std::f64::consts::PI * lifetime_ps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_continuous_across_branch() {
        let below = (24.999f64 * 24.999).exp() * erfc(24.999);
        assert!((erfcx(25.0) - below).abs() / below < 1e-4);
        assert!((erfcx(0.0) - 1.0).abs() < 1e-14);
        // erfcx(1) = e·erfc(1)
        let v = erfcx(1.0);
        assert!((v - 0.427_583_576_155_807).abs() < 1e-9, "{v:e}");
    }

    #[test]
    fn overlap_halves_at_linewidth() {
        let tau = 271.0;
        let gamma = lifetime_linewidth_ghz(tau);
        assert!((detuned_overlap(gamma, tau) - 0.5).abs() < 1e-12);
        assert_eq!(detuned_overlap(0.0, tau), 1.0);
    }
}
