//! Turning tag streams into the reported quantities.

pub mod correlate;
pub mod lifetime;
pub mod peaks;
pub mod visibility;

pub use correlate::{cross_correlate, cross_correlate_range, cross_correlate_sequential};
pub use lifetime::{fit_lifetime, model_curve, LifetimeFit};
pub use peaks::{estimate_g2, integrate_peaks, G2Estimate, PeakIntegration};
pub use visibility::{estimate_visibility, VisibilityCalibration, VisibilityResult};
