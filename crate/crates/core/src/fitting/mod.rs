//! Weighted nonlinear least squares for scans, kernels and campaigns.

mod alpha_fit;
mod gaussian;
pub mod lm;
mod scan_fit;
mod slit;

pub use alpha_fit::{fit_alpha, write_campaign_csv, AlphaFit};
pub use gaussian::{fit_gaussian, GaussianFit};
pub use scan_fit::{
    fit_profile, fit_scan, fit_scan_auto, FitOptions, FitResult, ScanFitModel, FIT_SCHEMA_VERSION,
};
pub use slit::{slit_correction, slit_factor};
