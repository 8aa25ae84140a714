//! Two-photon propagation along the folded Klyshko path, ensemble G²
//! estimates and scanning-slit scan synthesis.

mod image;
mod monte_carlo;
mod path;
mod quadrature;
mod scan;

pub use image::{synthesize_image, GhostImage, ImageGrid, ImageProfile, TRUNCATION_TOLERANCE};
pub use monte_carlo::{
    fit_kernel, monte_carlo_g2, monte_carlo_g2_gridded, quadrature_g2, MonteCarloSettings,
};
pub use path::{KlyshkoPath, DEFAULT_REGULARIZATION_BIAS};
pub use quadrature::{klyshko_amplitude, required_fine_step, Pupil, QuadratureSettings};
pub use scan::{
    coherence_kernel, expected_rates, ingest_scan_csv, simulate_scan, DetectorModel, KernelSource,
    Provenance, ScanData, ScanSettings,
};
