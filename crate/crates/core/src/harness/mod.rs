//! Experiment configs, campaigns and figure reproduction.

pub mod campaign;
pub mod config;
pub mod figures;

pub use campaign::{
    model_curve, point_seeds, read_visibility_csv, run_campaign, CampaignPoint, CampaignReport,
    CurveSample,
};
pub use config::{Bundled, ExperimentConfig, KernelChoice, CONFIG_SCHEMA_VERSION};
pub use figures::{reproduce_figure, Figure};
