//! Strict JSON experiment configs.
//!
//! Every key carries its unit (`l1_mm`, `alpha_per_mm2`, `wavelength_nm`);
//! unknown keys are rejected. Omitted optional keys take the defaults of
//! the reference apparatus and are echoed back by [`ExperimentConfig::to_json`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{DetectorModel, KernelSource};
use crate::model::laws::fringe_wavenumber;
use crate::model::{
    ObjectPattern, OpticsConfig, PatternForm, Placement, TurbulenceSpec, DEFAULT_ENVELOPE_WIDTH_MM,
    DEFAULT_VALIDITY_THRESHOLD, PAPER_CYCLES_PER_MM, PAPER_FOCAL_LENGTH_MM, PAPER_WAVELENGTH_NM,
};
use crate::units::Length;
use crate::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const PAPER_UNSHIFTED_JSON: &str = include_str!("../../configs/paper_unshifted.json");
pub const PAPER_SHIFTED_JSON: &str = include_str!("../../configs/paper_shifted.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    #[serde(default = "default_focal_length")]
    pub focal_length_mm: f64,
    pub shift_mm: f64,
    pub system_visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceSection {
    pub alpha_per_mm2: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    pub sweep: Vec<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    #[serde(default = "default_envelope")]
    pub envelope_width_mm: f64,
    #[serde(default = "default_cycles")]
    pub cycles_per_mm: f64,
    #[serde(default)]
    pub form: PatternForm,
    #[serde(default = "one")]
    pub intrinsic_visibility: f64,
}

impl Default for ObjectSection {
    fn default() -> Self {
        ObjectSection {
            envelope_width_mm: DEFAULT_ENVELOPE_WIDTH_MM,
            cycles_per_mm: PAPER_CYCLES_PER_MM,
            form: PatternForm::Sinusoid,
            intrinsic_visibility: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default = "default_kernel")]
    pub kernel: KernelChoice,
    /// Screens per Monte Carlo kernel.
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_threshold")]
    pub validity_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub optics: OpticsSection,
    pub turbulence: TurbulenceSection,
    #[serde(default)]
    pub object: ObjectSection,
    pub detector: DetectorModel,
    pub engine: EngineSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_wavelength() -> f64 {
    PAPER_WAVELENGTH_NM
}
fn default_focal_length() -> f64 {
    PAPER_FOCAL_LENGTH_MM
}
fn default_exponent() -> f64 {
    2.0
}
fn default_envelope() -> f64 {
    DEFAULT_ENVELOPE_WIDTH_MM
}
fn default_cycles() -> f64 {
    PAPER_CYCLES_PER_MM
}
fn one() -> f64 {
    1.0
}
fn default_kernel() -> KernelChoice {
    KernelChoice::Analytic
}
fn default_realizations() -> usize {
    10_000
}
fn default_threshold() -> f64 {
    DEFAULT_VALIDITY_THRESHOLD
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Which bundled config to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bundled {
    PaperUnshifted,
    PaperShifted,
}

impl Bundled {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "paper_unshifted" | "paper_unshifted.json" => Some(Bundled::PaperUnshifted),
            "paper_shifted" | "paper_shifted.json" => Some(Bundled::PaperShifted),
            _ => None,
        }
    }

    pub fn load(self) -> ExperimentConfig {
        let (text, name) = match self {
            Bundled::PaperUnshifted => (PAPER_UNSHIFTED_JSON, "paper_unshifted.json"),
            Bundled::PaperShifted => (PAPER_SHIFTED_JSON, "paper_shifted.json"),
        };
        ExperimentConfig::from_json_str(text, Path::new(name)).expect("bundled configs are valid")
    }
}

impl ExperimentConfig {
    /// Reads `path`; a bare bundled name such as `paper_shifted` loads the
    /// config compiled into the binary when no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(b) = path.to_str().and_then(Bundled::from_name) {
                return Ok(b.load());
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
            path: path.into(),
            message: format!("cannot read: {e}"),
        })?;
        Self::from_json_str(&text, path)
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            match e.classify() {
                serde_json::error::Category::Data => Error::ConfigSchema {
                    path: origin.into(),
                    message,
                },
                _ => Error::ConfigParse {
                    path: origin.into(),
                    message,
                },
            }
        })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::ConfigSchema {
                path: origin.into(),
                message: format!(
                    "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                    cfg.schema_version
                ),
            });
        }
        cfg.validate().map_err(|e| Error::ConfigInvalid {
            path: origin.into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Checks every sub-config against its physical invariants.
    pub fn validate(&self) -> Result<()> {
        let optics = self.optics()?;
        for spec in self.sweep_specs()? {
            spec.placement.validate(&optics)?;
        }
        self.pattern()?;
        self.detector.validate()?;
        if self.engine.kernel == KernelChoice::MonteCarlo && self.engine.realizations < 2 {
            return Err(Error::domain(
                "Monte Carlo kernels need at least 2 realizations",
            ));
        }
        if !(self.engine.validity_threshold > 0.0) {
            return Err(Error::domain("validity_threshold must be positive"));
        }
        Ok(())
    }

    pub fn optics(&self) -> Result<OpticsConfig> {
        let o = &self.optics;
        OpticsConfig::new(
            Length::from_nm(o.wavelength_nm),
            o.focal_length_mm,
            o.shift_mm,
            o.system_visibility,
        )
    }

    pub fn sweep_specs(&self) -> Result<Vec<TurbulenceSpec>> {
        let t = &self.turbulence;
        t.sweep
            .iter()
            .map(|&p| TurbulenceSpec::new(t.alpha_per_mm2, t.exponent, p))
            .collect()
    }

    pub fn pattern(&self) -> Result<ObjectPattern> {
        let o = &self.object;
        ObjectPattern::new(
            o.envelope_width_mm,
            fringe_wavenumber(o.cycles_per_mm),
            o.form,
            o.intrinsic_visibility,
        )
    }

    /// Kernel source for sweep point `kernel_seed`.
    pub fn kernel_source(&self, kernel_seed: u64) -> KernelSource {
        match self.engine.kernel {
            KernelChoice::Analytic => KernelSource::Analytic,
            KernelChoice::MonteCarlo => KernelSource::MonteCarlo {
                realizations: self.engine.realizations,
                master_seed: kernel_seed,
            },
        }
    }

    /// Resolved config, defaults included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact resolved JSON, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(compact.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_carry_paper_geometry() {
        let u = Bundled::PaperUnshifted.load();
        assert_eq!(u.optics.shift_mm, 0.0);
        assert_eq!(u.optics.system_visibility, 1.0);
        let s = Bundled::PaperShifted.load();
        assert_eq!(s.optics.shift_mm, 330.0);
        assert_eq!(s.optics.system_visibility, 0.65);
        assert_ne!(u.hash(), s.hash());
    }

    #[test]
    fn errors_are_distinct() {
        let p = Path::new("t.json");
        assert!(matches!(
            ExperimentConfig::from_json_str("{", p),
            Err(Error::ConfigParse { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(PAPER_UNSHIFTED_JSON).unwrap();
        v["optics"]["shift"] = 3.0.into();
        assert!(matches!(
            ExperimentConfig::from_json_str(&v.to_string(), p),
            Err(Error::ConfigSchema { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(PAPER_UNSHIFTED_JSON).unwrap();
        v["schema_version"] = 9.into();
        assert!(matches!(
            ExperimentConfig::from_json_str(&v.to_string(), p),
            Err(Error::ConfigSchema { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(PAPER_UNSHIFTED_JSON).unwrap();
        v["optics"]["shift_mm"] = 1200.0.into();
        assert!(matches!(
            ExperimentConfig::from_json_str(&v.to_string(), p),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = Bundled::PaperShifted.load();
        let back = ExperimentConfig::from_json_str(&cfg.to_json(), Path::new("echo.json")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
}
