//! Domain types of the unfolded ghost-imaging geometry and the closed-form
//! coherence, image and visibility laws.

pub mod laws;

pub use laws::*;

use serde::{Deserialize, Serialize};

use crate::units::Length;
use crate::{Error, Result};

/// Centre wavelength of the down-converted light.
pub const PAPER_WAVELENGTH_NM: f64 = 650.0;
/// Lens focal length used in both arms.
pub const PAPER_FOCAL_LENGTH_MM: f64 = 500.0;
/// Crystal offset from the central image plane in the shifted configuration.
pub const PAPER_SHIFT_MM: f64 = 330.0;
/// Object grating frequency.
pub const PAPER_CYCLES_PER_MM: f64 = 3.6;
/// Best visibility measured without turbulence, unshifted and shifted.
pub const PAPER_G_UNSHIFTED: f64 = 1.00;
pub const PAPER_G_SHIFTED: f64 = 0.65;
/// Turbulence strength used for the plotted model curves.
pub const PAPER_CURVE_ALPHA: f64 = 2.0;
/// Default Gaussian envelope width at the object: the pump's 1/e² radius of
/// 0.8 mm read as `2w` of an `exp(-x²/2w²)` intensity profile.
pub const DEFAULT_ENVELOPE_WIDTH_MM: f64 = 0.4;

/// Geometry of the unfolded two-arm apparatus.
///
/// The image arm has the lens `2f − Δ` from the crystal, the object arm
/// `2f + Δ`; both detectors sit `2f` behind their lenses. The arm lengths are
/// derived from `f` and `Δ`, so their sum is `4f` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    wavelength: Length,
    focal_length_mm: f64,
    shift_mm: f64,
    system_visibility: f64,
}

impl OpticsConfig {
    pub fn new(
        wavelength: Length,
        focal_length_mm: f64,
        shift_mm: f64,
        system_visibility: f64,
    ) -> Result<Self> {
        wavenumber(wavelength)?;
        if !(focal_length_mm > 0.0) || !focal_length_mm.is_finite() {
            return Err(Error::domain(format!(
                "focal length must be positive, got {focal_length_mm} mm"
            )));
        }
        if !shift_mm.is_finite() || shift_mm.abs() >= 2.0 * focal_length_mm {
            return Err(Error::domain(format!(
                "|shift| must stay below 2f = {} mm, got {shift_mm} mm",
                2.0 * focal_length_mm
            )));
        }
        if !(system_visibility > 0.0 && system_visibility <= 1.0) {
            return Err(Error::domain(format!(
                "system visibility must lie in (0, 1], got {system_visibility}"
            )));
        }
        Ok(OpticsConfig {
            wavelength,
            focal_length_mm,
            shift_mm,
            system_visibility,
        })
    }

    /// Crystal on the central image plane, `g = 1.00`.
    pub fn paper_unshifted() -> Self {
        Self::new(
            Length::from_nm(PAPER_WAVELENGTH_NM),
            PAPER_FOCAL_LENGTH_MM,
            0.0,
            PAPER_G_UNSHIFTED,
        )
        .expect("paper geometry is valid")
    }

    /// Crystal shifted by 330 mm, `g = 0.65`.
    pub fn paper_shifted() -> Self {
        Self::new(
            Length::from_nm(PAPER_WAVELENGTH_NM),
            PAPER_FOCAL_LENGTH_MM,
            PAPER_SHIFT_MM,
            PAPER_G_SHIFTED,
        )
        .expect("paper geometry is valid")
    }

    pub fn wavelength(&self) -> Length {
        self.wavelength
    }

    /// k = 2π/λ in rad/mm.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength.mm()
    }

    pub fn focal_length_mm(&self) -> f64 {
        self.focal_length_mm
    }

    pub fn shift_mm(&self) -> f64 {
        self.shift_mm
    }

    pub fn system_visibility(&self) -> f64 {
        self.system_visibility
    }

    pub fn image_arm_mm(&self) -> f64 {
        2.0 * self.focal_length_mm - self.shift_mm
    }

    pub fn object_arm_mm(&self) -> f64 {
        2.0 * self.focal_length_mm + self.shift_mm
    }

    pub fn lens_to_detector_mm(&self) -> f64 {
        2.0 * self.focal_length_mm
    }
}

/// Where the thin turbulent sheet sits in the object arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    /// Between crystal and lens, `l1_mm` from the crystal.
    CrystalSide { l1_mm: f64 },
    /// Between lens and object, `distance_from_object_mm` from the object.
    ObjectSide { distance_from_object_mm: f64 },
}

impl Placement {
    pub fn side(&self) -> Side {
        match self {
            Placement::CrystalSide { .. } => Side::CrystalSide,
            Placement::ObjectSide { .. } => Side::ObjectSide,
        }
    }

    pub fn validate(&self, optics: &OpticsConfig) -> Result<()> {
        match *self {
            Placement::CrystalSide { l1_mm } => {
                let max = optics.object_arm_mm();
                if !(0.0..=max).contains(&l1_mm) {
                    return Err(Error::domain(format!(
                        "crystal-side turbulence must satisfy 0 <= l1 <= {max} mm, got {l1_mm} mm"
                    )));
                }
            }
            Placement::ObjectSide {
                distance_from_object_mm,
            } => {
                let max = optics.lens_to_detector_mm();
                if !(0.0..=max).contains(&distance_from_object_mm) {
                    return Err(Error::domain(format!(
                        "object-side turbulence must satisfy 0 <= distance <= {max} mm, got {distance_from_object_mm} mm"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    CrystalSide,
    ObjectSide,
}

/// Strength, structure-function exponent and placement of the turbulent
/// sheet. The square-law model has `exponent = 2` and
/// `⟨T*(x̃)T(x)⟩ = exp[-α(x − x̃)²/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceSpec {
    pub alpha_per_mm2: f64,
    pub exponent: f64,
    pub placement: Placement,
}

impl TurbulenceSpec {
    pub fn new(alpha_per_mm2: f64, exponent: f64, placement: Placement) -> Result<Self> {
        if !(alpha_per_mm2 >= 0.0) || !alpha_per_mm2.is_finite() {
            return Err(Error::domain(format!(
                "alpha must be >= 0, got {alpha_per_mm2}"
            )));
        }
        if !(exponent > 0.0 && exponent <= 2.0) {
            return Err(Error::domain(format!(
                "structure-function exponent must lie in (0, 2], got {exponent}"
            )));
        }
        Ok(TurbulenceSpec {
            alpha_per_mm2,
            exponent,
            placement,
        })
    }

    pub fn square_law(alpha_per_mm2: f64, placement: Placement) -> Result<Self> {
        Self::new(alpha_per_mm2, 2.0, placement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatternForm {
    #[default]
    Sinusoid,
    /// Alternating clear and opaque bars with the same period.
    SquareWave,
}

/// Transmission object illuminated by a Gaussian beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPattern {
    pub envelope_width_mm: f64,
    pub fringe_wavenumber: f64,
    pub form: PatternForm,
    pub intrinsic_visibility: f64,
}

impl ObjectPattern {
    pub fn new(
        envelope_width_mm: f64,
        fringe_wavenumber: f64,
        form: PatternForm,
        intrinsic_visibility: f64,
    ) -> Result<Self> {
        if !(envelope_width_mm > 0.0) {
            return Err(Error::domain(format!(
                "envelope width must be positive, got {envelope_width_mm}"
            )));
        }
        if !(fringe_wavenumber > 0.0) {
            return Err(Error::domain(format!(
                "fringe wavenumber must be positive, got {fringe_wavenumber}"
            )));
        }
        if !(0.0..=1.0).contains(&intrinsic_visibility) {
            return Err(Error::domain(format!(
                "intrinsic visibility must lie in [0, 1], got {intrinsic_visibility}"
            )));
        }
        Ok(ObjectPattern {
            envelope_width_mm,
            fringe_wavenumber,
            form,
            intrinsic_visibility,
        })
    }

    /// The 3.6 cycles/mm sinusoid under the default 0.4 mm envelope.
    pub fn paper_sinusoid() -> Self {
        Self::new(
            DEFAULT_ENVELOPE_WIDTH_MM,
            fringe_wavenumber(PAPER_CYCLES_PER_MM),
            PatternForm::Sinusoid,
            1.0,
        )
        .expect("paper pattern is valid")
    }

    pub fn with_form(mut self, form: PatternForm) -> Self {
        self.form = form;
        self
    }

    pub fn envelope(&self, x: f64) -> f64 {
        let u = x / self.envelope_width_mm;
        (-0.5 * u * u).exp()
    }

    /// Transmission seen through the illuminating envelope, with the
    /// modulation depth scaled by `ceiling` (the system visibility `g`).
    pub fn eval_scaled(&self, x: f64, ceiling: f64) -> f64 {
        let v = self.intrinsic_visibility * ceiling;
        let phase = self.fringe_wavenumber * x;
        let modulation = match self.form {
            PatternForm::Sinusoid => phase.cos(),
            PatternForm::SquareWave => {
                let c = phase.cos();
                if c > 0.0 {
                    1.0
                } else if c < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        self.envelope(x) * (1.0 + v * modulation)
    }

    /// `O(x) = exp[-x²/2w²](1 + v·cos(k₀x))` for the sinusoid.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_scaled(x, 1.0)
    }

    pub fn fringe_period_mm(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.fringe_wavenumber
    }
}

/// Histogram estimate of G² as a function of `x₂ − x₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledKernel {
    /// Bin centres, symmetric about zero with a bin centred on zero.
    pub offsets_mm: Vec<f64>,
    pub bin_width_mm: f64,
    /// Peak-normalised values.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Number of realisations averaged.
    pub realizations: usize,
}

impl SampledKernel {
    pub fn value(&self, dx: f64) -> f64 {
        let half = (self.offsets_mm.len() / 2) as f64;
        let pos = dx / self.bin_width_mm + half;
        if pos < 0.0 || pos > (self.offsets_mm.len() - 1) as f64 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return self.values[i];
        }
        let t = pos - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Bin index holding `dx == 0`.
    pub fn center_index(&self) -> usize {
        self.offsets_mm.len() / 2
    }
}

/// Representation of G²(x₁, x₂), which depends only on `x₁ − x₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceKernel {
    /// No turbulence or turbulence on an image plane: point-to-point imaging.
    Ideal,
    /// Gaussian blur of standard deviation `sigma_mm = √α·d/k`.
    Analytic {
        sigma_mm: f64,
    },
    Sampled(SampledKernel),
}

impl CoherenceKernel {
    /// Kernel for strength `alpha`, effective distance `d`, wavenumber `k`.
    /// Collapses to [`CoherenceKernel::Ideal`] when `α = 0` or `d = 0`.
    pub fn analytic(alpha: f64, d: f64, k: f64) -> Self {
        let sigma = kernel_sigma(alpha, d, k);
        if sigma == 0.0 {
            CoherenceKernel::Ideal
        } else {
            CoherenceKernel::Analytic { sigma_mm: sigma }
        }
    }

    /// Peak-normalised value at separation `dx`. The ideal kernel returns
    /// 1 at `dx == 0` and 0 elsewhere.
    pub fn value(&self, dx: f64) -> f64 {
        match self {
            CoherenceKernel::Ideal => {
                if dx == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CoherenceKernel::Analytic { sigma_mm } => {
                let u = dx / sigma_mm;
                (-0.5 * u * u).exp()
            }
            CoherenceKernel::Sampled(s) => s.value(dx),
        }
    }
}

/// Which apparatus a visibility was measured or simulated on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigLabel {
    pub configuration: String,
    pub side: Side,
}

/// One point of a visibility-versus-distance campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityPoint {
    pub effective_distance_mm: f64,
    pub visibility: f64,
    pub sigma: f64,
    pub label: ConfigLabel,
}

impl VisibilityPoint {
    pub fn new(
        effective_distance_mm: f64,
        visibility: f64,
        sigma: f64,
        label: ConfigLabel,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::domain(format!(
                "visibility must lie in [0, 1], got {visibility}"
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::domain(format!(
                "visibility error must be >= 0, got {sigma}"
            )));
        }
        Ok(VisibilityPoint {
            effective_distance_mm,
            visibility,
            sigma,
            label,
        })
    }
}
