use serde::{Deserialize, Serialize};

use crate::model::laws::effective_distance;
use crate::model::{OpticsConfig, Side, TurbulenceSpec, DEFAULT_ENVELOPE_WIDTH_MM};
use crate::{Error, Result};

/// Target relative inflation of the kernel width caused by the finite
/// source envelope when [`KlyshkoPath::source_width_for`] picks `w_s`.
pub const DEFAULT_REGULARIZATION_BIAS: f64 = 0.0025;

/// The folded two-photon path from the resolving detector, back through the
/// crystal plane, through the turbulent sheet, to the bucket detector.
///
/// Segments, in order:
/// * image arm, crystal to resolving detector: Fresnel distance `Δ`,
///   kernel `exp[-ik(x_s − x₁)²/2Δ]`;
/// * crystal to screen: `l = d + Δ`, kernel `exp[ik(x_t − x_s)²/2l]`;
/// * screen to bucket detector: `d`, kernel `exp[-ik(x₂ − x_t)²/2d]`.
///
/// The delta-correlated biphoton is regularized by a Gaussian source
/// envelope `exp[-x_s²/2w_s²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlyshkoPath {
    pub wavenumber: f64,
    pub image_distance_mm: f64,
    pub screen_distance_mm: f64,
    pub detection_distance_mm: f64,
    pub side: Side,
    pub source_width_mm: f64,
    /// Visibility ceiling `g` of the apparatus.
    pub system_visibility: f64,
}

impl KlyshkoPath {
    /// Path for `turbulence` in `optics` with the default source width of
    /// ten envelope widths.
    pub fn new(optics: &OpticsConfig, turbulence: &TurbulenceSpec) -> Result<Self> {
        let d = effective_distance(turbulence, optics)?;
        Ok(KlyshkoPath {
            wavenumber: optics.wavenumber(),
            image_distance_mm: optics.shift_mm(),
            screen_distance_mm: d + optics.shift_mm(),
            detection_distance_mm: d,
            side: turbulence.placement.side(),
            source_width_mm: 10.0 * DEFAULT_ENVELOPE_WIDTH_MM,
            system_visibility: optics.system_visibility(),
        })
    }

    pub fn with_source_width(mut self, width_mm: f64) -> Result<Self> {
        if !(width_mm > 0.0) || !width_mm.is_finite() {
            return Err(Error::domain(format!(
                "source width must be positive, got {width_mm}"
            )));
        }
        self.source_width_mm = width_mm;
        Ok(self)
    }

    pub fn effective_distance_mm(&self) -> f64 {
        self.detection_distance_mm
    }

    /// Where a tilt of slope `a` moves the image of `x₁`: `x₁ − a·d/k`.
    pub fn tilt_image(&self, x1: f64, slope: f64) -> f64 {
        x1 - self.tilt_displacement(slope)
    }

    pub fn tilt_displacement(&self, slope: f64) -> f64 {
        slope * self.detection_distance_mm / self.wavenumber
    }

    /// Amplitude width `|Δ|/(k w_s)` of the flat-screen point spread.
    pub fn point_spread_width_mm(&self) -> f64 {
        self.image_distance_mm.abs() / (self.wavenumber * self.source_width_mm)
    }

    /// Gaussian width `w_s|d|/|Δ|` of the beam crossing the screen.
    pub fn beam_width_mm(&self) -> f64 {
        self.source_width_mm * self.detection_distance_mm.abs() / self.image_distance_mm.abs()
    }

    /// Centre `x₁·l/Δ` of that beam.
    pub fn beam_center_mm(&self, x1: f64) -> f64 {
        x1 * self.screen_distance_mm / self.image_distance_mm
    }

    /// Approximate relative widening of the averaged kernel over `√α·d/k`
    /// caused by the finite source: `1/(4αW²)` with `W` the beam width.
    pub fn regularization_bias(&self, alpha: f64) -> f64 {
        let w = self.beam_width_mm();
        1.0 / (4.0 * alpha * w * w)
    }

    /// Smallest source width (at least the current one) that keeps
    /// [`Self::regularization_bias`] at or below `bias`.
    pub fn source_width_for(&self, alpha: f64, bias: f64) -> f64 {
        let beam = (1.0 / (4.0 * alpha * bias)).sqrt();
        let needed = beam * self.image_distance_mm.abs() / self.detection_distance_mm.abs();
        needed.max(self.source_width_mm)
    }

    /// Refuses geometries where a segment has zero length, since the
    /// Fresnel kernels are then delta functions and the direct quadrature
    /// is undefined.
    pub fn check_quadrature(&self) -> Result<()> {
        for (name, v) in [
            ("image-arm distance Δ", self.image_distance_mm),
            ("crystal-to-screen distance", self.screen_distance_mm),
            ("screen-to-detector distance", self.detection_distance_mm),
        ] {
            if v == 0.0 {
                return Err(Error::Degenerate(format!(
                    "{name} is zero; use the tilt fast path"
                )));
            }
        }
        Ok(())
    }
}
