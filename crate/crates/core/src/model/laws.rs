use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ObjectPattern, OpticsConfig, Placement, TurbulenceSpec};
use crate::units::Length;
use crate::{Error, Result};

/// Default threshold on [`validity_ratio`] above which the small-blur
/// approximation behind the ghost-image law is flagged.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.1;

/// k = 2π/λ in rad/mm.
pub fn wavenumber(wavelength: Length) -> Result<f64> {
    let lambda = wavelength.mm();
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "wavelength must be positive, got {lambda} mm"
        )));
    }
    Ok(2.0 * PI / lambda)
}

/// Angular wavenumber of a grating with `cycles_per_mm` periods per mm.
pub fn fringe_wavenumber(cycles_per_mm: f64) -> f64 {
    2.0 * PI * cycles_per_mm
}

/// Distance between the turbulent sheet and the image plane it blurs.
///
/// Crystal-side turbulence at `l₁` sits `l₁ − Δ` from the central image
/// plane (signed); object-side turbulence is measured from the object.
pub fn effective_distance(spec: &TurbulenceSpec, optics: &OpticsConfig) -> Result<f64> {
    spec.placement.validate(optics)?;
    Ok(match spec.placement {
        Placement::CrystalSide { l1_mm } => l1_mm - optics.shift_mm(),
        Placement::ObjectSide {
            distance_from_object_mm,
        } => distance_from_object_mm,
    })
}

/// Standard deviation `√α·|d|/k` of the turbulent blur kernel.
pub fn kernel_sigma(alpha: f64, d: f64, k: f64) -> f64 {
    alpha.sqrt() * d.abs() / k
}

/// Second-order coherence `exp[-k²Δx²/(2α d²)]`.
///
/// With `α = 0` or `d = 0` the kernel is ideal point-to-point imaging: 1 at
/// `Δx = 0` and 0 elsewhere. Numerical callers should branch on
/// [`crate::model::CoherenceKernel::Ideal`] rather than sample this.
pub fn analytic_g2(dx: f64, alpha: f64, d: f64, k: f64) -> f64 {
    if alpha == 0.0 || d == 0.0 {
        return if dx == 0.0 { 1.0 } else { 0.0 };
    }
    (-(k * k * dx * dx) / (2.0 * alpha * d * d)).exp()
}

/// Ghost-image visibility `g·exp[-α d²/(2(k/k₀)²)]`.
pub fn visibility(g: f64, alpha: f64, d: f64, k: f64, k0: f64) -> Result<f64> {
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::domain(format!(
            "visibility ceiling g must lie in (0, 1], got {g}"
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let ratio = k / k0;
    Ok(g * (-alpha * d * d / (2.0 * ratio * ratio)).exp())
}

/// Ghost image `exp[-(x/w)²/2]·(1 + 𝒱 cos(k₀x))` of a sinusoidal object.
pub fn ghost_image(x: f64, pattern: &ObjectPattern, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!(
            "visibility must lie in [0, 1], got {v}"
        )));
    }
    Ok(pattern.envelope(x) * (1.0 + v * (pattern.fringe_wavenumber * x).cos()))
}

/// `|d|·√α/(k·w)`: blur width over envelope width. The ghost-image law
/// assumes this is small.
pub fn validity_ratio(d: f64, alpha: f64, k: f64, w: f64) -> f64 {
    d.abs() * alpha.sqrt() / (k * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub ratio: f64,
    pub warning: bool,
}

impl Validity {
    pub fn assess(d: f64, alpha: f64, k: f64, w: f64, threshold: f64) -> Self {
        let ratio = validity_ratio(d, alpha, k, w);
        Validity {
            ratio,
            warning: ratio > threshold,
        }
    }
}

/// Crystal distance `l₁` at which crystal-side turbulence gives equal
/// visibility in the unshifted (`Δ = 0`, `g_unshifted`) and shifted
/// (`shift`, `g_shifted`) configurations. `None` when `shift == 0` or
/// `alpha == 0`.
pub fn crossover_l1(
    g_unshifted: f64,
    g_shifted: f64,
    shift: f64,
    alpha: f64,
    k: f64,
    k0: f64,
) -> Option<f64> {
    if shift == 0.0 || alpha == 0.0 {
        return None;
    }
    let c = 2.0 * (k / k0) * (k / k0);
    Some((c * (g_unshifted / g_shifted).ln() / alpha + shift * shift) / (2.0 * shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatternForm, Placement, PAPER_CYCLES_PER_MM};
    use proptest::prelude::*;

    const K: f64 = 9666.438934122441;
    const K0: f64 = 22.61946710584651;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn wavenumber_examples() {
        let k = wavenumber(Length::from_nm(650.0)).unwrap();
        assert!((k - 9666.44).abs() < 0.005);
        assert_eq!(wavenumber(Length::from_mm(2.0 * PI)).unwrap(), 1.0);
        let k0 = fringe_wavenumber(PAPER_CYCLES_PER_MM);
        assert!(close(k0, 7.2 * PI, 1e-15));
        assert!((k0 - 22.6195).abs() < 1e-4);
    }

    #[test]
    fn wavenumber_rejects_nonpositive() {
        assert!(wavenumber(Length::from_nm(0.0)).is_err());
        assert!(wavenumber(Length::from_nm(-1.0)).is_err());
    }

    #[test]
    fn effective_distance_examples() {
        let un = OpticsConfig::paper_unshifted();
        let sh = OpticsConfig::paper_shifted();
        let crystal =
            TurbulenceSpec::square_law(2.0, Placement::CrystalSide { l1_mm: 482.0 }).unwrap();
        assert_eq!(effective_distance(&crystal, &un).unwrap(), 482.0);
        assert_eq!(effective_distance(&crystal, &sh).unwrap(), 152.0);
        let object = TurbulenceSpec::square_law(
            2.0,
            Placement::ObjectSide {
                distance_from_object_mm: 203.0,
            },
        )
        .unwrap();
        assert_eq!(effective_distance(&object, &un).unwrap(), 203.0);
        assert_eq!(effective_distance(&object, &sh).unwrap(), 203.0);
        let outside =
            TurbulenceSpec::square_law(2.0, Placement::CrystalSide { l1_mm: 1100.0 }).unwrap();
        assert!(effective_distance(&outside, &un).is_err());
    }

    #[test]
    fn g2_examples() {
        assert_eq!(analytic_g2(0.0, 2.0, 482.0, K), 1.0);
        let dx = (2.0f64 * 2.0).sqrt() * 482.0 / K;
        assert!((dx - 0.09973).abs() < 1e-5);
        assert!(close(
            analytic_g2(dx, 2.0, 482.0, K),
            (-1.0f64).exp(),
            1e-12
        ));
        assert!((analytic_g2(0.09973, 2.0, 482.0, K) - 0.3679).abs() < 1e-4);
        assert_eq!(analytic_g2(0.0, 0.0, 482.0, K), 1.0);
        assert_eq!(analytic_g2(0.01, 0.0, 482.0, K), 0.0);
        assert_eq!(analytic_g2(0.01, 2.0, 0.0, K), 0.0);
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility(0.8, 0.0, 482.0, K, K0).unwrap(), 0.8);
        let un = visibility(1.0, 2.0, 482.0, K, K0).unwrap();
        let sh = visibility(0.65, 2.0, 152.0, K, K0).unwrap();
        assert!((un - 0.280).abs() < 5e-4);
        assert!((sh - 0.573).abs() < 5e-4);
        assert!(((sh / un) - 2.04).abs() < 0.005);
        assert!(visibility(0.0, 1.0, 1.0, K, K0).is_err());
        assert!(visibility(1.0, -1.0, 1.0, K, K0).is_err());
    }

    #[test]
    fn ghost_image_examples() {
        let p = ObjectPattern::new(0.4, K0, PatternForm::Sinusoid, 1.0).unwrap();
        assert_eq!(ghost_image(0.0, &p, 0.3).unwrap(), 1.3);
        for i in -100..=100 {
            let x = i as f64 * 0.0137;
            assert!(close(ghost_image(x, &p, 1.0).unwrap(), p.eval(x), 1e-15));
        }
        let x = PI / K0;
        assert!((ghost_image(x, &p, 0.5).unwrap() - 0.4707).abs() < 1e-4);
        assert!(ghost_image(0.0, &p, 1.2).is_err());
        assert!(ghost_image(0.0, &p, -0.1).is_err());
    }

    #[test]
    fn validity_examples() {
        assert_eq!(validity_ratio(0.0, 2.0, K, 0.4), 0.0);
        let far = Validity::assess(482.0, 2.0, K, 0.4, DEFAULT_VALIDITY_THRESHOLD);
        assert!((far.ratio - 0.176).abs() < 5e-4 && far.warning);
        let near = Validity::assess(152.0, 2.0, K, 0.4, DEFAULT_VALIDITY_THRESHOLD);
        assert!((near.ratio - 0.0556).abs() < 5e-5 && !near.warning);
    }

    /// Bisection on the two visibility curves, independent of the closed form.
    #[test]
    fn crossover_matches_bisection() {
        let f = |l1: f64| {
            visibility(1.0, 2.0, l1, K, K0).unwrap()
                - visibility(0.65, 2.0, l1 - 330.0, K, K0).unwrap()
        };
        let (mut lo, mut hi) = (0.0, 1000.0);
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let closed = crossover_l1(1.0, 0.65, 330.0, 2.0, K, K0).unwrap();
        assert!((closed - lo).abs() < 1e-9);
        assert!((closed - 284.2).abs() < 0.05);
        assert!(crossover_l1(1.0, 0.65, 0.0, 2.0, K, K0).is_none());
    }

    proptest! {
        #[test]
        fn g2_is_even_and_bounded(dx in -1.0f64..1.0, alpha in 0.01f64..5.0, d in 1.0f64..1000.0) {
            let a = analytic_g2(dx, alpha, d, K);
            prop_assert_eq!(a, analytic_g2(-dx, alpha, d, K));
            prop_assert!((0.0..=1.0).contains(&a));
            if dx != 0.0 && a > 0.0 { prop_assert!(a < 1.0); }
        }

        #[test]
        fn visibility_decreases(alpha in 0.01f64..5.0, d in 1.0f64..900.0, step in 0.5f64..50.0) {
            let v = |a: f64, d: f64| visibility(0.9, a, d, K, K0).unwrap();
            prop_assert!(v(alpha, d + step) < v(alpha, d));
            prop_assert!(v(alpha, -d - step) < v(alpha, -d));
            prop_assert!(v(alpha * 1.5, d) < v(alpha, d));
            prop_assert_eq!(v(0.0, d), 0.9);
            prop_assert_eq!(v(alpha, 0.0), 0.9);
        }

        #[test]
        fn visibility_depends_on_ratio_only(scale in 0.1f64..10.0, alpha in 0.1f64..3.0, d in 10.0f64..500.0) {
            let a = visibility(1.0, alpha, d, K, K0).unwrap();
            let b = visibility(1.0, alpha, d, K * scale, K0 * scale).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
