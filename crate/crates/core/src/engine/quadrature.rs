//! Direct evaluation of the two-photon amplitude
//!
//! ```text
//! A(x₁, x₂) = ∫∫ P(x₂ − t) T(t) K(t − s) H(s − x₁) g(s) ds dt
//! ```
//!
//! with the image-arm kernel `H`, the crystal-to-screen kernel `K`, the
//! screen-to-detector kernel `P` and the source envelope `g` of
//! [`KlyshkoPath`].
//!
//! The source integral `Q(t) = ∫ K(t − s) H(s − x₁) g(s) ds` does not depend
//! on the screen, so it is computed once per `x₁` as an FFT linear
//! convolution on a fine grid. The remaining screen integral has the chirp of
//! `P` removed analytically: with `R̃(t) = e^{-ikt²/2d} e^{ikx₁t/d} Q(t)`,
//!
//! ```text
//! A(x₁, x₂) = e^{-ikx₂²/2d} ∫ e^{ik(x₂ − x₁)t/d} R̃(t) T(t) dt,
//! ```
//!
//! and `R̃` is smooth on the scale of the beam at the screen, so it is
//! decimated to a coarse grid. Averaging `|A|²` over screens with mutual
//! coherence `M(u) = exp[-α|u|^p/2]` gives
//!
//! ```text
//! G²(x₁, x₂) = H² Σ_q M(qH) e^{ik(x₂ − x₁)qH/d} C(q),   C(q) = Σ_i R̃ᵢ₊q R̃ᵢ*.
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::path::KlyshkoPath;
use crate::exec::Execution;
use crate::turbulence::PhaseScreen;
use crate::{Error, Result};

/// Grid controls for the direct quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// Fine step on the crystal and screen planes. `None` uses the
    /// resolution bound itself.
    pub fine_step_mm: Option<f64>,
    /// Half-width of the source and screen windows, in units of the source
    /// and beam widths.
    pub window_widths: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            fine_step_mm: None,
            window_widths: 5.0,
        }
    }
}

/// Screen-independent part of the amplitude for one resolving-detector
/// position `x₁`.
#[derive(Debug, Clone)]
pub struct Pupil {
    pub x1_mm: f64,
    /// Coarse screen-plane nodes.
    pub t_mm: Vec<f64>,
    /// `R̃` at those nodes.
    pub reduced: Vec<Complex64>,
    pub coarse_step_mm: f64,
    pub fine_step_mm: f64,
    wavenumber: f64,
    detection_distance_mm: f64,
}

/// Finest step any kernel needs: a quarter of the local Fresnel fringe
/// `2π d_j/(k·x_j)` of each sampled chirp, at its largest argument `x_j`.
pub fn required_fine_step(k: f64, chirps: &[(f64, f64)]) -> f64 {
    let fastest = chirps
        .iter()
        .map(|&(x_max, dist)| k * x_max / dist.abs())
        .fold(0.0, f64::max);
    PI / (4.0 * fastest)
}

impl KlyshkoPath {
    /// Prepares the quadrature for resolving position `x1`, for evaluation
    /// at `|x₂ − x₁| ≤ offset_extent_mm` through screens whose phase
    /// gradient stays below `screen_gradient` rad/mm.
    pub fn pupil(
        &self,
        x1: f64,
        offset_extent_mm: f64,
        screen_gradient: f64,
        settings: &QuadratureSettings,
    ) -> Result<Pupil> {
        self.check_quadrature()?;
        let k = self.wavenumber;
        let (delta, l, d) = (
            self.image_distance_mm,
            self.screen_distance_mm,
            self.detection_distance_mm,
        );
        let ws = self.source_width_mm;
        let n_w = settings.window_widths;
        let s_half = n_w * ws;
        let beam = self.beam_width_mm();
        let t_center = self.beam_center_mm(x1);
        let t_half = n_w * beam;
        let t_extent = t_center.abs() + t_half;
        let lag_extent = s_half + t_extent;

        let required = required_fine_step(k, &[(s_half + x1.abs(), delta), (lag_extent, l)]);
        let h = match settings.fine_step_mm {
            Some(step) if step > required => {
                return Err(Error::UnresolvedChirp {
                    step_mm: step,
                    required_mm: required,
                });
            }
            Some(step) if step > 0.0 => step,
            Some(step) => {
                return Err(Error::domain(format!(
                    "fine step must be positive, got {step}"
                )))
            }
            None => required,
        };

        // Both planes share the lattice `j·h`, so `t − s` falls on it too.
        let ns_half = (s_half / h).ceil() as i64;
        let ns = (2 * ns_half + 1) as usize;
        let t_lo = ((t_center - t_half) / h).floor() as i64;
        let t_hi = ((t_center + t_half) / h).ceil() as i64;
        let nt = (t_hi - t_lo + 1) as usize;

        let fft_size = (2 * ns + nt - 2).next_power_of_two();
        let mut source = Vec::with_capacity(fft_size);
        source.extend((0..ns).map(|j| {
            let s = (j as i64 - ns_half) as f64 * h;
            let env = (-0.5 * (s / ws).powi(2)).exp();
            Complex64::from_polar(env, -k * (s - x1).powi(2) / (2.0 * delta))
        }));
        let lag0 = t_lo + ns_half - (ns as i64 - 1);
        let mut kernel = Vec::with_capacity(fft_size);
        kernel.extend((0..ns + nt - 1).map(|q| {
            let u = (lag0 + q as i64) as f64 * h;
            Complex64::from_polar(1.0, k * u * u / (2.0 * l))
        }));
        let conv = linear_convolution(kernel, source);

        let fine: Vec<(f64, Complex64)> = (0..nt)
            .map(|i| {
                let t = (t_lo + i as i64) as f64 * h;
                let q = conv[i + ns - 1] * h;
                let phase = -k * t * t / (2.0 * d) + k * x1 * t / d;
                (t, q * Complex64::from_polar(1.0, phase))
            })
            .collect();

        let residual = residual_gradient(&fine, h);
        let coarse_bound = (PI
            / (4.0 * (k * offset_extent_mm / d.abs() + screen_gradient + residual)))
            .min(beam / 4.0);
        let stride = ((coarse_bound / h).floor() as usize).max(1);
        let (t_mm, reduced): (Vec<f64>, Vec<Complex64>) =
            fine.iter().step_by(stride).copied().unzip();

        Ok(Pupil {
            x1_mm: x1,
            t_mm,
            reduced,
            coarse_step_mm: stride as f64 * h,
            fine_step_mm: h,
            wavenumber: k,
            detection_distance_mm: d,
        })
    }
}

/// Largest phase gradient of `R̃` where its magnitude is appreciable.
fn residual_gradient(fine: &[(f64, Complex64)], h: f64) -> f64 {
    let peak = fine.iter().map(|(_, r)| r.norm()).fold(0.0, f64::max);
    let floor = 1e-3 * peak;
    fine.windows(2)
        .filter(|w| w[0].1.norm() > floor && w[1].1.norm() > floor)
        .map(|w| (w[1].1 * w[0].1.conj()).arg().abs() / h)
        .fold(0.0, f64::max)
}

/// Full linear convolution `(a ∗ b)[n] = Σ_j a[n − j] b[j]`, reusing the
/// input buffers.
fn linear_convolution(mut fa: Vec<Complex64>, mut fb: Vec<Complex64>) -> Vec<Complex64> {
    let len = fa.len() + fb.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fa.resize(size, Complex64::new(0.0, 0.0));
    fb.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    drop(fb);
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.truncate(len);
    for x in fa.iter_mut() {
        *x *= scale;
    }
    fa
}

impl Pupil {
    fn support(&self) -> (f64, f64) {
        (self.t_mm[0], self.t_mm[self.t_mm.len() - 1])
    }

    fn check_screen(&self, screen: &PhaseScreen) -> Result<()> {
        if let PhaseScreen::Gridded { x_mm, .. } = screen {
            let (lo, hi) = self.support();
            if x_mm[0] > lo || x_mm[x_mm.len() - 1] < hi {
                return Err(Error::domain(format!(
                    "screen covers [{}, {}] mm but the beam needs [{lo}, {hi}] mm",
                    x_mm[0],
                    x_mm[x_mm.len() - 1]
                )));
            }
        }
        Ok(())
    }

    /// Amplitude at bucket position `x2` through `screen`.
    pub fn amplitude(&self, x2: f64, screen: &PhaseScreen) -> Result<Complex64> {
        self.check_screen(screen)?;
        Ok(self.amplitude_unchecked(x2, screen))
    }

    fn amplitude_unchecked(&self, x2: f64, screen: &PhaseScreen) -> Complex64 {
        let (k, d) = (self.wavenumber, self.detection_distance_mm);
        let tilt = k * (x2 - self.x1_mm) / d;
        let sum: Complex64 = self
            .t_mm
            .iter()
            .zip(&self.reduced)
            .map(|(&t, &r)| r * Complex64::from_polar(1.0, tilt * t + screen.phase(t)))
            .sum();
        sum * self.coarse_step_mm * Complex64::from_polar(1.0, -k * x2 * x2 / (2.0 * d))
    }

    /// `|A(x₁, x₂)|²` at each of `x2`.
    pub fn intensity(&self, x2: &[f64], screen: &PhaseScreen) -> Result<Vec<f64>> {
        self.check_screen(screen)?;
        Ok(x2
            .iter()
            .map(|&x| self.amplitude_unchecked(x, screen).norm_sqr())
            .collect())
    }

    /// Screen-averaged `⟨|A|²⟩` at each of `x2` for structure function
    /// `α|u|^p`.
    pub fn averaged_g2(&self, x2: &[f64], alpha: f64, p: f64, exec: Execution) -> Vec<f64> {
        let n = self.reduced.len();
        let hh = self.coarse_step_mm;
        let mut corr = vec![Complex64::new(0.0, 0.0); n];
        for (q, c) in corr.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n - q {
                acc += self.reduced[i + q] * self.reduced[i].conj();
            }
            let u = q as f64 * hh;
            *c = acc * (-0.5 * alpha * u.abs().powf(p)).exp();
        }
        let (k, d) = (self.wavenumber, self.detection_distance_mm);
        exec.map(x2.len(), |j| {
            let theta = k * (x2[j] - self.x1_mm) * hh / d;
            let mut total = corr[0].re;
            for (q, c) in corr.iter().enumerate().skip(1) {
                total += 2.0 * (c * Complex64::from_polar(1.0, theta * q as f64)).re;
            }
            total * hh * hh
        })
    }
}

/// Two-point amplitude through one screen realisation.
///
/// Tilt screens take the analytic fast path: the flat-screen point spread,
/// a real Gaussian of amplitude width [`KlyshkoPath::point_spread_width_mm`],
/// displaced to [`KlyshkoPath::tilt_image`], normalised to unit peak.
/// Gridded screens use the direct quadrature.
pub fn klyshko_amplitude(
    x1: f64,
    x2: f64,
    screen: &PhaseScreen,
    path: &KlyshkoPath,
    settings: &QuadratureSettings,
) -> Result<Complex64> {
    match screen {
        PhaseScreen::Tilt { slope } => {
            let rho = path.point_spread_width_mm();
            let offset = x2 - path.tilt_image(x1, *slope);
            if rho == 0.0 {
                return Ok(Complex64::new(if offset == 0.0 { 1.0 } else { 0.0 }, 0.0));
            }
            Ok(Complex64::new((-0.5 * (offset / rho).powi(2)).exp(), 0.0))
        }
        PhaseScreen::Gridded { .. } => {
            let extent = (x2 - x1).abs() * 1.5 + 4.0 * path.point_spread_width_mm();
            let pupil = path.pupil(x1, extent, screen.max_gradient(), settings)?;
            pupil.amplitude(x2, screen)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OpticsConfig, Placement, TurbulenceSpec};

    fn shifted_path(l1: f64, ws: f64) -> KlyshkoPath {
        let optics = OpticsConfig::paper_shifted();
        let t = TurbulenceSpec::square_law(2.0, Placement::CrystalSide { l1_mm: l1 }).unwrap();
        KlyshkoPath::new(&optics, &t)
            .unwrap()
            .with_source_width(ws)
            .unwrap()
    }

    fn argmax(x: &[f64], y: &[f64]) -> f64 {
        // Parabolic refinement around the largest sample.
        let i = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
        x[i] + 0.5 * (a - c) / (a - 2.0 * b + c) * (x[1] - x[0])
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a: Vec<Complex64> = (0..7).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let b: Vec<Complex64> = (0..4).map(|i| Complex64::new(1.0, -(i as f64))).collect();
        let c = linear_convolution(a.clone(), b.clone());
        for n in 0..c.len() {
            let mut direct = Complex64::new(0.0, 0.0);
            for j in 0..b.len() {
                if n >= j && n - j < a.len() {
                    direct += a[n - j] * b[j];
                }
            }
            assert!((c[n] - direct).norm() < 1e-9);
        }
    }

    #[test]
    fn refuses_coarse_grid_and_degenerate_paths() {
        let path = shifted_path(812.0, 2.0);
        let settings = QuadratureSettings {
            fine_step_mm: Some(1e-2),
            ..Default::default()
        };
        assert!(matches!(
            path.pupil(0.0, 0.1, 0.0, &settings),
            Err(Error::UnresolvedChirp { .. })
        ));
        let unshifted = KlyshkoPath::new(
            &OpticsConfig::paper_unshifted(),
            &TurbulenceSpec::square_law(2.0, Placement::CrystalSide { l1_mm: 482.0 }).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            unshifted.pupil(0.0, 0.1, 0.0, &Default::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn flat_and_tilted_point_spread() {
        let path = shifted_path(812.0, 2.0);
        let pupil = path.pupil(0.0, 0.08, 1.0, &Default::default()).unwrap();
        let x2: Vec<f64> = (-800..=800).map(|i| i as f64 * 1e-4).collect();
        let flat = pupil
            .intensity(&x2, &PhaseScreen::Tilt { slope: 0.0 })
            .unwrap();
        assert!(argmax(&x2, &flat).abs() < 1e-6);

        // Flat-screen width against the closed form.
        let rho = path.point_spread_width_mm();
        let peak = flat.iter().cloned().fold(0.0, f64::max);
        let at_rho = flat[800 + (rho / 1e-4).round() as usize] / peak;
        let expect = (-((rho / 1e-4).round() * 1e-4 / rho).powi(2)).exp();
        assert!((at_rho - expect).abs() < 1e-3, "{at_rho} vs {expect}");

        for a in [0.5, 1.0] {
            let tilted = pupil
                .intensity(&x2, &PhaseScreen::Tilt { slope: a })
                .unwrap();
            let shift = argmax(&x2, &tilted);
            let fast = path.tilt_image(0.0, a);
            assert!(
                (shift - fast).abs() < 1e-3 * fast.abs(),
                "{shift} vs {fast}"
            );
        }
    }

    #[test]
    fn fast_path_peaks_at_tilt_image() {
        let path = shifted_path(812.0, 4.0);
        let s = QuadratureSettings::default();
        let screen = PhaseScreen::Tilt { slope: 0.5 };
        let at = path.tilt_image(0.1, 0.5);
        let peak = klyshko_amplitude(0.1, at, &screen, &path, &s).unwrap();
        assert_eq!(peak.re, 1.0);
        assert!(
            klyshko_amplitude(0.1, at + 0.01, &screen, &path, &s)
                .unwrap()
                .re
                < 1.0
        );
    }
}
