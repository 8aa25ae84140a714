use serde::{Deserialize, Serialize};

use crate::model::{CoherenceKernel, ObjectPattern};
use crate::{Error, Result};

/// Fraction of object transmission outside the grid above which a profile
/// is flagged as truncated.
pub const TRUNCATION_TOLERANCE: f64 = 1e-3;

/// `I(x₁) = ∫ O(x₁ − u) G²(u) du / ∫ G²(u) du` with the kernel replaced by
/// a weighted node set, scaled so the fringe-free image peaks at 1.
#[derive(Debug, Clone)]
pub struct GhostImage {
    pattern: ObjectPattern,
    ceiling: f64,
    nodes: Vec<(f64, f64)>,
    norm: f64,
}

impl GhostImage {
    /// `ceiling` scales the object's modulation depth (the system
    /// visibility `g`).
    pub fn new(kernel: &CoherenceKernel, pattern: &ObjectPattern, ceiling: f64) -> Result<Self> {
        if !(ceiling > 0.0 && ceiling <= 1.0) {
            return Err(Error::domain(format!(
                "visibility ceiling must lie in (0, 1], got {ceiling}"
            )));
        }
        let nodes: Vec<(f64, f64)> = match kernel {
            CoherenceKernel::Ideal => vec![(0.0, 1.0)],
            CoherenceKernel::Analytic { sigma_mm } => {
                let step = (sigma_mm / 16.0).min(pattern.fringe_period_mm() / 64.0);
                let half = (8.0 * sigma_mm / step).ceil() as i64;
                (-half..=half)
                    .map(|i| {
                        let u = i as f64 * step;
                        (u, (-0.5 * (u / sigma_mm).powi(2)).exp())
                    })
                    .collect()
            }
            CoherenceKernel::Sampled(s) => s
                .offsets_mm
                .iter()
                .copied()
                .zip(s.values.iter().copied())
                .collect(),
        };
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        if !(total > 0.0) {
            return Err(Error::domain("kernel has no positive weight"));
        }
        let nodes: Vec<(f64, f64)> = nodes.into_iter().map(|(u, g)| (u, g / total)).collect();
        let norm = nodes.iter().map(|&(u, g)| g * pattern.envelope(-u)).sum();
        Ok(GhostImage {
            pattern: *pattern,
            ceiling,
            nodes,
            norm,
        })
    }

    pub fn value(&self, x1: f64) -> f64 {
        let sum: f64 = self
            .nodes
            .iter()
            .map(|&(u, g)| g * self.pattern.eval_scaled(x1 - u, self.ceiling))
            .sum();
        sum / self.norm
    }
}

/// Resolving-detector positions at which an image is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub x_mm: Vec<f64>,
}

impl ImageGrid {
    /// `2n + 1` points spaced `step` about zero, `n = ⌈half_range/step⌉`.
    pub fn symmetric(half_range_mm: f64, step_mm: f64) -> Result<Self> {
        if !(step_mm > 0.0 && half_range_mm >= 0.0) {
            return Err(Error::domain(
                "image grid needs a positive step and nonnegative range",
            ));
        }
        let n = (half_range_mm / step_mm).ceil() as i64;
        Ok(ImageGrid {
            x_mm: (-n..=n).map(|i| i as f64 * step_mm).collect(),
        })
    }

    /// Covers `widths` envelope widths either side of the object centre at
    /// 64 points per fringe period.
    pub fn for_pattern(pattern: &ObjectPattern, widths: f64) -> Self {
        Self::symmetric(
            widths * pattern.envelope_width_mm,
            pattern.fringe_period_mm() / 64.0,
        )
        .expect("pattern fields are positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProfile {
    pub x_mm: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Share of the object's transmission lying outside the grid.
    pub truncated_fraction: f64,
    pub truncation_warning: bool,
}

/// Ghost image of `pattern` seen through `kernel`, evaluated on `grid`.
pub fn synthesize_image(
    kernel: &CoherenceKernel,
    pattern: &ObjectPattern,
    ceiling: f64,
    grid: &ImageGrid,
) -> Result<ImageProfile> {
    if grid.x_mm.is_empty() {
        return Err(Error::domain("image grid is empty"));
    }
    let image = GhostImage::new(kernel, pattern, ceiling)?;
    let intensity = grid.x_mm.iter().map(|&x| image.value(x)).collect();
    let lo = grid.x_mm.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.x_mm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let truncated_fraction = outside_fraction(pattern, ceiling, lo, hi);
    Ok(ImageProfile {
        x_mm: grid.x_mm.clone(),
        intensity,
        truncated_fraction,
        truncation_warning: truncated_fraction > TRUNCATION_TOLERANCE,
    })
}

/// Share of `∫O` outside `[lo, hi]`, by Simpson's rule over twelve
/// envelope widths.
fn outside_fraction(pattern: &ObjectPattern, ceiling: f64, lo: f64, hi: f64) -> f64 {
    let reach = 12.0 * pattern.envelope_width_mm;
    let integrate = |a: f64, b: f64| -> f64 {
        if b <= a {
            return 0.0;
        }
        let n = 2
            * ((b - a) / (pattern.fringe_period_mm() / 32.0))
                .ceil()
                .max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut s = pattern.eval_scaled(a, ceiling) + pattern.eval_scaled(b, ceiling);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pattern.eval_scaled(a + i as f64 * h, ceiling);
        }
        s * h / 3.0
    };
    let total = integrate(-reach, reach);
    let inside = integrate(lo.max(-reach), hi.min(reach));
    ((total - inside) / total).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::laws::{ghost_image, kernel_sigma, visibility};
    use crate::model::PatternForm;

    const K: f64 = 9666.438934122441;

    #[test]
    fn ideal_kernel_reproduces_the_object() {
        let o = ObjectPattern::paper_sinusoid();
        let grid = ImageGrid::for_pattern(&o, 6.0);
        let img = synthesize_image(&CoherenceKernel::Ideal, &o, 1.0, &grid).unwrap();
        for (x, i) in img.x_mm.iter().zip(&img.intensity) {
            assert!((i - o.eval(*x)).abs() < 1e-14);
        }
        assert!(!img.truncation_warning);
    }

    #[test]
    fn blur_matches_exact_convolution() {
        // The Gaussian-blurred finite envelope is again a Gaussian of width
        // S = √(w² + σ²) with fringes k₀w²/S² and depth
        // exp[-k₀²σ²w²/(2S²)].
        let o = ObjectPattern::paper_sinusoid();
        let sigma = kernel_sigma(2.0, 152.0, K);
        let w = o.envelope_width_mm;
        let s2 = w * w + sigma * sigma;
        let k0 = o.fringe_wavenumber;
        let kernel = CoherenceKernel::Analytic { sigma_mm: sigma };
        let img = GhostImage::new(&kernel, &o, 1.0).unwrap();
        for i in -50..=50 {
            let x = i as f64 * 0.01;
            let depth = (-0.5 * k0 * k0 * sigma * sigma * w * w / s2).exp();
            let exact = (-0.5 * x * x / s2).exp() * (1.0 + depth * (k0 * w * w / s2 * x).cos());
            assert!((img.value(x) - exact).abs() < 1e-9, "{x}");
        }
        // Close to the small-blur law in this regime.
        let v = visibility(1.0, 2.0, 152.0, K, k0).unwrap();
        assert!((img.value(0.0) - ghost_image(0.0, &o, v).unwrap()).abs() < 2e-3);
    }

    #[test]
    fn flags_truncated_support() {
        let o = ObjectPattern::paper_sinusoid();
        let grid = ImageGrid::symmetric(2.0 * o.envelope_width_mm, 0.005).unwrap();
        let img = synthesize_image(&CoherenceKernel::Ideal, &o, 1.0, &grid).unwrap();
        assert!(img.truncation_warning);
        // Envelope alone leaves 4.55% outside ±2w; the fringes add a little.
        assert!(
            (0.04..0.07).contains(&img.truncated_fraction),
            "{}",
            img.truncated_fraction
        );
    }

    #[test]
    fn ceiling_scales_fringes() {
        let o = ObjectPattern::paper_sinusoid().with_form(PatternForm::Sinusoid);
        let img = GhostImage::new(&CoherenceKernel::Ideal, &o, 0.65).unwrap();
        assert!((img.value(0.0) - 1.65).abs() < 1e-15);
    }
}
