//! Ensemble estimates of G² over random phase screens.
//!
//! Tilt screens go through the fast path: each realisation moves the
//! plane-wave point image of `x₁` by `a·d/k`, so G² is the histogram of those
//! displacements. Counts are summed per block of realisations and the
//! blocks are added in index order, so the result does not depend on how
//! many workers ran.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::path::KlyshkoPath;
use super::quadrature::QuadratureSettings;
use crate::exec::{Execution, REDUCTION_BLOCK};
use crate::fitting::{fit_gaussian, GaussianFit};
use crate::model::laws::kernel_sigma;
use crate::model::{CoherenceKernel, SampledKernel};
use crate::turbulence::{powerlaw_ensemble, rng_for};
use crate::{Error, Result};

/// Realisations per reduction block of the histogram.
const BLOCK: usize = 16 * REDUCTION_BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSettings {
    pub realizations: usize,
    pub master_seed: u64,
    /// Histogram bin width. Defaults to a tenth of the analytic kernel
    /// width, or 1 µm when that width is zero.
    pub bin_width_mm: Option<f64>,
    /// Histogram half-range. Defaults to six analytic kernel widths, or ten
    /// bins.
    pub half_range_mm: Option<f64>,
}

impl MonteCarloSettings {
    pub fn new(realizations: usize, master_seed: u64) -> Self {
        MonteCarloSettings {
            realizations,
            master_seed,
            bin_width_mm: None,
            half_range_mm: None,
        }
    }

    fn bins(&self, sigma: f64) -> (f64, usize) {
        let width = self
            .bin_width_mm
            .unwrap_or(if sigma > 0.0 { sigma / 10.0 } else { 1e-3 });
        let half_range = self.half_range_mm.unwrap_or(if sigma > 0.0 {
            6.0 * sigma
        } else {
            10.0 * width
        });
        (width, (half_range / width).round().max(1.0) as usize)
    }
}

/// Histogram estimate of G² over `settings.realizations` tilt screens of
/// strength `alpha`.
pub fn monte_carlo_g2(
    path: &KlyshkoPath,
    alpha: f64,
    settings: &MonteCarloSettings,
    exec: Execution,
) -> Result<CoherenceKernel> {
    if settings.realizations < 2 {
        return Err(Error::domain(format!(
            "need at least 2 realisations, got {}",
            settings.realizations
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = settings.realizations;
    let sigma = kernel_sigma(alpha, path.detection_distance_mm, path.wavenumber);
    let (width, half) = settings.bins(sigma);
    let nbins = 2 * half + 1;
    let sd = alpha.sqrt();
    let master = settings.master_seed;

    let blocks = exec.map(n.div_ceil(BLOCK), |b| {
        let mut counts = vec![0u64; nbins];
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let z: f64 = StandardNormal.sample(&mut rng_for(master, i as u64));
            // Offset x₂ − x₁ of the displaced image.
            let offset = -path.tilt_displacement(sd * z);
            let bin = (offset / width).round() + half as f64;
            if bin >= 0.0 && bin < nbins as f64 {
                counts[bin as usize] += 1;
            }
        }
        counts
    });
    let mut counts = vec![0u64; nbins];
    for block in &blocks {
        for (c, b) in counts.iter_mut().zip(block) {
            *c += b;
        }
    }
    Ok(CoherenceKernel::Sampled(from_counts(
        &counts, width, half, n,
    )))
}

fn from_counts(counts: &[u64], width: f64, half: usize, realizations: usize) -> SampledKernel {
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    SampledKernel {
        offsets_mm: (0..counts.len())
            .map(|i| (i as f64 - half as f64) * width)
            .collect(),
        bin_width_mm: width,
        values: counts.iter().map(|&c| c as f64 / peak).collect(),
        std_errors: counts
            .iter()
            .map(|&c| (c.max(1) as f64).sqrt() / peak)
            .collect(),
        realizations,
    }
}

/// G² at `x₁ = 0` averaged over gridded power-law screens, each propagated
/// by the direct quadrature. Sampled at `2·half + 1` offsets spaced
/// `step_mm`.
pub fn monte_carlo_g2_gridded(
    path: &KlyshkoPath,
    alpha: f64,
    exponent: f64,
    step_mm: f64,
    half: usize,
    settings: &MonteCarloSettings,
    quadrature: &QuadratureSettings,
    exec: Execution,
) -> Result<CoherenceKernel> {
    if settings.realizations < 2 {
        return Err(Error::domain(format!(
            "need at least 2 realisations, got {}",
            settings.realizations
        )));
    }
    let extent = half as f64 * step_mm;
    // The screens are drawn on the pupil's own nodes.
    let pupil = path.pupil(0.0, extent, 0.0, quadrature)?;
    let grid = pupil.t_mm.clone();
    let ensemble = powerlaw_ensemble(
        alpha,
        exponent,
        &grid,
        settings.realizations,
        settings.master_seed,
        exec,
    )?;
    let x2: Vec<f64> = (0..2 * half + 1)
        .map(|i| (i as f64 - half as f64) * step_mm)
        .collect();

    let profiles = exec.map(ensemble.len(), |i| {
        pupil.intensity(&x2, &ensemble.screens[i])
    });
    let mut sum = vec![0.0; x2.len()];
    let mut sum_sq = vec![0.0; x2.len()];
    for p in profiles {
        for (j, v) in p?.into_iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let n = settings.realizations as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se: Vec<f64> = mean
        .iter()
        .zip(&sum_sq)
        .map(|(m, s2)| ((s2 / n - m * m).max(0.0) / (n - 1.0)).sqrt())
        .collect();
    let peak = mean.iter().cloned().fold(0.0, f64::max);
    Ok(CoherenceKernel::Sampled(SampledKernel {
        offsets_mm: x2,
        bin_width_mm: step_mm,
        values: mean.iter().map(|m| m / peak).collect(),
        std_errors: se.iter().map(|s| s / peak).collect(),
        realizations: settings.realizations,
    }))
}

/// Quadrature G² at `x₁ = 0` under the analytic screen average, sampled
/// like [`monte_carlo_g2_gridded`].
pub fn quadrature_g2(
    path: &KlyshkoPath,
    alpha: f64,
    exponent: f64,
    step_mm: f64,
    half: usize,
    quadrature: &QuadratureSettings,
    exec: Execution,
) -> Result<SampledKernel> {
    let extent = half as f64 * step_mm;
    let pupil = path.pupil(0.0, extent, 0.0, quadrature)?;
    let x2: Vec<f64> = (0..2 * half + 1)
        .map(|i| (i as f64 - half as f64) * step_mm)
        .collect();
    let g2 = pupil.averaged_g2(&x2, alpha, exponent, exec);
    let peak = g2.iter().cloned().fold(0.0, f64::max);
    Ok(SampledKernel {
        offsets_mm: x2,
        bin_width_mm: step_mm,
        values: g2.iter().map(|v| v / peak).collect(),
        std_errors: vec![0.0; g2.len()],
        realizations: 0,
    })
}

/// Gaussian fit of a sampled kernel.
///
/// Kernels without standard errors are fitted unweighted. Histogram kernels
/// are fitted first with their count-based errors, then reweighted by the
/// fitted model's expected counts until the width settles; weighting by the
/// observed counts alone narrows the fit by about 1% at 10⁴ realisations.
pub fn fit_kernel(kernel: &SampledKernel) -> Result<GaussianFit> {
    let (x, y) = (&kernel.offsets_mm, &kernel.values);
    if !kernel.std_errors.iter().all(|&e| e > 0.0) {
        return fit_gaussian(x, y, &vec![1.0; y.len()]);
    }
    // Values are counts/peak with errors sqrt(counts)/peak, so value/error²
    // recovers the peak count from any occupied bin.
    let peak = y
        .iter()
        .zip(&kernel.std_errors)
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, e)| v / (e * e))
        .fold(0.0, f64::max);
    let mut fit = fit_gaussian(x, y, &kernel.std_errors)?;
    for _ in 0..REWEIGHT_PASSES {
        let err: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let m = fit.amplitude * (-0.5 * ((xi - fit.center) / fit.sigma).powi(2)).exp();
                (m * peak).max(1.0).sqrt() / peak
            })
            .collect();
        let next = fit_gaussian(x, y, &err)?;
        let settled = (next.sigma - fit.sigma).abs() <= 1e-9 * fit.sigma;
        fit = next;
        if settled {
            break;
        }
    }
    Ok(fit)
}

/// Reweighting passes of [`fit_kernel`].
const REWEIGHT_PASSES: usize = 4;
