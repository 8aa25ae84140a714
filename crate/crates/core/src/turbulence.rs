//! Thin phase screens, their structure functions and the two-point mutual
//! coherence of the turbulent sheet.
//!
//! A Gaussian phase process whose structure function is exactly `α·r²` is a
//! random linear ramp `φ(x) = a·x` with `a ~ N(0, α)`; that is what
//! [`sample_tilt_screen`] draws. [`sample_powerlaw_screen`] covers general
//! exponents `0 < p ≤ 2` by exact circulant-embedding synthesis of the phase
//! increments (fractional Brownian motion with Hurst index `p/2`). It is
//! exploratory: no closed-form visibility law exists for `p ≠ 2`.
//!
//! Seeding: screen `i` of an ensemble with master seed `m` is drawn from a
//! ChaCha8 generator seeded with [`derive_seed`]`(m, i)`, so any screen can be
//! regenerated in isolation and ensembles are identical under any
//! scheduling.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::{Error, Result};

/// Identifier of the per-screen seed rule, recorded with every ensemble.
pub const SEED_RULE: &str = "splitmix64(master + 0x9E3779B97F4A7C15 * (index + 1))";

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th member of an ensemble; see [`SEED_RULE`].
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1))))
}

pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// Parameters a gridded screen was generated with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub alpha: f64,
    pub exponent: f64,
    pub spacing_mm: f64,
}

/// A realisation of the multiplicative transmittance `T(x) = exp[iφ(x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhaseScreen {
    /// `φ(x) = slope·x`, slope in rad/mm.
    Tilt { slope: f64 },
    /// Phase samples on a uniform grid.
    Gridded {
        x_mm: Vec<f64>,
        phase: Vec<f64>,
        params: GridParams,
    },
}

impl PhaseScreen {
    /// Phase at `x`; gridded screens interpolate linearly and hold the end
    /// values outside their support.
    pub fn phase(&self, x: f64) -> f64 {
        match self {
            PhaseScreen::Tilt { slope } => slope * x,
            PhaseScreen::Gridded {
                x_mm,
                phase,
                params,
            } => {
                let n = x_mm.len();
                let pos = (x - x_mm[0]) / params.spacing_mm;
                if pos <= 0.0 {
                    return phase[0];
                }
                if pos >= (n - 1) as f64 {
                    return phase[n - 1];
                }
                let i = pos.floor() as usize;
                let t = pos - i as f64;
                phase[i] * (1.0 - t) + phase[i + 1] * t
            }
        }
    }

    pub fn transmittance(&self, x: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.phase(x))
    }

    /// Largest |dφ/dx|, used to size quadrature grids.
    pub fn max_gradient(&self) -> f64 {
        match self {
            PhaseScreen::Tilt { slope } => slope.abs(),
            PhaseScreen::Gridded { phase, params, .. } => phase
                .windows(2)
                .map(|w| ((w[1] - w[0]) / params.spacing_mm).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Extent of the screen, `None` for the unbounded tilt.
    pub fn support_mm(&self) -> Option<f64> {
        match self {
            PhaseScreen::Tilt { .. } => None,
            PhaseScreen::Gridded { x_mm, .. } => Some(x_mm[x_mm.len() - 1] - x_mm[0]),
        }
    }

    pub fn slope(&self) -> Option<f64> {
        match self {
            PhaseScreen::Tilt { slope } => Some(*slope),
            PhaseScreen::Gridded { .. } => None,
        }
    }
}

/// Random tilt with slope drawn from `N(0, α)`.
pub fn sample_tilt_screen(alpha: f64, seed: u64) -> Result<PhaseScreen> {
    check_alpha(alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    Ok(PhaseScreen::Tilt {
        slope: alpha.sqrt() * z,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(())
}

/// Uniform grid check shared by the power-law generator.
fn grid_spacing(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::domain(
            "power-law screen needs at least two grid points",
        ));
    }
    let h = grid[1] - grid[0];
    if !(h > 0.0) {
        return Err(Error::domain("grid must be strictly increasing"));
    }
    for (i, w) in grid.windows(2).enumerate() {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::domain(format!("nonuniform grid at index {i}")));
        }
    }
    Ok(h)
}

/// Eigenvalues of the minimal circulant embedding of the increment
/// covariance of a process with structure function `α·|r|^p` sampled at
/// spacing `h`, for `m` increments. Also returns the embedding size.
struct IncrementSpectrum {
    sqrt_eigen: Vec<f64>,
    size: usize,
    fft: Arc<dyn rustfft::Fft<f64>>,
}

impl IncrementSpectrum {
    fn new(alpha: f64, p: f64, h: f64, m: usize) -> Result<Self> {
        // Var of one increment is α·h^p; lag-j covariance of increments is
        // (α h^p / 2)(|j+1|^p − 2|j|^p + |j−1|^p).
        let var = alpha * h.powf(p);
        let gamma = |j: usize| {
            let j = j as f64;
            0.5 * var * ((j + 1.0).powf(p) - 2.0 * j.powf(p) + (j - 1.0).abs().powf(p))
        };
        let size = 2 * m;
        let mut row: Vec<Complex64> = (0..size)
            .map(|i| {
                let lag = if i <= m { i } else { size - i };
                Complex64::new(gamma(lag), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);
        let max = row.iter().map(|c| c.re).fold(0.0, f64::max);
        let mut sqrt_eigen = Vec::with_capacity(size);
        for c in &row {
            if c.re < -1e-8 * max {
                return Err(Error::domain(format!(
                    "circulant embedding is not nonnegative definite (eigenvalue {:e})",
                    c.re
                )));
            }
            sqrt_eigen.push((c.re.max(0.0) / size as f64).sqrt());
        }
        Ok(IncrementSpectrum {
            sqrt_eigen,
            size,
            fft,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .sqrt_eigen
            .iter()
            .map(|&s| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re, im) * s
            })
            .collect();
        debug_assert_eq!(buf.len(), self.size);
        self.fft.process(&mut buf);
        buf[..m].iter().map(|c| c.re).collect()
    }
}

/// Gridded screen with ensemble structure function `α·|r|^p` at grid
/// separations. `φ` is zero at the first grid point.
pub fn sample_powerlaw_screen(alpha: f64, p: f64, grid: &[f64], seed: u64) -> Result<PhaseScreen> {
    let mut ens = powerlaw_ensemble(alpha, p, grid, 1, seed, Execution::Sequential)?;
    Ok(ens.screens.remove(0))
}

fn powerlaw_internal(
    spectrum: Option<&IncrementSpectrum>,
    grid: &[f64],
    params: GridParams,
    rng: &mut ChaCha8Rng,
) -> PhaseScreen {
    let m = grid.len() - 1;
    let mut phase = vec![0.0; grid.len()];
    if let Some(spec) = spectrum {
        let inc = spec.sample(rng, m);
        for i in 0..m {
            phase[i + 1] = phase[i] + inc[i];
        }
    }
    PhaseScreen::Gridded {
        x_mm: grid.to_vec(),
        phase,
        params,
    }
}

/// Ordered, reproducible collection of screens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenEnsemble {
    pub screens: Vec<PhaseScreen>,
    pub master_seed: u64,
    pub seed_rule: String,
}

impl ScreenEnsemble {
    pub fn len(&self) -> usize {
        self.screens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screens.is_empty()
    }

    /// Writes `index,slope` rows. Only tilt ensembles can be dumped.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "slope"])?;
        for (i, s) in self.screens.iter().enumerate() {
            let slope = s
                .slope()
                .ok_or_else(|| Error::domain("only tilt ensembles serialize to index,slope CSV"))?;
            w.serialize((i, slope))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an `index,slope` dump. Indices must run 0, 1, 2, ...
    pub fn read_csv<R: Read>(input: R, master_seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut screens = Vec::new();
        for (row, rec) in r.deserialize::<(usize, f64)>().enumerate() {
            let (index, slope) = rec?;
            if index != row {
                return Err(Error::domain(format!(
                    "screen dump row {row} has index {index}"
                )));
            }
            screens.push(PhaseScreen::Tilt { slope });
        }
        Ok(ScreenEnsemble {
            screens,
            master_seed,
            seed_rule: SEED_RULE.to_string(),
        })
    }
}

/// `n` tilt screens; screen `i` uses [`derive_seed`]`(master_seed, i)`.
pub fn tilt_ensemble(
    alpha: f64,
    n: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<ScreenEnsemble> {
    check_alpha(alpha)?;
    let screens = exec.map(n, |i| {
        sample_tilt_screen(alpha, derive_seed(master_seed, i as u64))
            .expect("alpha already checked")
    });
    Ok(ScreenEnsemble {
        screens,
        master_seed,
        seed_rule: SEED_RULE.to_string(),
    })
}

/// `n` power-law screens on `grid`, seeded like [`tilt_ensemble`].
pub fn powerlaw_ensemble(
    alpha: f64,
    p: f64,
    grid: &[f64],
    n: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<ScreenEnsemble> {
    check_alpha(alpha)?;
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::domain(format!(
            "exponent must lie in (0, 2], got {p}"
        )));
    }
    let h = grid_spacing(grid)?;
    let params = GridParams {
        alpha,
        exponent: p,
        spacing_mm: h,
    };
    let spectrum = if alpha > 0.0 {
        Some(IncrementSpectrum::new(alpha, p, h, grid.len() - 1)?)
    } else {
        None
    };
    let screens = exec.map(n, |i| {
        let mut rng = rng_for(master_seed, i as u64);
        powerlaw_internal(spectrum.as_ref(), grid, params, &mut rng)
    });
    Ok(ScreenEnsemble {
        screens,
        master_seed,
        seed_rule: SEED_RULE.to_string(),
    })
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Mean and standard error of the mean of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Estimate {
                value: mean,
                std_error: 0.0,
            };
        }
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        Estimate {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Structure-function estimate at one separation; `value` is an error when
/// the separation cannot be represented on every screen.
#[derive(Debug)]
pub struct StructurePoint {
    pub separation_mm: f64,
    pub value: Result<Estimate>,
}

/// Estimates `D(r) = ⟨(φ(x + r) − φ(x))²⟩` at each separation.
///
/// For gridded screens every pair of grid points at lag `r` is used; the
/// per-screen averages are then combined across the ensemble, which makes
/// the standard error honest under within-screen correlation.
pub fn estimate_structure_function(
    ensemble: &ScreenEnsemble,
    separations: &[f64],
) -> Result<Vec<StructurePoint>> {
    if ensemble.is_empty() {
        return Err(Error::domain("structure function of an empty ensemble"));
    }
    Ok(separations
        .iter()
        .map(|&r| StructurePoint {
            separation_mm: r,
            value: structure_at(ensemble, r),
        })
        .collect())
}

fn structure_at(ensemble: &ScreenEnsemble, r: f64) -> Result<Estimate> {
    let r_abs = r.abs();
    let mut per_screen = Vec::with_capacity(ensemble.len());
    for screen in &ensemble.screens {
        let v = match screen {
            PhaseScreen::Tilt { slope } => {
                let dphi = slope * r_abs;
                dphi * dphi
            }
            PhaseScreen::Gridded { phase, params, .. } => {
                if r_abs == 0.0 {
                    0.0
                } else {
                    let lag_f = r_abs / params.spacing_mm;
                    let lag = lag_f.round() as usize;
                    if (lag_f - lag as f64).abs() > 1e-6 {
                        return Err(Error::domain(format!(
                            "separation {r} mm is not a multiple of the grid spacing {} mm",
                            params.spacing_mm
                        )));
                    }
                    if lag >= phase.len() {
                        return Err(Error::domain(format!(
                            "separation {r} mm exceeds the screen support"
                        )));
                    }
                    let count = phase.len() - lag;
                    phase[lag..]
                        .iter()
                        .zip(phase.iter())
                        .map(|(b, a)| (b - a) * (b - a))
                        .sum::<f64>()
                        / count as f64
                }
            }
        };
        per_screen.push(v);
    }
    Ok(Estimate::from_samples(&per_screen))
}

/// `⟨T*(x̃)T(x)⟩ = exp[-α·Δx²/2]`.
pub fn mutual_coherence(alpha: f64, dx: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((-0.5 * alpha * dx * dx).exp())
}

/// Power-law generalisation `exp[-α|Δx|^p/2]`.
pub fn mutual_coherence_powerlaw(alpha: f64, p: f64, dx: f64) -> f64 {
    (-0.5 * alpha * dx.abs().powf(p)).exp()
}

/// Ensemble average of `exp[i(φ(x + Δx) − φ(x))]` at `x = 0`.
pub fn empirical_coherence(ensemble: &ScreenEnsemble, dx: f64) -> Complex64 {
    let sum: Complex64 = ensemble
        .screens
        .iter()
        .map(|s| s.transmittance(0.0).conj() * s.transmittance(dx))
        .sum();
    sum / ensemble.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_alpha_gives_flat_screens() {
        assert_eq!(
            sample_tilt_screen(0.0, 7).unwrap(),
            PhaseScreen::Tilt { slope: 0.0 }
        );
        let grid: Vec<f64> = (0..64).map(|i| i as f64 * 0.01).collect();
        let s = sample_powerlaw_screen(0.0, 5.0 / 3.0, &grid, 3).unwrap();
        match s {
            PhaseScreen::Gridded { phase, .. } => assert!(phase.iter().all(|&p| p == 0.0)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(sample_tilt_screen(-1.0, 0).is_err());
        assert!(mutual_coherence(-1.0, 0.1).is_err());
    }

    #[test]
    fn tilt_is_deterministic() {
        let a = sample_tilt_screen(2.0, 1234).unwrap();
        let b = sample_tilt_screen(2.0, 1234).unwrap();
        assert_eq!(a.slope().unwrap().to_bits(), b.slope().unwrap().to_bits());
        assert_ne!(a, sample_tilt_screen(2.0, 1235).unwrap());
    }

    #[test]
    fn tilt_slope_variance_concentrates() {
        let ens = tilt_ensemble(2.0, 10_000, 42, Execution::Parallel).unwrap();
        let slopes: Vec<f64> = ens.screens.iter().map(|s| s.slope().unwrap()).collect();
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        let var = slopes.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((1.92..=2.08).contains(&var), "variance {var}");
    }

    #[test]
    fn nonuniform_grid_rejected() {
        let grid = [0.0, 0.1, 0.25, 0.3];
        assert!(sample_powerlaw_screen(1.0, 1.5, &grid, 0).is_err());
        assert!(sample_powerlaw_screen(1.0, 2.5, &[0.0, 0.1, 0.2], 0).is_err());
    }

    #[test]
    fn structure_function_trivial_cases() {
        let ens = tilt_ensemble(2.0, 100, 1, Execution::Sequential).unwrap();
        let pts = estimate_structure_function(&ens, &[0.0]).unwrap();
        assert_eq!(pts[0].value.as_ref().unwrap().value, 0.0);

        let flat = ScreenEnsemble {
            screens: vec![PhaseScreen::Tilt { slope: 0.0 }],
            master_seed: 0,
            seed_rule: SEED_RULE.into(),
        };
        for p in estimate_structure_function(&flat, &[0.1, 1.0, 10.0]).unwrap() {
            assert_eq!(p.value.unwrap().value, 0.0);
        }
        assert!(estimate_structure_function(
            &ScreenEnsemble {
                screens: vec![],
                master_seed: 0,
                seed_rule: SEED_RULE.into()
            },
            &[0.1]
        )
        .is_err());
    }

    #[test]
    fn structure_function_of_tilts() {
        let ens = tilt_ensemble(2.0, 10_000, 99, Execution::Parallel).unwrap();
        let d = estimate_structure_function(&ens, &[0.1])
            .unwrap()
            .remove(0)
            .value
            .unwrap();
        assert!((d.value - 0.02).abs() <= 0.05 * 0.02, "{d:?}");
    }

    #[test]
    fn out_of_support_separation_is_per_point() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let ens = powerlaw_ensemble(1.0, 1.5, &grid, 10, 5, Execution::Sequential).unwrap();
        let pts = estimate_structure_function(&ens, &[0.1, 5.0, 0.105]).unwrap();
        assert!(pts[0].value.is_ok());
        assert!(pts[1].value.is_err());
        assert!(pts[2].value.is_err());
    }

    #[test]
    fn powerlaw_five_thirds_structure_function() {
        let grid: Vec<f64> = (0..201).map(|i| i as f64 * 0.01).collect();
        let p = 5.0 / 3.0;
        let ens = powerlaw_ensemble(1.0, p, &grid, 10_000, 11, Execution::Parallel).unwrap();
        let d = estimate_structure_function(&ens, &[0.1])
            .unwrap()
            .remove(0)
            .value
            .unwrap();
        let expected = 0.1f64.powf(p);
        assert!((expected - 0.0215).abs() < 1e-4);
        assert!(
            (d.value / expected - 1.0).abs() <= 0.05,
            "{d:?} vs {expected}"
        );
    }

    #[test]
    fn powerlaw_square_law_matches_tilts() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let ens = powerlaw_ensemble(2.0, 2.0, &grid, 10_000, 21, Execution::Parallel).unwrap();
        let tilts = tilt_ensemble(2.0, 10_000, 22, Execution::Parallel).unwrap();
        for r in [0.05, 0.1, 0.2, 0.3, 0.5] {
            let g = estimate_structure_function(&ens, &[r])
                .unwrap()
                .remove(0)
                .value
                .unwrap();
            let t = estimate_structure_function(&tilts, &[r])
                .unwrap()
                .remove(0)
                .value
                .unwrap();
            let ratio = g.value / (2.0 * r * r);
            assert!((0.95..=1.05).contains(&ratio), "r={r}: {ratio}");
            let joint = (g.std_error.powi(2) + t.std_error.powi(2)).sqrt();
            assert!(
                (g.value - t.value).abs() <= 3.0 * joint,
                "r={r}: {g:?} vs {t:?}"
            );
        }
    }

    #[test]
    fn mutual_coherence_examples() {
        assert_eq!(mutual_coherence(2.0, 0.0).unwrap(), 1.0);
        assert!((mutual_coherence(2.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let ens = tilt_ensemble(2.0, 10_000, 7, Execution::Parallel).unwrap();
        let c = empirical_coherence(&ens, 0.5);
        let exact = mutual_coherence(2.0, 0.5).unwrap();
        assert!((c.re - exact).abs() <= 0.02 * exact, "{c} vs {exact}");
        assert!(c.im.abs() < 0.02);
    }

    #[test]
    fn coherence_converges_over_the_working_range() {
        // Absolute tolerance: at α·Δx² = 4 the coherence is e⁻² ≈ 0.135
        // while the ensemble noise at N = 10⁴ is about 0.007.
        for alpha in [0.5, 2.0, 2.5] {
            let ens = tilt_ensemble(alpha, 10_000, 11, Execution::Parallel).unwrap();
            let max_dx = (4.0 / alpha).sqrt();
            for i in 0..=20 {
                let dx = max_dx * i as f64 / 20.0;
                let c = empirical_coherence(&ens, dx);
                let exact = mutual_coherence(alpha, dx).unwrap();
                assert!(
                    (c.re - exact).abs() <= 0.02,
                    "α={alpha} Δx={dx}: {c} vs {exact}"
                );
                assert!(c.im.abs() <= 0.02);
            }
        }
    }

    #[test]
    fn ensemble_csv_round_trip() {
        let ens = tilt_ensemble(2.5, 50, 3, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let back = ScreenEnsemble::read_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn member_regenerates_in_isolation() {
        let ens = tilt_ensemble(2.0, 64, 77, Execution::Parallel).unwrap();
        let lone = sample_tilt_screen(2.0, derive_seed(77, 40)).unwrap();
        assert_eq!(ens.screens[40], lone);
    }
}
