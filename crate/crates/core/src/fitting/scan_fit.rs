//! Fit of the ghost-image profile
//! `b + A·exp[-((x − x₀)/w)²/2]·(1 + 𝒱 cos(k₀(x − x₀) + φ))` to a scan.
//!
//! Internally the fringe is carried as `c = 𝒱 cos φ`, `s = 𝒱 sin φ`, so the
//! visibility `𝒱 = √(c² + s²)` can never go negative and stays smooth
//! through zero; trial steps with `𝒱 > 1` are pulled back radially onto the
//! unit circle. Amplitude and width are fitted as logarithms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::lm::{minimize, LeastSquares, LmOptions};
use crate::engine::ScanData;
use crate::{Error, Result};

pub const FIT_SCHEMA_VERSION: u32 = 1;

/// Parameters of the ghost-image profile. Also used to carry their
/// standard errors in [`FitResult::errors`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanFitModel {
    /// counts/s
    pub amplitude: f64,
    pub center_mm: f64,
    pub envelope_width_mm: f64,
    /// rad/mm
    pub fringe_wavenumber: f64,
    /// rad
    pub fringe_phase: f64,
    pub visibility: f64,
    /// counts/s
    pub background: f64,
}

impl ScanFitModel {
    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.center_mm;
        let e = (-0.5 * (u / self.envelope_width_mm).powi(2)).exp();
        self.background
            + self.amplitude
                * e
                * (1.0 + self.visibility * (self.fringe_wavenumber * u + self.fringe_phase).cos())
    }

    fn to_internal(self) -> [f64; 7] {
        let v = self.visibility.clamp(0.0, 1.0);
        [
            self.amplitude.max(1e-300).ln(),
            self.center_mm,
            self.envelope_width_mm.max(1e-300).ln(),
            self.fringe_wavenumber,
            v * self.fringe_phase.cos(),
            v * self.fringe_phase.sin(),
            self.background,
        ]
    }

    fn from_internal(p: &[f64; 7]) -> Self {
        ScanFitModel {
            amplitude: p[0].exp(),
            center_mm: p[1],
            envelope_width_mm: p[2].exp(),
            fringe_wavenumber: p[3],
            fringe_phase: p[5].atan2(p[4]),
            visibility: p[4].hypot(p[5]),
            background: p[6],
        }
    }

    /// Data-driven starting point: background and amplitude from the
    /// profile extrema, centre and width from a log-parabola fit to the
    /// fringe-averaged profile (moments as fallback), `k₀` from the dominant
    /// peak of the residual spectrum, `𝒱` from the fringe extrema within the
    /// central period and `φ` from the spectral phase.
    pub fn estimate(x: &[f64], y: &[f64]) -> Result<Self> {
        check_shape(x, y)?;
        let n = x.len();
        let ymax = y.iter().cloned().fold(f64::MIN, f64::max);
        let ymin = y.iter().cloned().fold(f64::MAX, f64::min);
        if !(ymax > 0.0) {
            return Err(Error::Fit("profile has no positive values".into()));
        }
        let edge = y[0].max(y[n - 1]);
        // Extremum background only when the envelope tails are inside the scan.
        let background = if edge < 0.1 * ymax {
            ymin.max(0.0)
        } else {
            0.0
        };
        let above: Vec<f64> = y.iter().map(|v| (v - background).max(0.0)).collect();
        let total: f64 = above.iter().sum();
        let mean = x.iter().zip(&above).map(|(x, w)| x * w).sum::<f64>() / total;
        let var = x
            .iter()
            .zip(&above)
            .map(|(x, w)| (x - mean).powi(2) * w)
            .sum::<f64>()
            / total;

        let k0 = dominant_wavenumber(x, &above, var.sqrt())?;
        let period = 2.0 * PI / k0;
        let smooth = boxcar(x, &above, period);
        let (center, width, amp) =
            log_parabola(x, &smooth).unwrap_or((mean, var.sqrt(), above_max(&above)));

        let env = |xi: f64| amp * (-0.5 * ((xi - center) / width).powi(2)).exp();
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for (xi, yi) in x.iter().zip(y) {
            if (xi - center).abs() <= 0.5 * period {
                let ratio = (yi - background) / env(*xi) - 1.0;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        let v0 = if hi > lo {
            (0.5 * (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let spectral: Complex64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| Complex64::from_polar(yi - background - env(*xi), -k0 * (xi - center)))
            .sum();
        Ok(ScanFitModel {
            amplitude: amp,
            center_mm: center,
            envelope_width_mm: width,
            fringe_wavenumber: k0,
            fringe_phase: spectral.arg(),
            visibility: v0,
            background,
        })
    }
}

fn above_max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

fn check_shape(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Fit(
            "position and value columns differ in length".into(),
        ));
    }
    if x.len() < 10 {
        return Err(Error::Fit(format!(
            "need at least 10 points, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Wavenumber maximising the spectrum of the detrended profile, searched
/// between the envelope's own spectral width (`4/width`, or one period per
/// scan span if larger) and the sampling Nyquist limit, then refined by
/// golden-section search.
fn dominant_wavenumber(x: &[f64], y: &[f64], width: f64) -> Result<f64> {
    let n = x.len();
    let span = x[n - 1] - x[0];
    let step = span / (n - 1) as f64;
    let detrended = subtract_quadratic(x, y);
    let power = |k: f64| -> f64 {
        let s: Complex64 = x
            .iter()
            .zip(&detrended)
            .map(|(xi, yi)| Complex64::from_polar(*yi, -k * xi))
            .sum();
        s.norm_sqr()
    };
    let k_lo = (2.0 * PI / span).max(4.0 / width);
    let k_hi = PI / step;
    let samples = 8 * n;
    let mut best = (k_lo, f64::MIN);
    for i in 0..=samples {
        let k = k_lo + (k_hi - k_lo) * i as f64 / samples as f64;
        let p = power(k);
        if p > best.1 {
            best = (k, p);
        }
    }
    let dk = (k_hi - k_lo) / samples as f64;
    let (mut a, mut b) = ((best.0 - dk).max(k_lo * 0.5), best.0 + dk);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let k = 0.5 * (a + b);
    if !(k > 0.0) {
        return Err(Error::Fit("no fringe frequency found".into()));
    }
    Ok(k)
}

fn subtract_quadratic(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for (xi, yi) in x.iter().zip(y) {
        let u = xi - xm;
        let basis = nalgebra::Vector3::new(1.0, u, u * u);
        a += basis * basis.transpose();
        b += basis * *yi;
    }
    match a.lu().solve(&b) {
        Some(c) => x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let u = xi - xm;
                yi - (c[0] + c[1] * u + c[2] * u * u)
            })
            .collect(),
        None => y.to_vec(),
    }
}

/// Moving average over a window of one fringe period.
fn boxcar(x: &[f64], y: &[f64], width: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut sum = 0.0;
    for i in 0..n {
        while hi < n && x[hi] <= x[i] + 0.5 * width {
            sum += y[hi];
            hi += 1;
        }
        while x[lo] < x[i] - 0.5 * width {
            sum -= y[lo];
            lo += 1;
        }
        out[i] = sum / (hi - lo) as f64;
    }
    out
}

/// Gaussian through `ln y = a + b x + c x²`, weighted by `y²`.
fn log_parabola(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let peak = above_max(y);
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for (xi, yi) in x.iter().zip(y) {
        if *yi <= 0.05 * peak {
            continue;
        }
        let w = yi * yi;
        let basis = nalgebra::Vector3::new(1.0, *xi, xi * xi);
        a += basis * basis.transpose() * w;
        b += basis * (yi.ln() * w);
    }
    let c = a.lu().solve(&b)?;
    if !(c[2] < 0.0) {
        return None;
    }
    let center = -c[1] / (2.0 * c[2]);
    let width = (-1.0 / (2.0 * c[2])).sqrt();
    let amp = (c[0] - c[1] * c[1] / (4.0 * c[2])).exp();
    (center.is_finite() && width.is_finite() && amp.is_finite()).then_some((center, width, amp))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub lm: LmOptions,
    /// Hold the background at this rate instead of fitting it.
    pub fixed_background: Option<f64>,
}

impl FitOptions {
    pub fn with_fixed_background(background: f64) -> Self {
        FitOptions {
            fixed_background: Some(background),
            ..Default::default()
        }
    }
}

/// Outcome of a profile fit. Serialises to the documented JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub model: ScanFitModel,
    /// One-sigma errors from the curvature of the weighted objective; zero
    /// for held parameters. `None` when the curvature matrix is singular.
    pub errors: Option<ScanFitModel>,
    pub chi_squared: f64,
    pub degrees_of_freedom: usize,
    pub reduced_chi_squared: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

impl FitResult {
    /// The fitted model, or an error when the optimiser did not converge.
    pub fn usable(&self) -> Result<&ScanFitModel> {
        if self.converged {
            Ok(&self.model)
        } else {
            Err(Error::Fit(format!(
                "fit did not converge ({})",
                self.status
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct ProfileProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    err: &'a [f64],
    /// Indices into the 7-vector that are free.
    free: Vec<usize>,
    base: [f64; 7],
}

impl ProfileProblem<'_> {
    fn full(&self, p: &[f64]) -> [f64; 7] {
        let mut q = self.base;
        for (j, &i) in self.free.iter().enumerate() {
            q[i] = p[j];
        }
        q
    }
}

impl LeastSquares for ProfileProblem<'_> {
    fn n_params(&self) -> usize {
        self.free.len()
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let q = self.full(p);
        let (a, x0, w, k0, c, s, b) = (q[0].exp(), q[1], q[2].exp(), q[3], q[4], q[5], q[6]);
        for i in 0..self.x.len() {
            let u = self.x[i] - x0;
            let e = (-0.5 * (u / w).powi(2)).exp();
            let (sn, cs) = (k0 * u).sin_cos();
            out[i] = (b + a * e * (1.0 + c * cs - s * sn) - self.y[i]) / self.err[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let q = self.full(p);
        let (a, x0, w, k0, c, s) = (q[0].exp(), q[1], q[2].exp(), q[3], q[4], q[5]);
        for i in 0..self.x.len() {
            let u = self.x[i] - x0;
            let e = (-0.5 * (u / w).powi(2)).exp();
            let (sn, cs) = (k0 * u).sin_cos();
            let f = 1.0 + c * cs - s * sn;
            let ae = a * e / self.err[i];
            let d = [
                ae * f,
                ae * (u / (w * w) * f + k0 * (c * sn + s * cs)),
                ae * f * (u * u) / (w * w),
                ae * (-c * u * sn - s * u * cs),
                ae * cs,
                -ae * sn,
                1.0 / self.err[i],
            ];
            for (j, &k) in self.free.iter().enumerate() {
                jac[(i, j)] = d[k];
            }
        }
    }

    fn project(&self, p: &mut [f64]) {
        let (ci, si) = (
            self.free.iter().position(|&i| i == 4),
            self.free.iter().position(|&i| i == 5),
        );
        if let (Some(ci), Some(si)) = (ci, si) {
            let v = p[ci].hypot(p[si]);
            if v > 1.0 {
                p[ci] /= v;
                p[si] /= v;
            }
        }
    }
}

/// Fits the profile model to `(x, y ± err)`.
pub fn fit_profile(
    x: &[f64],
    y: &[f64],
    err: &[f64],
    guess: &ScanFitModel,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_shape(x, y)?;
    if err.len() != x.len() || err.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Fit(
            "standard errors must be positive and match the data".into(),
        ));
    }
    if !(guess.fringe_wavenumber > 0.0) {
        return Err(Error::Fit(
            "initial fringe wavenumber must be positive".into(),
        ));
    }
    let span = x[x.len() - 1] - x[0];
    let periods = span * guess.fringe_wavenumber / (2.0 * PI);
    if periods < 2.0 {
        return Err(Error::Fit(format!(
            "scan spans {periods:.2} fringe periods; at least 2 are needed"
        )));
    }
    let mut start = *guess;
    if let Some(b) = opts.fixed_background {
        start.background = b;
    }
    let base = start.to_internal();
    let free: Vec<usize> = (0..7)
        .filter(|&i| !(i == 6 && opts.fixed_background.is_some()))
        .collect();
    let problem = ProfileProblem {
        x,
        y,
        err,
        free,
        base,
    };
    let p0: Vec<f64> = problem.free.iter().map(|&i| base[i]).collect();
    let out = minimize(&problem, &p0, &opts.lm);
    let q = problem.full(&out.params);
    let model = ScanFitModel::from_internal(&q);

    let errors = out.covariance.as_ref().map(|cov| {
        let mut cov7 = DMatrix::<f64>::zeros(7, 7);
        for (a, &i) in problem.free.iter().enumerate() {
            for (b, &j) in problem.free.iter().enumerate() {
                cov7[(i, j)] = cov[(a, b)];
            }
        }
        model_errors(&q, &model, &cov7)
    });
    let dof = x.len().saturating_sub(problem.free.len());
    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        model,
        errors,
        chi_squared: out.cost,
        degrees_of_freedom: dof,
        reduced_chi_squared: out.cost / dof.max(1) as f64,
        iterations: out.iterations,
        converged: out.status.converged() && out.covariance.is_some(),
        status: format!("{:?}", out.status),
    })
}

/// Propagates the internal covariance to the reported parameters. At
/// `𝒱 = 0` the phase is undetermined and its error is reported as π.
fn model_errors(q: &[f64; 7], model: &ScanFitModel, cov: &DMatrix<f64>) -> ScanFitModel {
    let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();
    let (c, s, v) = (q[4], q[5], model.visibility);
    let (sigma_v, sigma_phi) = if v > 0.0 {
        let var_v =
            (c * c * cov[(4, 4)] + 2.0 * c * s * cov[(4, 5)] + s * s * cov[(5, 5)]) / (v * v);
        let var_phi = (s * s * cov[(4, 4)] - 2.0 * c * s * cov[(4, 5)] + c * c * cov[(5, 5)])
            / (v * v * v * v);
        (var_v.max(0.0).sqrt(), var_phi.max(0.0).sqrt().min(PI))
    } else {
        ((0.5 * (cov[(4, 4)] + cov[(5, 5)])).max(0.0).sqrt(), PI)
    };
    ScanFitModel {
        amplitude: model.amplitude * sd(0),
        center_mm: sd(1),
        envelope_width_mm: model.envelope_width_mm * sd(2),
        fringe_wavenumber: sd(3),
        fringe_phase: sigma_phi,
        visibility: sigma_v,
        background: sd(6),
    }
}

/// Reweighting passes of [`fit_scan`] after the initial data-weighted fit.
const REWEIGHT_PASSES: usize = 4;

/// Poisson fit of a coincidence scan on rates `counts/duration`.
///
/// The first pass weights by the observed counts, `max(counts, 1)/duration²`.
/// Later passes weight by the fitted model's expected counts instead; at the
/// fixed point this is the Poisson maximum-likelihood fit, which avoids the
/// upward visibility bias of data weighting at low counts.
pub fn fit_scan(data: &ScanData, guess: &ScanFitModel, opts: &FitOptions) -> Result<FitResult> {
    if data.counts.iter().all(|&c| c == 0) {
        return Err(Error::Fit("scan has no counts".into()));
    }
    let (x, y) = (&data.positions_mm, data.rates());
    let mut result = fit_profile(x, &y, &data.rate_errors(), guess, opts)?;
    for _ in 0..REWEIGHT_PASSES {
        if !result.converged {
            break;
        }
        let err: Vec<f64> = x
            .iter()
            .zip(&data.durations_s)
            .map(|(&xi, &t)| (result.model.eval(xi) * t).max(1.0).sqrt() / t)
            .collect();
        let next = fit_profile(x, &y, &err, &result.model, opts)?;
        let settled = (next.model.visibility - result.model.visibility).abs() < 1e-9;
        result = next;
        if settled {
            break;
        }
    }
    Ok(result)
}

/// [`fit_scan`] started from [`ScanFitModel::estimate`].
pub fn fit_scan_auto(data: &ScanData, opts: &FitOptions) -> Result<FitResult> {
    if data.counts.iter().all(|&c| c == 0) {
        return Err(Error::Fit("scan has no counts".into()));
    }
    let mut guess = ScanFitModel::estimate(&data.positions_mm, &data.rates())?;
    if let Some(b) = opts.fixed_background {
        guess.background = b;
    }
    fit_scan(data, &guess, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K0: f64 = 22.61946710584651;

    fn truth(v: f64) -> ScanFitModel {
        ScanFitModel {
            amplitude: 180.0,
            center_mm: 0.013,
            envelope_width_mm: 0.4,
            fringe_wavenumber: K0,
            fringe_phase: 0.3,
            visibility: v,
            background: 6.0,
        }
    }

    fn sample(m: &ScanFitModel, n: usize, half: f64) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n)
            .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
            .collect();
        let y = x.iter().map(|&x| m.eval(x)).collect();
        (x, y)
    }

    #[test]
    fn noiseless_round_trip_six_digits() {
        let t = truth(0.5);
        let (x, y) = sample(&t, 481, 1.2);
        let err = vec![1.0; x.len()];
        let guess = ScanFitModel::estimate(&x, &y).unwrap();
        let fit = fit_profile(&x, &y, &err, &guess, &FitOptions::default()).unwrap();
        assert!(fit.converged, "{}", fit.status);
        let m = fit.model;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(m.amplitude, t.amplitude) < 1e-6);
        assert!((m.center_mm - t.center_mm).abs() < 1e-9);
        assert!(rel(m.envelope_width_mm, t.envelope_width_mm) < 1e-6);
        assert!(rel(m.fringe_wavenumber, t.fringe_wavenumber) < 1e-6);
        assert!((m.fringe_phase - t.fringe_phase).abs() < 1e-6);
        assert!(rel(m.visibility, t.visibility) < 1e-6);
        assert!(rel(m.background, t.background) < 1e-6);
    }

    #[test]
    fn fringe_free_profile_gives_zero_visibility() {
        let t = truth(0.0);
        let (x, y) = sample(&t, 241, 1.2);
        let err = vec![1.0; x.len()];
        let mut guess = t;
        guess.visibility = 0.2;
        let fit = fit_profile(&x, &y, &err, &guess, &FitOptions::default()).unwrap();
        assert!(fit.model.visibility < 1e-6, "{}", fit.model.visibility);
        assert!(fit.errors.unwrap().visibility >= 0.0);
    }

    #[test]
    fn rejects_short_or_narrow_scans() {
        let t = truth(0.5);
        let (x, y) = sample(&t, 9, 1.0);
        assert!(fit_profile(&x, &y, &[1.0; 9], &t, &FitOptions::default()).is_err());
        let (x, y) = sample(&t, 50, 0.2);
        assert!(fit_profile(&x, &y, &vec![1.0; 50], &t, &FitOptions::default()).is_err());
    }

    #[test]
    fn visibility_never_leaves_unit_interval() {
        let t = truth(1.0);
        let (x, y) = sample(&t, 241, 1.0);
        let fit = fit_profile(&x, &y, &vec![1.0; 241], &t, &FitOptions::default()).unwrap();
        assert!(fit.model.visibility <= 1.0 && fit.model.visibility > 0.999);
    }

    #[test]
    fn json_field_names_are_stable() {
        let t = truth(0.4);
        let (x, y) = sample(&t, 200, 1.0);
        let fit = fit_profile(&x, &y, &vec![1.0; 200], &t, &FitOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fit.to_json().unwrap()).unwrap();
        for key in [
            "schema_version",
            "model",
            "errors",
            "chi_squared",
            "degrees_of_freedom",
            "reduced_chi_squared",
            "iterations",
            "converged",
            "status",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in [
            "amplitude",
            "center_mm",
            "envelope_width_mm",
            "fringe_wavenumber",
            "fringe_phase",
            "visibility",
            "background",
        ] {
            assert!(v["model"].get(key).is_some(), "missing model.{key}");
        }
        let back: FitResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, fit);
    }
}
