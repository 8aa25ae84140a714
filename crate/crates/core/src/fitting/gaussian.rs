use super::lm::{minimize, LeastSquares, LmOptions};
use crate::{Error, Result};

/// Fit of `A·exp[-(x − μ)²/2σ²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub sigma_error: f64,
    pub converged: bool,
}

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    err: &'a [f64],
}

impl LeastSquares for Problem<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (a, mu, s) = (p[0].exp(), p[1], p[2].exp());
        for i in 0..self.x.len() {
            let u = (self.x[i] - mu) / s;
            out[i] = (a * (-0.5 * u * u).exp() - self.y[i]) / self.err[i];
        }
    }
}

/// Weighted Gaussian fit, started from the sample moments.
pub fn fit_gaussian(x: &[f64], y: &[f64], err: &[f64]) -> Result<GaussianFit> {
    if x.len() < 4 || x.len() != y.len() || y.len() != err.len() {
        return Err(Error::Fit("gaussian fit needs >= 4 matched samples".into()));
    }
    let total: f64 = y.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Fit(
            "gaussian fit of a profile with no positive mass".into(),
        ));
    }
    let mean = x.iter().zip(y).map(|(x, y)| x * y).sum::<f64>() / total;
    let var = x
        .iter()
        .zip(y)
        .map(|(x, y)| (x - mean).powi(2) * y)
        .sum::<f64>()
        / total;
    let peak = y.iter().cloned().fold(f64::MIN, f64::max);
    let start = [peak.ln(), mean, var.sqrt().max(1e-300).ln()];
    let out = minimize(&Problem { x, y, err }, &start, &LmOptions::default());
    let sigma = out.params[2].exp();
    let sigma_error = out
        .covariance
        .as_ref()
        .map(|c| sigma * c[(2, 2)].max(0.0).sqrt())
        .unwrap_or(f64::NAN);
    Ok(GaussianFit {
        amplitude: out.params[0].exp(),
        center: out.params[1],
        sigma,
        sigma_error,
        converged: out.status.converged(),
    })
}
