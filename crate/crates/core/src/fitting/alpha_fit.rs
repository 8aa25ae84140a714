use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, LeastSquares, LmOptions};
use crate::model::laws::visibility;
use crate::model::VisibilityPoint;
use crate::{Error, Result};

/// Turbulence strength recovered from a visibility campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub std_error: f64,
    /// One-standard-error interval, clipped at zero from below.
    pub ci_low: f64,
    pub ci_high: f64,
    pub chi_squared: f64,
    pub degrees_of_freedom: usize,
    pub converged: bool,
}

struct Campaign {
    d2: Vec<f64>,
    g: Vec<f64>,
    v: Vec<f64>,
    sigma: Vec<f64>,
    /// `2(k/k₀)²`.
    scale: f64,
}

impl Campaign {
    fn model(&self, i: usize, alpha: f64) -> f64 {
        self.g[i] * (-alpha * self.d2[i] / self.scale).exp()
    }
}

impl LeastSquares for Campaign {
    fn n_params(&self) -> usize {
        1
    }

    fn n_residuals(&self) -> usize {
        self.v.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, r) in out.iter_mut().enumerate() {
            *r = (self.model(i, p[0]) - self.v[i]) / self.sigma[i];
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for i in 0..self.v.len() {
            jac[(i, 0)] = -self.model(i, p[0]) * self.d2[i] / self.scale / self.sigma[i];
        }
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
    }
}

/// Weighted least-squares fit of the visibility law over `α`, with the
/// ceiling `g` looked up per configuration name in `ceilings`.
pub fn fit_alpha(
    points: &[VisibilityPoint],
    ceilings: &BTreeMap<String, f64>,
    k: f64,
    k0: f64,
) -> Result<AlphaFit> {
    if points.iter().all(|p| p.effective_distance_mm == 0.0) {
        return Err(Error::Fit(
            "alpha is unidentifiable when every point has d = 0".into(),
        ));
    }
    let mut distinct: Vec<f64> = points
        .iter()
        .map(|p| p.effective_distance_mm.abs())
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct |d|, got {}",
            distinct.len()
        )));
    }

    let mut campaign = Campaign {
        d2: vec![],
        g: vec![],
        v: vec![],
        sigma: vec![],
        scale: 2.0 * (k / k0).powi(2),
    };
    for p in points {
        let g = *ceilings.get(&p.label.configuration).ok_or_else(|| {
            Error::Config(format!(
                "no visibility ceiling for configuration `{}`",
                p.label.configuration
            ))
        })?;
        if !(p.sigma > 0.0) {
            return Err(Error::Fit(format!(
                "point at d = {} mm has no positive error bar",
                p.effective_distance_mm
            )));
        }
        campaign.d2.push(p.effective_distance_mm.powi(2));
        campaign.g.push(g);
        campaign.v.push(p.visibility);
        campaign.sigma.push(p.sigma);
    }

    // Start from the mean single-point inversion of the law.
    let inversions: Vec<f64> = (0..campaign.v.len())
        .filter(|&i| campaign.d2[i] > 0.0 && campaign.v[i] > 0.0)
        .map(|i| (-(campaign.v[i] / campaign.g[i]).ln() * campaign.scale / campaign.d2[i]).max(0.0))
        .collect();
    let start = if inversions.is_empty() {
        1.0
    } else {
        inversions.iter().sum::<f64>() / inversions.len() as f64
    };

    let out = lm::minimize(&campaign, &[start], &LmOptions::default());
    let alpha = out.params[0];
    let std_error = out
        .covariance
        .as_ref()
        .map_or(f64::INFINITY, |c| c[(0, 0)].max(0.0).sqrt());
    Ok(AlphaFit {
        alpha,
        std_error,
        ci_low: (alpha - std_error).max(0.0),
        ci_high: alpha + std_error,
        chi_squared: out.cost,
        degrees_of_freedom: points.len() - 1,
        converged: out.status.converged(),
    })
}

/// Writes `d_mm,V,sigma_V,V_model` rows, the model evaluated at `alpha`.
pub fn write_campaign_csv<W: Write>(
    out: W,
    points: &[VisibilityPoint],
    ceilings: &BTreeMap<String, f64>,
    alpha: f64,
    k: f64,
    k0: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d_mm", "V", "sigma_V", "V_model"])?;
    for p in points {
        let g = *ceilings.get(&p.label.configuration).ok_or_else(|| {
            Error::Config(format!(
                "no visibility ceiling for `{}`",
                p.label.configuration
            ))
        })?;
        let model = visibility(g, alpha, p.effective_distance_mm, k, k0)?;
        w.write_record([
            p.effective_distance_mm.to_string(),
            p.visibility.to_string(),
            p.sigma.to_string(),
            model.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
