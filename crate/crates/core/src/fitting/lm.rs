//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

/// A weighted least-squares problem: minimise `Σ rᵢ(p)²` where each
/// residual is already divided by its standard deviation.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Jacobian `∂rᵢ/∂pⱼ`. Defaults to central finite differences.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.n_residuals();
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1e-6);
            q[j] = p[j] + h;
            self.residuals(&q, &mut plus);
            q[j] = p[j] - h;
            self.residuals(&q, &mut minus);
            q[j] = p[j];
            for i in 0..m {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
    }

    /// Maps a trial point back into the feasible set.
    fn project(&self, _p: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged once an accepted step lowers the cost by less than this
    /// fraction.
    pub rel_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            rel_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmStatus {
    RelativeReduction,
    ZeroResidual,
    /// Damping saturated at a stationary point.
    Stationary,
    MaxIterations,
    NonFinite,
}

impl LmStatus {
    pub fn converged(&self) -> bool {
        matches!(
            self,
            LmStatus::RelativeReduction | LmStatus::ZeroResidual | LmStatus::Stationary
        )
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `Σ rᵢ²` at `params`.
    pub cost: f64,
    /// `(JᵀJ)⁻¹` at `params`, when it is invertible.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub status: LmStatus,
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

pub fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    start: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = 1e-3;
    let mut status = LmStatus::MaxIterations;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    if !cost.is_finite() {
        status = LmStatus::NonFinite;
    } else if cost == 0.0 {
        status = LmStatus::ZeroResidual;
    } else {
        'outer: while iterations < opts.max_iterations {
            iterations += 1;
            problem.jacobian(&p, &mut jac);
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let grad = &jt * DVector::from_column_slice(&r);
            loop {
                let mut a = jtj.clone();
                for j in 0..n {
                    let d = jtj[(j, j)].max(1e-12);
                    a[(j, j)] += lambda * d;
                }
                let step = match a.cholesky() {
                    Some(ch) => ch.solve(&(-&grad)),
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e20 {
                            status = LmStatus::Stationary;
                            break 'outer;
                        }
                        continue;
                    }
                };
                for j in 0..n {
                    trial[j] = p[j] + step[j];
                }
                problem.project(&mut trial);
                problem.residuals(&trial, &mut r_trial);
                let c_trial = cost_of(&r_trial);
                if c_trial.is_finite() && c_trial <= cost {
                    let reduction = cost - c_trial;
                    std::mem::swap(&mut p, &mut trial);
                    std::mem::swap(&mut r, &mut r_trial);
                    cost = c_trial;
                    lambda = (lambda * 0.3).max(1e-12);
                    if cost == 0.0 {
                        status = LmStatus::ZeroResidual;
                        break 'outer;
                    }
                    if reduction <= opts.rel_tolerance * (cost + reduction) {
                        status = LmStatus::RelativeReduction;
                        break 'outer;
                    }
                    break;
                }
                lambda *= 4.0;
                if lambda > 1e20 {
                    status = LmStatus::Stationary;
                    break 'outer;
                }
            }
        }
    }

    let covariance = if status == LmStatus::NonFinite {
        None
    } else {
        problem.jacobian(&p, &mut jac);
        let jtj = jac.transpose() * &jac;
        jtj.try_inverse()
    };
    LmOutcome {
        params: p,
        cost,
        covariance,
        iterations,
        status,
    }
}
