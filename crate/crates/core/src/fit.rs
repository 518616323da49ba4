//! Damped least squares (Levenberg–Marquardt) for the small parameter
//! counts used by the saturation and lifetime fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Weighted residuals `√w·(y − model)`.
    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Jacobian of [`residuals`](Self::residuals). Defaults to central differences.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for k in 0..self.n_params() {
            numeric_column(self, p, k, jac);
        }
    }

    fn feasible(&self, _p: &[f64]) -> bool {
        true
    }
}

/// Fills column `k` of `jac` by central differences.
pub fn numeric_column<P: LeastSquares + ?Sized>(problem: &P, p: &[f64], k: usize, jac: &mut DMatrix<f64>) {
    let h = 1e-6 * p[k].abs().max(1.0);
    let n = problem.n_residuals();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut q = p.to_vec();
    q[k] = p[k] + h;
    problem.residuals(&q, &mut plus);
    q[k] = p[k] - h;
    problem.residuals(&q, &mut minus);
    for i in 0..n {
        jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when every parameter moves by less than this relative step.
    pub rel_step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_step_tol: 1e-8,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `(JᵀJ)⁻¹` at the solution; the parameter covariance when residuals
    /// are weighted by inverse variances.
    pub covariance: DMatrix<f64>,
    /// Sum of squared weighted residuals.
    pub cost: f64,
    pub iterations: usize,
}

impl LmOutcome {
    pub fn std_err(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(problem: &P, p0: &[f64], opts: LmOptions) -> Result<LmOutcome> {
    let np = problem.n_params();
    let nr = problem.n_residuals();
    if p0.len() != np {
        return Err(Error::Fit(format!("expected {np} initial parameters, got {}", p0.len())));
    }
    if nr < np {
        return Err(Error::Fit(format!("{nr} residuals cannot constrain {np} parameters")));
    }
    if !problem.feasible(p0) {
        return Err(Error::Fit(format!("initial parameters {p0:?} are infeasible")));
    }
    let mut p = p0.to_vec();
    let mut r = vec![0.0; nr];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residuals at the initial point".into()));
    }
    let mut jac = DMatrix::zeros(nr, np);
    let mut lambda = opts.initial_lambda;
    let mut trial = vec![0.0; nr];

    for iter in 1..=opts.max_iterations {
        problem.jacobian(&p, &mut jac);
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let max_diag = (0..np).map(|k| a[(k, k)]).fold(0.0f64, f64::max);
        if max_diag <= 0.0 || !max_diag.is_finite() {
            return Err(Error::Fit("jacobian is zero or non-finite".into()));
        }
        loop {
            let mut damped = a.clone();
            for k in 0..np {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12 * max_diag);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&g)));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Err(Error::Fit(format!("normal equations singular after {iter} iterations")));
                }
                continue;
            };
            let candidate: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let small_step = p
                .iter()
                .zip(step.iter())
                .all(|(x, d)| d.abs() <= opts.rel_step_tol * (x.abs() + opts.rel_step_tol));
            if problem.feasible(&candidate) {
                problem.residuals(&candidate, &mut trial);
                let new_cost = cost_of(&trial);
                if new_cost.is_finite() && new_cost <= cost {
                    p = candidate;
                    std::mem::swap(&mut r, &mut trial);
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    if small_step {
                        return finish(problem, p, cost, iter);
                    }
                    break;
                }
            }
            if small_step {
                // Already at a minimum to within tolerance.
                return finish(problem, p, cost, iter);
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                return Err(Error::Fit(format!(
                    "no descent direction after {iter} iterations (cost {cost:.6e}, params {p:?})"
                )));
            }
        }
    }
    Err(Error::Fit(format!(
        "did not converge in {} iterations (cost {cost:.6e}, params {p:?})",
        opts.max_iterations
    )))
}

fn finish<P: LeastSquares + ?Sized>(problem: &P, params: Vec<f64>, cost: f64, iterations: usize) -> Result<LmOutcome> {
    let mut jac = DMatrix::zeros(problem.n_residuals(), problem.n_params());
    problem.jacobian(&params, &mut jac);
    let a = jac.transpose() * &jac;
    let covariance = a
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular information matrix at the solution".into()))?;
    Ok(LmOutcome {
        params,
        covariance,
        cost,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for i in 0..self.x.len() {
                out[i] = self.y[i] - (p[0] + p[1] * self.x[i]);
            }
        }
    }

    struct Decay {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.t.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for i in 0..self.t.len() {
                out[i] = self.y[i] - p[0] * (-self.t[i] / p[1]).exp();
            }
        }
        fn feasible(&self, p: &[f64]) -> bool {
            p[1] > 0.0
        }
    }

    #[test]
    fn recovers_line_exactly() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y = x.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = levenberg_marquardt(&Line { x, y }, &[0.0, 0.0], LmOptions::default()).unwrap();
        assert!((fit.params[0] - 3.0).abs() < 1e-9);
        assert!((fit.params[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 10.0).collect();
        let y = t.iter().map(|t| 1000.0 * (-t / 271.0).exp()).collect();
        let fit = levenberg_marquardt(&Decay { t, y }, &[500.0, 100.0], LmOptions::default()).unwrap();
        assert!((fit.params[1] - 271.0).abs() < 1e-6, "{:?}", fit.params);
    }

    #[test]
    fn rejects_underdetermined() {
        let p = Line {
            x: vec![1.0],
            y: vec![1.0],
        };
        assert!(levenberg_marquardt(&p, &[0.0, 0.0], LmOptions::default()).is_err());
    }
}
