//! Damped least-squares (Levenberg-Marquardt) minimizer used by the
//! histogram fits.
//!
//! Steps solve `(J^T J + lambda diag(J^T J)) delta = -J^T r`; only steps
//! that lower the weighted cost are accepted, so the cost sequence is
//! monotone by construction. Convergence follows the usual two-criterion
//! rule: relative parameter step below `xtol` or relative cost decrease
//! below `ftol` on an accepted step.

use nalgebra::{DMatrix, DVector};

pub(crate) struct LmOptions {
    pub max_iter: usize,
    /// Relative parameter-step convergence threshold.
    pub xtol: f64,
    /// Relative cost-change convergence threshold.
    pub ftol: f64,
    pub lambda_init: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            xtol: 1e-8,
            ftol: 1e-12,
            lambda_init: 1e-3,
        }
    }
}

/// The weighted residual problem to minimize.
pub(crate) trait LeastSquares {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    /// r_i(p), length `n_residuals`.
    fn residuals(&self, p: &[f64], out: &mut DVector<f64>);
    /// J_ij = d r_i / d p_j.
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>);
    /// Reject parameter vectors that violate the model invariants.
    fn feasible(&self, p: &[f64]) -> bool;
    fn param_names(&self) -> &'static [&'static str];
}

#[derive(Debug)]
pub(crate) enum LmError {
    /// Normal matrix singular at the solution; the string names the
    /// parameter combination spanning the null space.
    Singular { combination: String },
    /// The starting point violates the model invariants.
    InfeasibleStart,
}

#[derive(Debug)]
pub(crate) struct LmFit {
    pub params: Vec<f64>,
    /// Covariance of the parameters: (J^T J)^-1 scaled by reduced chi2.
    pub covariance: DMatrix<f64>,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted cost after each accepted step (starting cost first).
    pub cost_history: Vec<f64>,
}

pub(crate) fn minimize(
    problem: &dyn LeastSquares,
    p0: &[f64],
    opts: &LmOptions,
) -> Result<LmFit, LmError> {
    let (m, k) = (problem.n_residuals(), problem.n_params());
    if !problem.feasible(p0) {
        return Err(LmError::InfeasibleStart);
    }

    let mut p = DVector::from_column_slice(p0);
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, k);
    problem.residuals(p.as_slice(), &mut r);
    let mut cost = r.norm_squared();
    let mut cost_history = vec![cost];

    let mut lambda = opts.lambda_init;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for iter in 0..opts.max_iter {
        iterations = iter + 1;
        problem.jacobian(p.as_slice(), &mut jac);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;

        loop {
            let mut damped = jtj.clone();
            for i in 0..k {
                let d = jtj[(i, i)];
                damped[(i, i)] = d + lambda * if d > 0.0 { d } else { 1.0 };
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-&grad)));
            let accept = match step {
                Some(delta) => {
                    let trial = &p + &delta;
                    if problem.feasible(trial.as_slice()) {
                        problem.residuals(trial.as_slice(), &mut r);
                        let new_cost = r.norm_squared();
                        if new_cost.is_finite() && new_cost < cost {
                            // relative step and cost-change convergence
                            let small_step = (0..k).all(|i| {
                                delta[i].abs() <= opts.xtol * (p[i].abs() + opts.xtol)
                            });
                            let small_decrease = cost - new_cost <= opts.ftol * cost.max(1e-300);
                            p = trial;
                            cost = new_cost;
                            cost_history.push(cost);
                            lambda = (lambda / 10.0).max(1e-12);
                            if small_step || small_decrease {
                                converged = true;
                                break 'outer;
                            }
                            true
                        } else {
                            false
                        }
                    } else {
                        false
                    }
                }
                None => false,
            };
            if accept {
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // cannot improve in any damped direction: treat the
                // current point as final
                converged = cost_history.len() > 1;
                break 'outer;
            }
        }
    }

    // restore residuals/jacobian at the final point
    problem.residuals(p.as_slice(), &mut r);
    problem.jacobian(p.as_slice(), &mut jac);
    let jtj = jac.transpose() * &jac;
    let dof = (m.saturating_sub(k)).max(1) as f64;
    let reduced_chi2 = cost / dof;

    let covariance = match jtj.clone().try_inverse() {
        Some(inv) => inv * reduced_chi2,
        None => {
            return Err(LmError::Singular {
                combination: null_space_combination(&jtj, problem.param_names()),
            })
        }
    };

    Ok(LmFit {
        params: p.as_slice().to_vec(),
        covariance,
        reduced_chi2,
        iterations,
        converged,
        cost_history,
    })
}

/// Human-readable description of the flattest direction of the normal
/// matrix, e.g. "0.71*sigma_ps - 0.71*tau_ps".
fn null_space_combination(jtj: &DMatrix<f64>, names: &[&str]) -> String {
    let eig = jtj.clone().symmetric_eigen();
    let mut idx = 0;
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i].abs() < eig.eigenvalues[idx].abs() {
            idx = i;
        }
    }
    let v = eig.eigenvectors.column(idx);
    let mut parts = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if v[i].abs() > 0.1 {
            parts.push(format!("{:+.2}*{}", v[i], name));
        }
    }
    if parts.is_empty() {
        "unidentifiable parameter combination".into()
    } else {
        parts.join(" ")
    }
}
