//! Stacked estimating equations and their sandwich covariance.
//!
//! An [`EstimatingSystem`] supplies each subject's contribution `φ_i(θ)`.
//! [`solve_system`] finds the root of `Σ_i φ_i(θ)` with damped Newton steps on
//! a central-difference Jacobian, and [`sandwich`] returns
//! `n⁻¹ A⁻¹ B A⁻ᵀ` with `A = n⁻¹ Σ ∂φ_i/∂θ` and `B = n⁻¹ Σ φ_i φ_iᵀ`.
//!
//! Row `j` of the system is paired with parameter `j`. A block order, when
//! supplied, lists index sets that can be solved one after another because
//! later blocks never feed back into earlier ones.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_JAC_STEP: f64 = 1e-6;
const MAX_HALVINGS: usize = 20;

pub trait EstimatingSystem: Sync {
    /// Number of parameters (and equations).
    fn dim(&self) -> usize;

    /// Number of subjects.
    fn n(&self) -> usize;

    /// Writes subject `i`'s contribution `φ_i(θ)` into `out`.
    fn contribution(&self, theta: &[f64], i: usize, out: &mut [f64]);

    /// Optional block-triangular solve order.
    fn solve_order(&self) -> Option<Vec<Vec<usize>>> {
        None
    }
}

/// An [`EstimatingSystem`] defined by a closure.
pub struct FnSystem<F> {
    dim: usize,
    n: usize,
    phi: F,
    order: Option<Vec<Vec<usize>>>,
}

impl<F> FnSystem<F>
where
    F: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, n: usize, phi: F) -> Self {
        Self {
            dim,
            n,
            phi,
            order: None,
        }
    }

    pub fn with_solve_order(mut self, order: Vec<Vec<usize>>) -> Self {
        self.order = Some(order);
        self
    }
}

impl<F> EstimatingSystem for FnSystem<F>
where
    F: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn n(&self) -> usize {
        self.n
    }

    fn contribution(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        (self.phi)(theta, i, out)
    }

    fn solve_order(&self) -> Option<Vec<Vec<usize>>> {
        self.order.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub jac_step: f64,
    /// Use the system's block order when it has one.
    pub use_blocks: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            jac_step: DEFAULT_JAC_STEP,
            use_blocks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// max-abs of the summed equations at `theta`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SandwichResult {
    pub theta_hat: Vec<f64>,
    pub a_n: DMatrix<f64>,
    pub b_n: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SandwichResult {
    pub fn variance(&self, j: usize) -> f64 {
        self.covariance[(j, j)]
    }

    /// Variance of `Σ c_j θ_j`.
    pub fn contrast_variance(&self, c: &[(usize, f64)]) -> f64 {
        let mut v = 0.0;
        for &(a, ca) in c {
            for &(b, cb) in c {
                v += ca * cb * self.covariance[(a, b)];
            }
        }
        v.max(0.0)
    }
}

/// `Σ_i φ_i(θ)`.
pub fn equation_sums<S: EstimatingSystem + ?Sized>(sys: &S, theta: &[f64]) -> Vec<f64> {
    let q = sys.dim();
    let mut total = vec![0.0; q];
    let mut buf = vec![0.0; q];
    for i in 0..sys.n() {
        sys.contribution(theta, i, &mut buf);
        for (t, b) in total.iter_mut().zip(&buf) {
            *t += b;
        }
    }
    total
}

fn step_size(jac_step: f64, theta_j: f64) -> f64 {
    jac_step.max(jac_step * theta_j.abs())
}

/// Central-difference Jacobian of the summed equations, restricted to `rows`
/// and `cols`.
fn summed_jacobian<S: EstimatingSystem + ?Sized>(
    sys: &S,
    theta: &[f64],
    jac_step: f64,
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows.len(), cols.len());
    let mut work = theta.to_vec();
    for (c, &j) in cols.iter().enumerate() {
        let h = step_size(jac_step, theta[j]);
        work[j] = theta[j] + h;
        let plus = equation_sums(sys, &work);
        work[j] = theta[j] - h;
        let minus = equation_sums(sys, &work);
        work[j] = theta[j];
        for (r, &k) in rows.iter().enumerate() {
            jac[(r, c)] = (plus[k] - minus[k]) / (2.0 * h);
        }
    }
    jac
}

fn max_abs(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&k| v[k].abs()).fold(0.0, f64::max)
}

fn norm2(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&k| v[k] * v[k]).sum::<f64>().sqrt()
}

/// Damped Newton on the block `idx`, holding the other parameters fixed.
fn newton_block<S: EstimatingSystem + ?Sized>(
    sys: &S,
    theta: &mut [f64],
    idx: &[usize],
    opts: &SolveOptions,
) -> Result<usize> {
    let mut sums = equation_sums(sys, theta);
    for iter in 0..=opts.max_iter {
        if !idx.iter().all(|&k| sums[k].is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: f64::NAN,
            });
        }
        if max_abs(&sums, idx) <= opts.tol {
            return Ok(iter);
        }
        if iter == opts.max_iter {
            break;
        }
        let jac = summed_jacobian(sys, theta, opts.jac_step, idx, idx);
        let rhs: Vec<f64> = idx.iter().map(|&k| -sums[k]).collect();
        let step = linalg::solve(&jac, &rhs).ok_or(Error::SingularJacobian)?;

        let current = norm2(&sums, idx);
        let base: Vec<f64> = idx.iter().map(|&k| theta[k]).collect();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for (c, &k) in idx.iter().enumerate() {
                theta[k] = base[c] + scale * step[c];
            }
            let trial = equation_sums(sys, theta);
            let trial_norm = norm2(&trial, idx);
            if trial_norm.is_finite() && trial_norm < current {
                sums = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            for (c, &k) in idx.iter().enumerate() {
                theta[k] = base[c];
            }
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                residual: max_abs(&sums, idx),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: max_abs(&sums, idx),
    })
}

/// Finds `θ̂` with `max_j |Σ_i φ_ij(θ̂)| <= tol`.
pub fn solve_system<S: EstimatingSystem + ?Sized>(
    sys: &S,
    theta0: &[f64],
    opts: &SolveOptions,
) -> Result<Solution> {
    let q = sys.dim();
    if theta0.len() != q {
        return Err(Error::InvalidArgument(format!(
            "theta0 has length {}, system has dimension {q}",
            theta0.len()
        )));
    }
    if !theta0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("theta0 must be finite".into()));
    }
    if !(opts.tol > 0.0) || !(opts.jac_step > 0.0) {
        return Err(Error::InvalidArgument("tol and jac_step must be positive".into()));
    }
    let blocks = match sys.solve_order() {
        Some(order) if opts.use_blocks => order,
        _ => vec![(0..q).collect()],
    };
    let mut theta = theta0.to_vec();
    let mut iterations = 0;
    for block in &blocks {
        iterations += newton_block(sys, &mut theta, block, opts)?;
    }
    let all: Vec<usize> = (0..q).collect();
    let residual = max_abs(&equation_sums(sys, &theta), &all);
    if residual > opts.tol {
        // A later block can only disturb an earlier one if the order is not
        // actually triangular; finish with a joint pass.
        iterations += newton_block(sys, &mut theta, &all, opts)?;
    }
    let residual = max_abs(&equation_sums(sys, &theta), &all);
    Ok(Solution {
        theta,
        iterations,
        residual,
    })
}

/// Sandwich covariance at `theta_hat`.
pub fn sandwich<S: EstimatingSystem + ?Sized>(
    sys: &S,
    theta_hat: &[f64],
    jac_step: f64,
) -> Result<SandwichResult> {
    if !(jac_step > 0.0) {
        return Err(Error::InvalidArgument("jac_step must be positive".into()));
    }
    let q = sys.dim();
    let n = sys.n() as f64;
    let all: Vec<usize> = (0..q).collect();
    let a_n = summed_jacobian(sys, theta_hat, jac_step, &all, &all) / n;

    let mut b_n = DMatrix::zeros(q, q);
    let mut buf = vec![0.0; q];
    for i in 0..sys.n() {
        sys.contribution(theta_hat, i, &mut buf);
        for a in 0..q {
            for b in a..q {
                b_n[(a, b)] += buf[a] * buf[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            b_n[(a, b)] = b_n[(b, a)];
        }
    }
    b_n /= n;

    let a_inv = linalg::inverse(&a_n).ok_or(Error::SingularJacobian)?;
    let raw = &a_inv * &b_n * a_inv.transpose() / n;
    let covariance = (&raw + raw.transpose()) * 0.5;
    Ok(SandwichResult {
        theta_hat: theta_hat.to_vec(),
        a_n,
        b_n,
        covariance,
        converged: true,
        iterations: 0,
    })
}

/// Solves and then computes the sandwich in one call.
pub fn fit<S: EstimatingSystem + ?Sized>(
    sys: &S,
    theta0: &[f64],
    opts: &SolveOptions,
) -> Result<SandwichResult> {
    let sol = solve_system(sys, theta0, opts)?;
    let mut res = sandwich(sys, &sol.theta, opts.jac_step)?;
    res.iterations = sol.iterations;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_system(x: &[f64]) -> FnSystem<impl Fn(&[f64], usize, &mut [f64]) + Sync + '_> {
        FnSystem::new(1, x.len(), move |t: &[f64], i: usize, out: &mut [f64]| {
            out[0] = x[i] - t[0]
        })
    }

    #[test]
    fn sample_mean_root_and_variance() {
        let x = [1.0, 2.0, 3.0];
        let sys = mean_system(&x);
        let sol = solve_system(&sys, &[0.0], &SolveOptions::default()).unwrap();
        assert!((sol.theta[0] - 2.0).abs() < 1e-10);
        // linear system: one Newton step
        assert_eq!(sol.iterations, 1);
        let s = sandwich(&sys, &sol.theta, DEFAULT_JAC_STEP).unwrap();
        assert!((s.a_n[(0, 0)] + 1.0).abs() < 1e-6);
        assert!((s.b_n[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.covariance[(0, 0)] - 2.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_intercept_only() {
        let z = [1.0, 1.0, 1.0, 0.0];
        let sys = FnSystem::new(1, 4, |t: &[f64], i: usize, out: &mut [f64]| {
            let e = 1.0 / (1.0 + (-t[0]).exp());
            out[0] = z[i] - e;
        });
        let sol = solve_system(&sys, &[0.0], &SolveOptions::default()).unwrap();
        assert!((sol.theta[0] - 3f64.ln()).abs() < 1e-9);
        assert!(sol.residual <= DEFAULT_TOL);
    }

    #[test]
    fn blocks_match_joint_solve() {
        // θ0 is a mean, θ1 the mean of squared deviations around θ0.
        let x = [0.3, 1.7, 2.2, 4.1, -0.5];
        let sys = FnSystem::new(2, x.len(), |t: &[f64], i: usize, out: &mut [f64]| {
            out[0] = x[i] - t[0];
            out[1] = (x[i] - t[0]).powi(2) - t[1];
        })
        .with_solve_order(vec![vec![0], vec![1]]);
        let opts = SolveOptions::default();
        let blocked = solve_system(&sys, &[0.0, 1.0], &opts).unwrap();
        let joint = solve_system(
            &sys,
            &[0.0, 1.0],
            &SolveOptions {
                use_blocks: false,
                ..opts
            },
        )
        .unwrap();
        for j in 0..2 {
            assert!((blocked.theta[j] - joint.theta[j]).abs() <= 10.0 * opts.tol);
        }
    }

    #[test]
    fn reports_non_convergence() {
        // Σ (1 + θ²) has no root.
        let sys = FnSystem::new(1, 2, |t: &[f64], _i: usize, out: &mut [f64]| {
            out[0] = 1.0 + t[0] * t[0]
        });
        let err = solve_system(&sys, &[0.5], &SolveOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::NonConvergence { .. } | Error::SingularJacobian
        ));
    }

    #[test]
    fn singular_jacobian() {
        let sys = FnSystem::new(2, 3, |t: &[f64], _i: usize, out: &mut [f64]| {
            out[0] = t[0] + t[1] - 1.0;
            out[1] = 2.0 * (t[0] + t[1]) - 1.0;
        });
        assert!(matches!(
            solve_system(&sys, &[0.0, 0.0], &SolveOptions::default()),
            Err(Error::SingularJacobian)
        ));
    }

    #[test]
    fn covariance_is_symmetric_psd_diagonal() {
        let x = [0.3, 1.7, 2.2, 4.1, -0.5, 0.9];
        let y = [1.0, 2.5, 2.0, 5.5, 0.1, 1.2];
        // simple regression y = a + b x
        let sys = FnSystem::new(2, x.len(), |t: &[f64], i: usize, out: &mut [f64]| {
            let r = y[i] - t[0] - t[1] * x[i];
            out[0] = r;
            out[1] = r * x[i];
        });
        let res = fit(&sys, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        let c = &res.covariance;
        assert!((c[(0, 1)] - c[(1, 0)]).abs() <= 1e-8 * c[(0, 1)].abs().max(1e-300));
        assert!(c[(0, 0)] >= 0.0 && c[(1, 1)] >= 0.0);
        // B_n is PSD
        let eig = res.b_n.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-12);
    }
}
