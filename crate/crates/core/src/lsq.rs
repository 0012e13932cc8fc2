//! Levenberg–Marquardt nonlinear least squares with a central-difference
//! Jacobian and Marquardt diagonal scaling.
//!
//! Difference steps assume parameters of order one; callers rescale.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions<T> {
    pub max_iterations: usize,
    /// Converged once every |Δpᵢ| ≤ tol·(|pᵢ| + tol).
    pub step_tolerance: T,
    /// Converged once an accepted step lowers the SSR by ≤ this fraction.
    pub cost_tolerance: T,
    pub initial_damping: T,
}

impl<T: Scalar> Default for LmOptions<T> {
    fn default() -> Self {
        LmOptions { max_iterations: 200, step_tolerance: lit(1e-10), cost_tolerance: lit(1e-10), initial_damping: lit(1e-3) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit<T> {
    pub params: Vec<T>,
    /// √diag of s²(JᵀJ)⁻¹ with s² = SSR/(n − p).
    pub stderr: Vec<T>,
    pub ssr: T,
    pub rms_residual: T,
    pub iterations: usize,
}

fn ssr<T: Scalar>(model: &impl Fn(T, &[T]) -> T, x: &[T], y: &[T], p: &[T]) -> T {
    x.iter().zip(y).map(|(&xi, &yi)| {
        let r = yi - model(xi, p);
        r * r
    }).sum()
}

fn jacobian<T: Scalar>(model: &impl Fn(T, &[T]) -> T, x: &[T], p: &[T]) -> Vec<Vec<T>> {
    let h_rel = T::epsilon().cbrt();
    let mut cols = Vec::with_capacity(p.len());
    let mut trial = p.to_vec();
    for j in 0..p.len() {
        let h = h_rel * p[j].abs().max(T::one());
        trial[j] = p[j] + h;
        let plus: Vec<T> = x.iter().map(|&xi| model(xi, &trial)).collect();
        trial[j] = p[j] - h;
        let minus: Vec<T> = x.iter().map(|&xi| model(xi, &trial)).collect();
        trial[j] = p[j];
        cols.push(plus.iter().zip(&minus).map(|(a, b)| (*a - *b) / (h + h)).collect());
    }
    cols
}

fn normal_matrix<T: Scalar>(cols: &[Vec<T>]) -> Matrix<T> {
    let n = cols.len();
    let mut a = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v: T = cols[i].iter().zip(&cols[j]).map(|(a, b)| *a * *b).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Result of a run that may stop at the iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub enum LmOutcome<T> {
    Converged(LmFit<T>),
    /// Iteration cap reached; the last accepted parameters.
    Stalled { params: Vec<T>, ssr: T, iterations: usize },
}

/// Minimizes Σ (yᵢ − model(xᵢ, p))² starting from `p0`; hitting the
/// iteration cap is a fit failure.
pub fn levenberg_marquardt<T: Scalar>(
    model: impl Fn(T, &[T]) -> T,
    x: &[T],
    y: &[T],
    p0: &[T],
    options: &LmOptions<T>,
) -> Result<LmFit<T>> {
    match levenberg_marquardt_outcome(model, x, y, p0, options)? {
        LmOutcome::Converged(fit) => Ok(fit),
        LmOutcome::Stalled { params, ssr, iterations } => Err(Error::FitFailure(format!(
            "no convergence after {} iterations (SSR {:.4e}, params {:?})",
            iterations,
            ssr.to_f64_lossy(),
            params.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
        ))),
    }
}

/// As [`levenberg_marquardt`], but hands back the last iterate instead of
/// failing at the iteration cap, so callers can diagnose the stall.
pub fn levenberg_marquardt_outcome<T: Scalar>(
    model: impl Fn(T, &[T]) -> T,
    x: &[T],
    y: &[T],
    p0: &[T],
    options: &LmOptions<T>,
) -> Result<LmOutcome<T>> {
    let n = x.len();
    let np = p0.len();
    if n != y.len() {
        return Err(Error::FitFailure(format!("{} abscissae but {} ordinates", n, y.len())));
    }
    if n <= np {
        return Err(Error::FitFailure(format!("{n} points cannot determine {np} parameters")));
    }
    let mut p = p0.to_vec();
    let mut cost = ssr(&model, x, y, &p);
    if !cost.is_finite() {
        return Err(Error::FitFailure("non-finite residuals at the initial guess".into()));
    }
    let mut lambda = options.initial_damping;
    // growth factor for consecutive rejections (Nielsen's update)
    let mut nu: T = lit(2.0);
    let tol = options.step_tolerance;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let cols = jacobian(&model, x, &p);
        let a = normal_matrix(&cols);
        let resid: Vec<T> = x.iter().zip(y).map(|(&xi, &yi)| yi - model(xi, &p)).collect();
        let g: Vec<T> = cols.iter().map(|c| c.iter().zip(&resid).map(|(a, b)| *a * *b).sum()).collect();
        let diag: Vec<T> = (0..np).map(|i| if a[(i, i)] > T::zero() { a[(i, i)] } else { T::one() }).collect();
        loop {
            let mut damped = a.clone();
            for i in 0..np {
                damped[(i, i)] = a[(i, i)] + lambda * diag[i];
            }
            let accepted = damped.solve(&g).and_then(|step| {
                let trial: Vec<T> = p.iter().zip(&step).map(|(a, b)| *a + *b).collect();
                let c = ssr(&model, x, y, &trial);
                // SSR decrease predicted by the linear model: δᵀg + λ δᵀDδ
                let predicted = (0..np).map(|i| step[i] * (g[i] + lambda * diag[i] * step[i])).sum::<T>();
                (c.is_finite() && c <= cost && predicted > T::zero()).then_some((trial, step, c, predicted))
            });
            match accepted {
                Some((trial, step, c, predicted)) => {
                    let small = step.iter().zip(&trial).all(|(s, q)| s.abs() <= tol * (q.abs() + tol));
                    let stalled = cost - c <= options.cost_tolerance * cost;
                    let rho = (cost - c) / predicted;
                    let two: T = lit(2.0);
                    let shrink = T::one() - (two * rho - T::one()).powi(3);
                    lambda = (lambda * shrink.max(lit(1.0 / 3.0))).max(lit(1e-15));
                    nu = two;
                    p = trial;
                    cost = c;
                    converged = small || stalled;
                    break;
                }
                None => {
                    lambda = lambda * nu;
                    nu = nu * lit(2.0);
                    if lambda > lit(1e16) {
                        // no downhill step exists at working precision
                        converged = true;
                        break;
                    }
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Ok(LmOutcome::Stalled { params: p, ssr: cost, iterations });
    }
    let cols = jacobian(&model, x, &p);
    let cov = normal_matrix(&cols).inverse();
    let dof = T::from_usize_lossy(n - np);
    let s2 = cost / dof;
    let stderr = match cov {
        Some(c) => (0..np).map(|i| (c[(i, i)] * s2).abs().sqrt()).collect(),
        None => vec![T::infinity(); np],
    };
    Ok(LmOutcome::Converged(LmFit {
        params: p,
        stderr,
        ssr: cost,
        rms_residual: (cost / T::from_usize_lossy(n)).sqrt(),
        iterations,
    }))
}
