//! Box-constrained Newton ascent with eigenvalue-regularized Hessians and
//! Armijo backtracking.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A twice-differentiable objective to be maximized.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    /// Value, gradient and Hessian.
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)>;
}

impl Objective for crate::qlik::QuasiLikelihood<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        crate::qlik::QuasiLikelihood::value(self, theta)
    }

    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let e = crate::qlik::QuasiLikelihood::eval(self, theta)?;
        Ok((e.value, e.grad, e.hess))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub armijo_c: f64,
    /// Converged when `|projected grad|_inf < grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Converged when a projected step is shorter than this (sup norm).
    pub step_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, armijo_c: 1e-4, grad_tol: 1e-8, step_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
}

/// Maximizes `f` over `[lower, upper]` starting from `init` (clamped).
///
/// Coordinates sitting on a bound with the gradient pointing outward are held
/// fixed; the remaining block of the Hessian is made negative definite by
/// flipping and flooring its eigenvalues before solving for the step.
pub fn projected_newton<F: Objective + ?Sized>(
    f: &F,
    init: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let p = init.len();
    let clamp = |t: &mut [f64]| {
        for i in 0..p {
            t[i] = t[i].clamp(lower[i], upper[i]);
        }
    };
    let mut theta = init.to_vec();
    clamp(&mut theta);
    let (mut value, mut grad, mut hess) = f.eval(&theta)?;
    let mut evals = 1;

    for iteration in 0..opts.max_iter {
        let free: Vec<usize> = (0..p)
            .filter(|&i| !((theta[i] <= lower[i] && grad[i] < 0.0) || (theta[i] >= upper[i] && grad[i] > 0.0)))
            .collect();
        let pg = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        if pg < opts.grad_tol * value.abs().max(1.0) {
            return Ok(NewtonOutcome { theta, value, grad, hess, iterations: iteration, evals, converged: true });
        }

        let k = free.len();
        let hf = DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])]);
        let eig = SymmetricEigen::new(hf);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-8 * scale).max(1e-10);
        let gf = DVector::from_iterator(k, free.iter().map(|&i| grad[i]));
        // d = -H^{-1} g with H = V diag(lambda) V^T, lambda <= -floor
        let coef = eig.eigenvectors.transpose() * &gf;
        let scaled = DVector::from_iterator(
            k,
            coef.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l.abs().max(floor)),
        );
        let dir_free = &eig.eigenvectors * scaled;
        let mut dir = vec![0.0; p];
        for (a, &i) in free.iter().enumerate() {
            dir[i] = dir_free[a];
        }

        let mut t = 1.0;
        let accepted = loop {
            let mut cand: Vec<f64> = theta.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            clamp(&mut cand);
            let step: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if step_norm < opts.step_tol {
                break None;
            }
            let v = f.value(&cand)?;
            evals += 1;
            let gain: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            if v >= value + opts.armijo_c * gain {
                break Some(cand);
            }
            t *= 0.5;
        };
        match accepted {
            Some(next) => {
                theta = next;
                let e = f.eval(&theta)?;
                evals += 1;
                value = e.0;
                grad = e.1;
                hess = e.2;
            }
            None => {
                return Ok(NewtonOutcome { theta, value, grad, hess, iterations: iteration + 1, evals, converged: true })
            }
        }
    }
    Ok(NewtonOutcome { theta, value, grad, hess, iterations: opts.max_iter, evals, converged: false })
}
