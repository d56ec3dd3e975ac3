//! Unconstrained minimizer used for non-quadratic local subproblems.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::cost::SmoothCost;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    /// Steepest descent with Armijo backtracking.
    GradientDescent,
    /// Limited-memory BFGS directions with the same Armijo backtracking.
    #[default]
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverConfig {
    /// Stop once `||grad|| <= grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub method: InnerMethod,
    /// History length for L-BFGS.
    pub memory: usize,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iters: 500, method: InnerMethod::Lbfgs, memory: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes `f` from `x0`.
///
/// Returns the last iterate when the gradient tolerance is met, the iteration
/// cap is hit, or the line search can no longer decrease `f`. Non-finite
/// values or gradients are reported as [`Error::NumericalFailure`].
pub fn minimize(f: &dyn SmoothCost, x0: &DVector<f64>, cfg: &InnerSolverConfig) -> Result<InnerResult> {
    let mut x = x0.clone();
    let (mut fx, mut g) = f.value_and_gradient(&x);
    check_finite(fx, &g, &x, 0)?;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut step_hint = 1.0;

    for it in 0..cfg.max_iters {
        let gn = g.norm();
        if gn <= cfg.grad_tol {
            return Ok(InnerResult { x, value: fx, grad_norm: gn, iterations: it });
        }
        let mut dir = match cfg.method {
            InnerMethod::Lbfgs if !history.is_empty() => two_loop(&g, &history),
            _ => -&g,
        };
        let mut slope = g.dot(&dir);
        if slope >= 0.0 || !slope.is_finite() {
            history.clear();
            dir = -&g;
            slope = -gn * gn;
        }
        let mut t = if history.is_empty() {
            // scale the first steepest-descent step by the previous accepted length
            step_hint / gn.max(1e-300)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = &x + t * &dir;
            let (fn_, gn_) = f.value_and_gradient(&xn);
            if fn_.is_finite() && fn_ <= fx + ARMIJO_C * t * slope {
                accepted = Some((xn, fn_, gn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else {
            // no further decrease is representable
            return Ok(InnerResult { x, value: fx, grad_norm: gn, iterations: it });
        };
        check_finite(fn_, &gn_, &xn, it + 1)?;
        let s = &xn - &x;
        let y = &gn_ - &g;
        let sy = s.dot(&y);
        step_hint = s.norm();
        if cfg.method == InnerMethod::Lbfgs && sy > 1e-12 * s.norm() * y.norm() {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > cfg.memory {
                history.pop_front();
            }
        }
        x = xn;
        fx = fn_;
        g = gn_;
    }
    let gn = g.norm();
    Ok(InnerResult { x, value: fx, grad_norm: gn, iterations: cfg.max_iters })
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    let (s, y, _) = history.back().expect("non-empty history");
    let gamma = s.dot(y) / y.norm_squared();
    let mut r = q * gamma;
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&r);
        r.axpy(a - b, s, 1.0);
    }
    -r
}

fn check_finite(v: f64, g: &DVector<f64>, x: &DVector<f64>, it: usize) -> Result<()> {
    if v.is_finite() && g.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure { iterations: it, iterate: x.iter().copied().collect() })
    }
}
