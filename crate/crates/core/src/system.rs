//! The semi-discrete system in trial coefficients:
//!
//! ```text
//! alpha' = beta
//! beta'  = -A^{-1} B alpha - Upsilon(alpha),  Upsilon = A^{-1} K^T W F'(K alpha)
//! ```
//!
//! with Ritz-projected initial coefficients.

use serde::{Deserialize, Serialize};

use crate::assembly::{dense_mul, kernel_and_grad_matrices, kernel_matrix, DiscreteSystem};
use crate::error::{Error, Result};
use crate::geometry::Points;

/// Potential `F` of the semilinear term `F'(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// Linear wave, `F = 0`.
    Zero,
    /// `F(u) = 1 - cos u`.
    SineGordon,
    /// `F(u) = u^4 / 4`.
    Cubic,
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::SineGordon => "sine_gordon",
            Nonlinearity::Cubic => "cubic",
        }
    }

    #[inline]
    pub fn potential(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            // 2 sin^2(u/2) avoids cancellation in 1 - cos u near 0.
            Nonlinearity::SineGordon => 2.0 * (0.5 * u).sin().powi(2),
            Nonlinearity::Cubic => 0.25 * u.powi(4),
        }
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::SineGordon => u.sin(),
            Nonlinearity::Cubic => u.powi(3),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Nonlinearity::Zero)
    }
}

/// Coefficients `(alpha, beta = alpha')` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl State {
    pub fn new(t: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        assert_eq!(alpha.len(), beta.len(), "alpha and beta lengths differ");
        Self { t, alpha, beta }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(0.0, vec![0.0; n], vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

fn check_len(sys: &DiscreteSystem, v: &[f64]) -> Result<()> {
    if v.len() != sys.n() {
        return Err(Error::InvalidParameter(format!(
            "coefficient vector has length {} but the system has {} centers",
            v.len(),
            sys.n()
        )));
    }
    Ok(())
}

/// `u_X(p) = sum_j alpha_j Phi(p - x_j)` at arbitrary points.
pub fn evaluate_solution(sys: &DiscreteSystem, alpha: &[f64], points: &Points) -> Result<Vec<f64>> {
    check_len(sys, alpha)?;
    Ok(kernel_matrix(sys.kernel(), points, sys.centers().points()).mul_vec(alpha))
}

/// `u_X` and its gradient at arbitrary points; gradients are returned per
/// coordinate direction.
pub fn evaluate_with_gradient(sys: &DiscreteSystem, alpha: &[f64], points: &Points) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_len(sys, alpha)?;
    let (k, kg) = kernel_and_grad_matrices(sys.kernel(), points, sys.centers().points());
    Ok((k.mul_vec(alpha), kg.iter().map(|g| g.mul_vec(alpha)).collect()))
}

/// `u_X` on the quadrature nodes, `K alpha`.
pub fn values_at_nodes(sys: &DiscreteSystem, alpha: &[f64]) -> Vec<f64> {
    sys.k().mul_vec(alpha)
}

/// `K^T W F'(K alpha)`, the unprojected load vector.
pub fn nonlinear_load(sys: &DiscreteSystem, nl: Nonlinearity, alpha: &[f64]) -> Vec<f64> {
    let u = values_at_nodes(sys, alpha);
    let wf: Vec<f64> = u
        .iter()
        .zip(sys.rule().weights())
        .map(|(u, w)| w * nl.derivative(*u))
        .collect();
    sys.k().tr_mul_vec(&wf)
}

/// Coefficients of the discrete L2 projection of `F'(u_X)`:
/// `Upsilon = A^{-1} K^T W F'(K alpha)`.
pub fn upsilon(sys: &DiscreteSystem, nl: Nonlinearity, alpha: &[f64]) -> Result<Vec<f64>> {
    check_len(sys, alpha)?;
    if nl.is_zero() {
        return Ok(vec![0.0; sys.n()]);
    }
    Ok(sys.chol_a().solve(&nonlinear_load(sys, nl, alpha)))
}

/// Discrete L2 projection of nodal data `f|_Z` onto the trial space,
/// `A^{-1} K^T W f`.
pub fn l2_projection(sys: &DiscreteSystem, f_at_nodes: &[f64]) -> Result<Vec<f64>> {
    if f_at_nodes.len() != sys.m() {
        return Err(Error::InvalidParameter(format!(
            "expected {} nodal values, got {}",
            sys.m(),
            f_at_nodes.len()
        )));
    }
    let wf: Vec<f64> = f_at_nodes
        .iter()
        .zip(sys.rule().weights())
        .map(|(f, w)| w * f)
        .collect();
    Ok(sys.chol_a().solve(&sys.k().tr_mul_vec(&wf)))
}

/// Right-hand side of the first-order system: `(beta, -A^{-1}(B alpha + K^T W F'(K alpha)))`.
pub fn rhs(sys: &DiscreteSystem, nl: Nonlinearity, state: &State) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(sys, &state.alpha)?;
    check_len(sys, &state.beta)?;
    let mut load = dense_mul(sys.b(), &state.alpha);
    if !nl.is_zero() {
        for (l, f) in load.iter_mut().zip(nonlinear_load(sys, nl, &state.alpha)) {
            *l += f;
        }
    }
    let mut beta_dot = sys.chol_a().solve(&load);
    beta_dot.iter_mut().for_each(|v| *v = -*v);
    Ok((state.beta.clone(), beta_dot))
}

/// Discrete Ritz projection of a function given by its gradient sampled at
/// the quadrature nodes (one M-vector per direction):
/// `B^{-1} sum_xi (D^xi K)^T W (D^xi u)|_Z`.
pub fn ritz_projection(sys: &DiscreteSystem, grad_at_nodes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if grad_at_nodes.len() != sys.dim() || grad_at_nodes.iter().any(|g| g.len() != sys.m()) {
        return Err(Error::InvalidParameter(format!(
            "expected {} gradient components of length {}",
            sys.dim(),
            sys.m()
        )));
    }
    let mut load = vec![0.0; sys.n()];
    let mut tmp = vec![0.0; sys.n()];
    for (g, du) in sys.kgrad().iter().zip(grad_at_nodes) {
        let wdu: Vec<f64> = du.iter().zip(sys.rule().weights()).map(|(d, w)| w * d).collect();
        g.tr_mul_vec_into(&wdu, &mut tmp);
        for (l, t) in load.iter_mut().zip(&tmp) {
            *l += t;
        }
    }
    Ok(sys.chol_b().solve(&load))
}

/// Initial coefficients `(alpha0, beta0)` as Ritz projections of `u0` and `u1`.
pub fn ritz_initial_conditions(
    sys: &DiscreteSystem,
    grad_u0_at_nodes: &[Vec<f64>],
    grad_u1_at_nodes: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        ritz_projection(sys, grad_u0_at_nodes)?,
        ritz_projection(sys, grad_u1_at_nodes)?,
    ))
}
