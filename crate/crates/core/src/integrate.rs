//! Time stepping for the semi-discrete system.
//!
//! Both schemes share the structure
//!
//! ```text
//! alpha1 - alpha0 = tau/2 (beta0 + beta1)
//! A (beta1 - beta0) = -tau/2 B (alpha0 + alpha1) - tau K^T W g
//! ```
//!
//! and differ only in the nodal chord slope `g`: the average vector field
//! scheme uses the divided difference `(F(u1) - F(u0)) / (u1 - u0)`, implicit
//! midpoint uses `F'((u0 + u1)/2)`. Writing `v = (alpha1 - alpha0)/tau =
//! (beta0 + beta1)/2` leaves a fixed-point problem for the mean velocity with
//! the linear part treated implicitly:
//!
//! ```text
//! (A + tau^2/4 B) v = A beta0 - tau/2 B alpha0 - tau/2 K^T W g(alpha0, alpha0 + tau v)
//! alpha1 = alpha0 + tau v,  beta1 = 2 v - beta0
//! ```
//!
//! Solving for `v` rather than `alpha1` keeps the solve's rounding noise
//! (of size `cond(A) eps` relative to the unknown) out of the `1/tau`
//! amplification that recovering `beta1` from `alpha1 - alpha0` would apply.
//! The left-hand matrix is factored once per stepper. Iteration stops when
//! the nodal values `K alpha1`, the only input of `g`, stop changing.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{dense_mul, DiscreteSystem, SpdFactor};
use crate::diagnostics::{ErrorProbe, Trace, TraceRecorder};
use crate::error::{Error, Result};
use crate::system::{Nonlinearity, State};

/// Default threshold below which the divided difference switches to the
/// midpoint derivative.
pub const DEFAULT_DD_SWITCH: f64 = 1e-7;

/// Increments below `STALL_FACTOR * fp_tol` that stop contracting are
/// accepted as the rounding floor of the iteration.
pub const STALL_FACTOR: f64 = 1e3;

/// Time-step and nonlinear-solve settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub tau: f64,
    /// Bound on the change of the nodal values `K alpha` between fixed-point
    /// iterates (infinity norm).
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub dd_switch: f64,
}

impl StepperConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive (got {})", self.tau)));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fixed-point tolerance must be positive (got {})",
                self.fp_tol
            )));
        }
        if self.fp_max_iter < 1 {
            return Err(Error::InvalidParameter("fp_max_iter must be at least 1".into()));
        }
        if !(self.dd_switch >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dd_switch must be nonnegative (got {})",
                self.dd_switch
            )));
        }
        Ok(())
    }
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            fp_tol: 1e-13,
            fp_max_iter: 100,
            dd_switch: DEFAULT_DD_SWITCH,
        }
    }
}

/// Extended-precision refinement sweeps per linear solve.
const REFINEMENT_SWEEPS: usize = 1;

/// Unevaluated sum `hi + lo` used to accumulate residuals.
#[derive(Debug, Clone, Copy, Default)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    #[inline]
    fn add(&mut self, x: f64) {
        // Knuth two-sum.
        let s = self.hi + x;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (x - bb);
        self.hi = s;
        self.lo += err;
    }

    /// Adds `x * y` exactly up to the final rounding of `lo`.
    #[inline]
    fn add_prod(&mut self, x: f64, y: f64) {
        let p = x * y;
        let e = x.mul_add(y, -p);
        self.add(p);
        self.lo += e;
    }

    /// Adds `c * x * y`.
    #[inline]
    fn add_scaled_prod(&mut self, c: f64, x: f64, y: f64) {
        let p = x * y;
        let e = x.mul_add(y, -p);
        self.add_prod(c, p);
        self.lo += c * e;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Time integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Second-order average vector field method (energy conserving).
    Avf,
    /// Implicit midpoint rule.
    Midpoint,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Avf => "avf",
            Scheme::Midpoint => "midpoint",
        }
    }
}

/// Chord slope `(F(b) - F(a)) / (b - a)`, or `F'((a+b)/2)` when
/// `|b - a| < dd_switch`.
///
/// The chord is evaluated in closed forms free of cancellation
/// (`sin(m) sin(d/2)/(d/2)` for sine-Gordon, `(a+b)(a^2+b^2)/4` for the
/// cubic), so both branches agree to `O(d^2)` at the switch.
#[inline]
pub fn divided_difference(nl: Nonlinearity, a: f64, b: f64, dd_switch: f64) -> f64 {
    let d = b - a;
    let m = 0.5 * (a + b);
    if d.abs() < dd_switch || d == 0.0 {
        return nl.derivative(m);
    }
    match nl {
        Nonlinearity::Zero => 0.0,
        Nonlinearity::SineGordon => {
            let h = 0.5 * d;
            m.sin() * (h.sin() / h)
        }
        Nonlinearity::Cubic => 0.25 * (a + b) * (a * a + b * b),
    }
}

/// Outcome of one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: State,
    pub iterations: usize,
    /// Last fixed-point increment of the nodal values (infinity norm).
    pub increment: f64,
}

/// A stepper bound to one system, nonlinearity, step size, and scheme.
pub struct Stepper<'a> {
    sys: &'a DiscreteSystem,
    nl: Nonlinearity,
    cfg: StepperConfig,
    scheme: Scheme,
    /// `A + tau^2/4 B`.
    lhs: SpdFactor,
    /// `tau/2 B`.
    half_tau_b: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a DiscreteSystem, nl: Nonlinearity, cfg: StepperConfig, scheme: Scheme) -> Result<Self> {
        cfg.validate()?;
        let half_tau_b = sys.b() * (0.5 * cfg.tau);
        let s = sys.a() + sys.b() * (0.25 * cfg.tau * cfg.tau);
        let lhs = SpdFactor::new(&s, "implicit step matrix A + tau^2/4 B", 0.0)?;
        Ok(Self {
            sys,
            nl,
            cfg,
            scheme,
            lhs,
            half_tau_b,
        })
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn system(&self) -> &DiscreteSystem {
        self.sys
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nl
    }

    /// Residual of the step equation
    /// `(A + tau^2/4 B) v = A beta0 - tau/2 B alpha0 - tau/2 load`,
    /// accumulated in double-double so that refinement can push it well
    /// below `eps |A| |v|`. Energy conservation hinges on `v . r` being
    /// small, and the Gramians can be very ill conditioned.
    fn residual(&self, state: &State, v: &[f64], load: Option<&[f64]>) -> Vec<f64> {
        let tau = self.cfg.tau;
        let (c1, c2) = (0.5 * tau, 0.25 * tau * tau);
        let a = self.sys.a();
        let b = self.sys.b();
        let n = v.len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = DoubleDouble::default();
                // Symmetric, so row i is column i (contiguous).
                let (ai, bi) = (a.column(i), b.column(i));
                for j in 0..n {
                    let aij = ai[j];
                    let bij = bi[j];
                    acc.add_prod(aij, state.beta[j]);
                    acc.add_prod(-aij, v[j]);
                    acc.add_scaled_prod(-c1, bij, state.alpha[j]);
                    acc.add_scaled_prod(-c2, bij, v[j]);
                }
                if let Some(l) = load {
                    acc.add_prod(-c1, l[i]);
                }
                acc.value()
            })
            .collect()
    }

    /// Solves the step equation, then refines with extended-precision
    /// residuals.
    fn solve_step(&self, state: &State, rhs: Vec<f64>, load: Option<&[f64]>) -> Vec<f64> {
        let mut v = rhs;
        self.lhs.solve_in_place(&mut v);
        for _ in 0..REFINEMENT_SWEEPS {
            let mut r = self.residual(state, &v, load);
            self.lhs.solve_in_place(&mut r);
            for (x, d) in v.iter_mut().zip(&r) {
                *x += d;
            }
        }
        v
    }

    /// Weighted nodal chord slopes `w_i g(u0_i, u1_i)`.
    fn weighted_chord(&self, u0: &[f64], u1: &[f64], out: &mut [f64]) {
        let w = self.sys.rule().weights();
        match self.scheme {
            Scheme::Avf => {
                for (((o, a), b), wi) in out.iter_mut().zip(u0).zip(u1).zip(w) {
                    *o = wi * divided_difference(self.nl, *a, *b, self.cfg.dd_switch);
                }
            }
            Scheme::Midpoint => {
                for (((o, a), b), wi) in out.iter_mut().zip(u0).zip(u1).zip(w) {
                    *o = wi * self.nl.derivative(0.5 * (a + b));
                }
            }
        }
    }

    pub fn step(&self, state: &State) -> Result<StepOutcome> {
        let sys = self.sys;
        let n = sys.n();
        if state.alpha.len() != n || state.beta.len() != n {
            return Err(Error::InvalidParameter(format!(
                "state has {} coefficients but the system has {n} centers",
                state.alpha.len()
            )));
        }
        let tau = self.cfg.tau;
        let a0 = &state.alpha;
        let b0 = &state.beta;
        let a_b0 = dense_mul(sys.a(), b0);
        let hb_a0 = dense_mul(&self.half_tau_b, a0);
        let base: Vec<f64> = a_b0.iter().zip(&hb_a0).map(|(x, y)| x - y).collect();
        let advance = |v: &[f64]| -> Vec<f64> { a0.iter().zip(v).map(|(a, v)| a + tau * v).collect() };

        let (v, iterations, increment) = if self.nl.is_zero() {
            (self.solve_step(state, base.clone(), None), 1, 0.0)
        } else {
            let m = sys.m();
            let u0 = sys.k().mul_vec(a0);
            // Initial guess v = beta0, i.e. alpha1 = alpha0 + tau beta0.
            let mut v = b0.clone();
            let mut u1 = sys.k().mul_vec(&advance(&v));
            let mut u_next = vec![0.0; m];
            let mut g = vec![0.0; m];
            let mut load = vec![0.0; n];
            let mut iterations = 0;
            let mut increment = f64::INFINITY;
            let mut converged = false;
            let mut previous = f64::INFINITY;
            let half_tau = 0.5 * tau;
            while iterations < self.cfg.fp_max_iter {
                iterations += 1;
                self.weighted_chord(&u0, &u1, &mut g);
                sys.k().tr_mul_vec_into(&g, &mut load);
                let next: Vec<f64> = base.iter().zip(&load).map(|(b, l)| b - half_tau * l).collect();
                let next = self.solve_step(state, next, Some(&load));
                sys.k().mul_vec_into(&advance(&next), &mut u_next);
                increment = u_next
                    .iter()
                    .zip(&u1)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                v = next;
                std::mem::swap(&mut u1, &mut u_next);
                if increment <= self.cfg.fp_tol {
                    converged = true;
                    break;
                }
                // The true contraction factor is O(tau^2); an increment that
                // no longer halves is rounding noise.
                if iterations >= 3 && increment >= 0.5 * previous && increment <= STALL_FACTOR * self.cfg.fp_tol {
                    log::trace!("fixed point stalled at {increment:e} after {iterations} iterations");
                    converged = true;
                    break;
                }
                previous = increment;
            }
            if !converged {
                return Err(Error::FixedPointDiverged {
                    iterations,
                    residual: increment,
                });
            }
            (v, iterations, increment)
        };

        let alpha1 = advance(&v);
        let beta1: Vec<f64> = v.iter().zip(b0).map(|(v, b)| 2.0 * v - b).collect();
        let next = State::new(state.t + tau, alpha1, beta1);
        if !next.is_finite() {
            return Err(Error::FixedPointDiverged {
                iterations,
                residual: f64::NAN,
            });
        }
        Ok(StepOutcome {
            state: next,
            iterations,
            increment,
        })
    }
}

/// One average-vector-field step.
pub fn avf_step(sys: &DiscreteSystem, nl: Nonlinearity, state: &State, cfg: &StepperConfig) -> Result<State> {
    Ok(Stepper::new(sys, nl, *cfg, Scheme::Avf)?.step(state)?.state)
}

/// One implicit-midpoint step.
pub fn midpoint_step(sys: &DiscreteSystem, nl: Nonlinearity, state: &State, cfg: &StepperConfig) -> Result<State> {
    Ok(Stepper::new(sys, nl, *cfg, Scheme::Midpoint)?.step(state)?.state)
}

/// Residual of the two-step form obtained by eliminating `beta` from the
/// average vector field scheme:
///
/// ```text
/// (a+ - 2a + a-)/tau^2 + A^{-1} B (a+ + 2a + a-)/4 + A^{-1} K^T W q/2
/// q = dd(u, u+) + dd(u-, u)
/// ```
pub fn two_step_residual(
    sys: &DiscreteSystem,
    nl: Nonlinearity,
    alpha_prev: &[f64],
    alpha_now: &[f64],
    alpha_next: &[f64],
    tau: f64,
    dd_switch: f64,
) -> Vec<f64> {
    let n = sys.n();
    assert!(alpha_prev.len() == n && alpha_now.len() == n && alpha_next.len() == n);
    let sum: Vec<f64> = (0..n)
        .map(|i| alpha_next[i] + 2.0 * alpha_now[i] + alpha_prev[i])
        .collect();
    let mut load: Vec<f64> = dense_mul(sys.b(), &sum).into_iter().map(|v| 0.25 * v).collect();
    if !nl.is_zero() {
        let um = sys.k().mul_vec(alpha_prev);
        let u = sys.k().mul_vec(alpha_now);
        let up = sys.k().mul_vec(alpha_next);
        let wq: Vec<f64> = (0..sys.m())
            .map(|i| {
                let q = divided_difference(nl, u[i], up[i], dd_switch) + divided_difference(nl, um[i], u[i], dd_switch);
                0.5 * sys.rule().weights()[i] * q
            })
            .collect();
        for (l, v) in load.iter_mut().zip(sys.k().tr_mul_vec(&wq)) {
            *l += v;
        }
    }
    let projected = sys.chol_a().solve(&load);
    (0..n)
        .map(|i| (alpha_next[i] - 2.0 * alpha_now[i] + alpha_prev[i]) / (tau * tau) + projected[i])
        .collect()
}

/// Callback invoked after every step (and once for the initial state).
pub trait Observer {
    fn observe(&mut self, step: usize, state: &State, fp_iters: usize) -> Result<()>;
}

impl<F: FnMut(usize, &State, usize) -> Result<()>> Observer for F {
    fn observe(&mut self, step: usize, state: &State, fp_iters: usize) -> Result<()> {
        self(step, state, fp_iters)
    }
}

/// Run settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub t_final: f64,
    /// Observe every this many steps (the last step is always observed).
    pub observe_every: usize,
    pub scheme: Scheme,
}

/// Number of steps covering `[0, t_final]`.
pub fn step_count(t_final: f64, tau: f64) -> usize {
    (t_final / tau).round() as usize
}

/// Default observation cadence: every step up to `T = 1`, otherwise about
/// a thousand records.
pub fn default_cadence(t_final: f64, steps: usize) -> usize {
    if t_final <= 1.0 {
        1
    } else {
        steps.div_ceil(1000).max(1)
    }
}

/// Integrates from `state0` to `t_final`, recording energy (and errors when
/// `probe` is given) every `observe_every` steps. `observers` see every step.
/// Returns the trace and the final state.
pub fn run(
    sys: &DiscreteSystem,
    nl: Nonlinearity,
    state0: &State,
    cfg: &StepperConfig,
    opts: RunOptions,
    probe: Option<&ErrorProbe<'_>>,
    observers: &mut [&mut dyn Observer],
) -> Result<(Trace, State)> {
    if !(opts.t_final >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "final time must be nonnegative (got {})",
            opts.t_final
        )));
    }
    let stepper = Stepper::new(sys, nl, *cfg, opts.scheme)?;
    let steps = step_count(opts.t_final, cfg.tau);
    let every = opts.observe_every.max(1);
    let mut recorder = TraceRecorder::new(sys, nl, probe);
    let mut state = state0.clone();
    state.t = 0.0;
    recorder.observe(0, &state, 0)?;
    for o in observers.iter_mut() {
        o.observe(0, &state, 0)?;
    }
    for n in 1..=steps {
        let out = stepper.step(&state).map_err(|e| Error::StepFailed {
            step: n,
            source: Box::new(e),
        })?;
        state = out.state;
        state.t = n as f64 * cfg.tau;
        if n % every == 0 || n == steps {
            recorder.observe(n, &state, out.iterations)?;
        }
        for o in observers.iter_mut() {
            o.observe(n, &state, out.iterations)?;
        }
    }
    Ok((recorder.into_trace(), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, AssemblyOptions};
    use crate::centers::{uniform_centers, CenterSet};
    use crate::diagnostics::discrete_energy;
    use crate::geometry::{BoxDomain, Points};
    use crate::kernel::Kernel;
    use crate::quadrature::{composite_gauss_1d, QuadratureRule};
    use crate::system::ritz_projection;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn system(n: usize) -> DiscreteSystem {
        let sigma = BoxDomain::interval(-3.0, 3.0).unwrap();
        let centers = uniform_centers(&sigma, &[n]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 160, 6).unwrap();
        assemble(&Kernel::new(3, 2, 1.0, 1).unwrap(), &centers, &rule, AssemblyOptions::default()).unwrap()
    }

    // Ritz projection of a bump, so states look like real initial data.
    fn bump_state(sys: &DiscreteSystem, amp: f64) -> State {
        let g: Vec<f64> = sys
            .rule()
            .nodes()
            .iter()
            .map(|z| {
                let x = z[0];
                let v = 1.0 - x * x;
                if v > 0.0 { -amp * 6.0 * x * v * v } else { 0.0 }
            })
            .collect();
        let alpha = ritz_projection(sys, &[g]).unwrap();
        State::new(0.0, alpha, vec![0.0; sys.n()])
    }

    #[test]
    fn double_double_keeps_cancelled_digits() {
        // 1e16 + 1 - 1e16 loses the 1 in plain f64.
        let mut acc = DoubleDouble::default();
        acc.add_prod(1e16, 1.0);
        acc.add_prod(1.0, 1.0);
        acc.add_prod(-1e16, 1.0);
        assert_eq!(acc.value(), 1.0);
        // (1 + 2^-30)^2 - 1 - 2^-29 = 2^-60, invisible to a plain product.
        let x = 1.0 + 2f64.powi(-30);
        let mut acc = DoubleDouble::default();
        acc.add_prod(x, x);
        acc.add(-1.0);
        acc.add(-(2f64.powi(-29)));
        assert_eq!(acc.value(), 2f64.powi(-60));
        let mut acc = DoubleDouble::default();
        acc.add_scaled_prod(0.5, x, x);
        acc.add(-0.5);
        acc.add(-(2f64.powi(-30)));
        assert_eq!(acc.value(), 2f64.powi(-61));
    }

    #[test]
    fn divided_difference_examples() {
        assert_eq!(divided_difference(Nonlinearity::Cubic, 0.0, 2.0, 1e-7), 2.0);
        assert_eq!(divided_difference(Nonlinearity::Cubic, 1.0, 1.0, 1e-7), 1.0);
        assert_relative_eq!(divided_difference(Nonlinearity::SineGordon, 0.0, PI, 1e-7), 2.0 / PI, max_relative = 1e-15);
        assert_eq!(divided_difference(Nonlinearity::Zero, 0.3, 2.0, 1e-7), 0.0);
        // Near-coincident arguments use the derivative branch.
        let a = 0.7;
        let b = a + 1e-9;
        let v = divided_difference(Nonlinearity::SineGordon, a, b, 1e-7);
        assert!((v - (a + 5e-10f64).sin()).abs() < 1e-15);
        assert!(divided_difference(Nonlinearity::SineGordon, a, b, 0.0).is_finite());
        // Against the literal quotient where it is well conditioned.
        for (a, b) in [(0.3, 1.9), (-2.0, 0.5), (1.0, 1.001)] {
            for nl in [Nonlinearity::SineGordon, Nonlinearity::Cubic] {
                let q = (nl.potential(b) - nl.potential(a)) / (b - a);
                assert_relative_eq!(divided_difference(nl, a, b, 1e-7), q, max_relative = 1e-10);
            }
        }
        // Both branches meet at the switch.
        for nl in [Nonlinearity::SineGordon, Nonlinearity::Cubic] {
            let below = divided_difference(nl, 1.3 - 0.4995e-7, 1.3 + 0.4995e-7, 1e-7);
            let above = divided_difference(nl, 1.3 - 0.5005e-7, 1.3 + 0.5005e-7, 1e-7);
            assert!((below - above).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::new(0.0).validate().is_err());
        assert!(StepperConfig { fp_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(StepperConfig { fp_max_iter: 0, ..Default::default() }.validate().is_err());
        assert!(StepperConfig { dd_switch: -1.0, ..Default::default() }.validate().is_err());
        assert!(StepperConfig::default().validate().is_ok());
    }

    fn scalar_system(omega2: f64) -> DiscreteSystem {
        // One node, one center: A = w phi(0)^2 and B = w |grad phi(z - x)|^2.
        // Pick the node and weight so that A = 1 and B = omega2.
        let kernel = Kernel::new(3, 2, 1.0, 1).unwrap();
        let target_ratio = omega2;
        // grad/value ratio r(x) = phi'(x)/phi(x) is monotone on (0,1); bisect for the node offset.
        let (mut lo, mut hi) = (1e-9, 0.999);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let ratio = (kernel.grad(&[mid])[0] / kernel.value(&[mid])).powi(2);
            if ratio < target_ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z = 0.5 * (lo + hi);
        let w = 1.0 / kernel.value(&[z]).powi(2);
        let sigma = BoxDomain::interval(-1.0, 1.0).unwrap();
        let centers = CenterSet::new(Points::from_1d(&[0.0]), sigma.clone()).unwrap();
        let rule = QuadratureRule::new(Points::from_1d(&[z]), vec![w], sigma.padded(1.0)).unwrap();
        assemble(&kernel, &centers, &rule, AssemblyOptions::default()).unwrap()
    }

    #[test]
    fn scalar_harmonic_oscillator() {
        let sys = scalar_system(1.0);
        assert_relative_eq!(sys.a()[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(sys.b()[(0, 0)], 1.0, max_relative = 1e-9);
        let b = sys.b()[(0, 0)];
        let tau = 0.1;
        let st = State::new(0.0, vec![1.0], vec![0.0]);
        let (ad, bd) = crate::system::rhs(&sys, Nonlinearity::Zero, &st).unwrap();
        assert_eq!(ad, vec![0.0]);
        assert_relative_eq!(bd[0], -b / sys.a()[(0, 0)], max_relative = 1e-14);
        let out = avf_step(&sys, Nonlinearity::Zero, &st, &StepperConfig::new(tau)).unwrap();
        // Closed form of the 2x2 midpoint system with A = 1, B = 1.
        let denom = 1.0 + tau * tau / 4.0;
        assert_relative_eq!(out.alpha[0], (1.0 - tau * tau / 4.0) / denom, max_relative = 1e-9);
        assert_relative_eq!(out.beta[0], -tau / denom, max_relative = 1e-9);
        assert_relative_eq!(out.alpha[0], 0.9950124688, max_relative = 1e-9);
        assert_relative_eq!(out.beta[0], -0.0997506234, max_relative = 1e-9);
    }

    #[test]
    fn linear_step_is_crank_nicolson() {
        let sys = system(25);
        let st = bump_state(&sys, 1.0);
        let st = State::new(0.0, st.alpha.clone(), st.alpha.iter().map(|a| 0.3 * a).collect());
        let cfg = StepperConfig::new(0.02);
        let avf = avf_step(&sys, Nonlinearity::Zero, &st, &cfg).unwrap();
        let mid = midpoint_step(&sys, Nonlinearity::Zero, &st, &cfg).unwrap();
        assert_eq!(avf, mid);
        // Closed-form Crank-Nicolson via the dense 2N x 2N block system.
        let n = sys.n();
        let tau = cfg.tau;
        let ainv_b = sys.a().clone().lu().solve(sys.b()).unwrap();
        let mut m = DMatrix::<f64>::identity(2 * n, 2 * n);
        let mut r = DMatrix::<f64>::identity(2 * n, 2 * n);
        for i in 0..n {
            m[(i, n + i)] = -tau / 2.0;
            r[(i, n + i)] = tau / 2.0;
            for j in 0..n {
                m[(n + i, j)] = tau / 2.0 * ainv_b[(i, j)];
                r[(n + i, j)] = -tau / 2.0 * ainv_b[(i, j)];
            }
        }
        let y0 = nalgebra::DVector::from_iterator(2 * n, st.alpha.iter().chain(&st.beta).copied());
        let y1 = m.lu().solve(&(r * y0)).unwrap();
        let scale = y1.amax();
        for i in 0..n {
            assert!((avf.alpha[i] - y1[i]).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn equilibrium_converges_in_one_iteration() {
        let sys = system(12);
        for scheme in [Scheme::Avf, Scheme::Midpoint] {
            let stepper = Stepper::new(&sys, Nonlinearity::SineGordon, StepperConfig::new(0.01), scheme).unwrap();
            let out = stepper.step(&State::zeros(12)).unwrap();
            assert_eq!(out.iterations, 1);
            assert!(out.state.alpha.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn avf_step_conserves_energy() {
        let sys = system(25);
        for nl in [Nonlinearity::Zero, Nonlinearity::SineGordon, Nonlinearity::Cubic] {
            let st = bump_state(&sys, 2.0);
            let cfg = StepperConfig::new(0.05);
            let e0 = discrete_energy(&sys, nl, &st);
            let next = avf_step(&sys, nl, &st, &cfg).unwrap();
            let e1 = discrete_energy(&sys, nl, &next);
            let scale = st.alpha.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
            assert!((e1 - e0).abs() <= 10.0 * cfg.fp_tol * scale * e0.abs().max(1.0), "{nl:?}: {e0} -> {e1}");
        }
    }

    #[test]
    fn midpoint_drifts_where_avf_does_not() {
        let sys = system(25);
        let nl = Nonlinearity::SineGordon;
        let cfg = StepperConfig::new(0.05);
        let st0 = bump_state(&sys, 3.0);
        let e0 = discrete_energy(&sys, nl, &st0);
        let mut drift = [0.0f64; 2];
        for (k, scheme) in [Scheme::Avf, Scheme::Midpoint].into_iter().enumerate() {
            let stepper = Stepper::new(&sys, nl, cfg, scheme).unwrap();
            let mut st = st0.clone();
            for _ in 0..100 {
                st = stepper.step(&st).unwrap().state;
                drift[k] = drift[k].max((discrete_energy(&sys, nl, &st) - e0).abs() / e0);
            }
        }
        assert!(drift[0] < 1e-11, "avf drift {}", drift[0]);
        assert!(drift[1] > 100.0 * drift[0], "midpoint drift {} vs {}", drift[1], drift[0]);
    }

    #[test]
    fn two_step_residual_checks() {
        let sys = system(20);
        let nl = Nonlinearity::SineGordon;
        let cfg = StepperConfig::new(0.05);
        let stepper = Stepper::new(&sys, nl, cfg, Scheme::Avf).unwrap();
        let s0 = bump_state(&sys, 2.0);
        let s1 = stepper.step(&s0).unwrap().state;
        let s2 = stepper.step(&s1).unwrap().state;
        let r = two_step_residual(&sys, nl, &s0.alpha, &s1.alpha, &s2.alpha, cfg.tau, cfg.dd_switch);
        let rmax = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(rmax <= 100.0 * cfg.fp_tol, "residual {rmax}");
        let z = vec![0.0; 20];
        assert!(two_step_residual(&sys, nl, &z, &z, &z, 0.05, 1e-7).iter().all(|v| *v == 0.0));
        // Perturbing the newest level by delta moves the residual by ~delta/tau^2.
        let mut prev = 0.0;
        for delta in [1e-8, 2e-8, 4e-8] {
            let mut p = s2.alpha.clone();
            p[7] += delta;
            let r = two_step_residual(&sys, nl, &s0.alpha, &s1.alpha, &p, cfg.tau, cfg.dd_switch);
            let rmax = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if prev > 0.0 {
                assert_relative_eq!(rmax / prev, 2.0, max_relative = 0.05);
            }
            prev = rmax;
        }
    }

    #[test]
    fn run_records_and_reverses() {
        let sys = system(20);
        let st = bump_state(&sys, 1.0);
        let cfg = StepperConfig::new(0.01);
        let opts = RunOptions {
            t_final: 0.0,
            observe_every: 1,
            scheme: Scheme::Avf,
        };
        let (trace, _) = run(&sys, Nonlinearity::Zero, &st, &cfg, opts, None, &mut []).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].rel_energy_err, 0.0);

        let opts = RunOptions { t_final: 0.1, ..opts };
        let (trace, mid) = run(&sys, Nonlinearity::Zero, &st, &cfg, opts, None, &mut []).unwrap();
        assert_eq!(trace.records.len(), 11);
        let back = State::new(0.0, mid.alpha.clone(), mid.beta.iter().map(|b| -b).collect());
        let (_, end) = run(&sys, Nonlinearity::Zero, &back, &cfg, opts, None, &mut []).unwrap();
        for (a, b) in end.alpha.iter().zip(&st.alpha) {
            assert!((a - b).abs() <= 1e-8);
        }

        let opts = RunOptions {
            t_final: 1.0,
            observe_every: 1,
            scheme: Scheme::Avf,
        };
        let mut seen = Vec::new();
        let mut obs = |n: usize, _: &State, _: usize| -> Result<()> {
            seen.push(n);
            Ok(())
        };
        let opts = RunOptions { observe_every: 10, ..opts };
        let (trace, _) = run(&sys, Nonlinearity::SineGordon, &st, &cfg, opts, None, &mut [&mut obs]).unwrap();
        assert_eq!(trace.records.len(), 11);
        assert_eq!(seen, (0..=100).collect::<Vec<_>>());
        assert!(trace.records.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn cadence_defaults() {
        assert_eq!(default_cadence(1.0, 100), 1);
        assert_eq!(default_cadence(10.0, 1000), 1);
        assert_eq!(default_cadence(10.0, 100_000), 100);
        assert_eq!(step_count(1.0, 0.01), 100);
        assert_eq!(step_count(1.0, 0.04), 25);
    }

    #[test]
    fn fixed_point_failure_is_reported() {
        let sys = system(20);
        let st = bump_state(&sys, 3.0);
        let cfg = StepperConfig {
            fp_max_iter: 1,
            ..StepperConfig::new(0.05)
        };
        let err = avf_step(&sys, Nonlinearity::SineGordon, &st, &cfg).unwrap_err();
        assert!(matches!(err, Error::FixedPointDiverged { iterations: 1, .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
