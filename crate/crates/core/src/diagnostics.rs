//! Energies, error norms, traces and observed convergence rates.

use std::io::Write;

use serde::Serialize;

use crate::assembly::{dense_mul, kernel_and_grad_matrices, DiscreteSystem};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Points};
use crate::quadrature::{tensor_uniform_2d, uniform_midpoint, QuadratureRule};
use crate::sparse::CsrMatrix;
use crate::system::{Nonlinearity, State};

/// Default node count of the 1D error rule.
pub const FINE_NODES_1D: usize = 2048;
/// Default nodes per axis of the 2D error rule.
pub const FINE_NODES_2D: usize = 101;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// The uniform midpoint rule used for error norms over `omega`.
pub fn fine_rule(omega: &BoxDomain) -> Result<QuadratureRule> {
    match omega.dim() {
        1 => uniform_midpoint(omega, FINE_NODES_1D),
        _ => tensor_uniform_2d(omega, FINE_NODES_2D),
    }
}

/// `E^d = 1/2 beta^T A beta + 1/2 alpha^T B alpha + sum_j w_j F(u_X(z_j))`.
pub fn discrete_energy(sys: &DiscreteSystem, nl: Nonlinearity, state: &State) -> f64 {
    let ab = dense_mul(sys.a(), &state.beta);
    let ba = dense_mul(sys.b(), &state.alpha);
    let kin: f64 = ab.iter().zip(&state.beta).map(|(x, y)| x * y).sum();
    let pot: f64 = ba.iter().zip(&state.alpha).map(|(x, y)| x * y).sum();
    let nonlin = if nl.is_zero() {
        0.0
    } else {
        let u = sys.k().mul_vec(&state.alpha);
        u.iter().zip(sys.rule().weights()).map(|(u, w)| w * nl.potential(*u)).sum()
    };
    0.5 * kin + 0.5 * pot + nonlin
}

/// `u`, `u_t` and `grad u` sampled on the nodes of some rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
    /// One vector per coordinate direction.
    pub grad: Vec<Vec<f64>>,
}

impl SampledField {
    /// Samples a function returning `(u, u_t, grad u)`.
    pub fn from_fn(nodes: &Points, f: impl Fn(&[f64]) -> (f64, f64, [f64; 2])) -> Self {
        let d = nodes.dim();
        let mut out = Self {
            u: Vec::with_capacity(nodes.len()),
            ut: Vec::with_capacity(nodes.len()),
            grad: vec![Vec::with_capacity(nodes.len()); d],
        };
        for p in nodes.iter() {
            let (u, ut, g) = f(p);
            out.u.push(u);
            out.ut.push(ut);
            for (k, gk) in out.grad.iter_mut().enumerate() {
                gk.push(g[k]);
            }
        }
        out
    }

    /// The trial functions `u_X` (from `alpha`) and `u_X'` (from `beta`).
    pub fn from_state(sys: &DiscreteSystem, state: &State, nodes: &Points) -> Self {
        let (k, kg) = kernel_and_grad_matrices(sys.kernel(), nodes, sys.centers().points());
        Self {
            u: k.mul_vec(&state.alpha),
            ut: k.mul_vec(&state.beta),
            grad: kg.iter().map(|g| g.mul_vec(&state.alpha)).collect(),
        }
    }
}

/// `1/2 int u_t^2 + 1/2 int |grad u|^2 + int F(u)` by the given rule.
pub fn reference_energy(field: &SampledField, nl: Nonlinearity, rule: &QuadratureRule) -> f64 {
    let w = rule.weights();
    let mut e = 0.0;
    for j in 0..w.len() {
        let g2: f64 = field.grad.iter().map(|g| g[j] * g[j]).sum();
        e += w[j] * (0.5 * field.ut[j] * field.ut[j] + 0.5 * g2 + nl.potential(field.u[j]));
    }
    e
}

/// Exact solution with gradient, for error norms.
pub trait ExactSolution: Sync {
    fn value(&self, x: &[f64], t: f64) -> f64;
    /// Writes `grad_x u(x, t)` into `out` (length = dimension).
    fn grad(&self, x: &[f64], t: f64, out: &mut [f64]);
}

/// Evaluation matrices of the trial space on a fine rule, reused across
/// observations of one run.
pub struct ErrorProbe<'a> {
    exact: &'a dyn ExactSolution,
    rule: QuadratureRule,
    k: CsrMatrix,
    kgrad: Vec<CsrMatrix>,
}

/// Errors of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    /// Full H1 norm `sqrt(|e|_0^2 + |grad e|_0^2)`.
    pub h1: f64,
    /// Maximum nodal error on the fine rule.
    pub linf: f64,
}

impl<'a> ErrorProbe<'a> {
    pub fn new(sys: &DiscreteSystem, exact: &'a dyn ExactSolution, rule: QuadratureRule) -> Result<Self> {
        if rule.dim() != sys.dim() {
            return Err(Error::InvalidParameter("error rule dimension differs from the system".into()));
        }
        let (k, kgrad) = kernel_and_grad_matrices(sys.kernel(), rule.nodes(), sys.centers().points());
        Ok(Self { exact, rule, k, kgrad })
    }

    /// Probe on the default fine rule over the system's quadrature box.
    pub fn with_default_rule(sys: &DiscreteSystem, exact: &'a dyn ExactSolution) -> Result<Self> {
        let rule = fine_rule(sys.rule().omega())?;
        Self::new(sys, exact, rule)
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn errors(&self, alpha: &[f64], t: f64) -> ErrorNorms {
        let u = self.k.mul_vec(alpha);
        let grads: Vec<Vec<f64>> = self.kgrad.iter().map(|g| g.mul_vec(alpha)).collect();
        let d = grads.len();
        let mut g = [0.0; 2];
        let (mut l2, mut semi, mut linf) = (0.0, 0.0, 0.0f64);
        for (j, (p, w)) in self.rule.nodes().iter().zip(self.rule.weights()).enumerate() {
            let e = self.exact.value(p, t) - u[j];
            self.exact.grad(p, t, &mut g[..d]);
            let ge: f64 = (0..d).map(|k| (g[k] - grads[k][j]).powi(2)).sum();
            l2 += w * e * e;
            semi += w * ge;
            linf = linf.max(e.abs());
        }
        ErrorNorms {
            l2: l2.sqrt(),
            h1: (l2 + semi).sqrt(),
            linf,
        }
    }
}

/// `||u* - u_X||_{L2}` on `rule`.
pub fn l2_error(sys: &DiscreteSystem, alpha: &[f64], exact: &dyn ExactSolution, t: f64, rule: &QuadratureRule) -> Result<f64> {
    Ok(ErrorProbe::new(sys, exact, rule.clone())?.errors(alpha, t).l2)
}

/// `||u* - u_X||_{H1}` on `rule`, using the analytic gradient of `u*`.
pub fn h1_error(sys: &DiscreteSystem, alpha: &[f64], exact: &dyn ExactSolution, t: f64, rule: &QuadratureRule) -> Result<f64> {
    Ok(ErrorProbe::new(sys, exact, rule.clone())?.errors(alpha, t).h1)
}

/// Observed rates `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`.
pub fn convergence_rate(hs: &[f64], errors: &[f64]) -> Result<Vec<f64>> {
    if hs.len() != errors.len() || hs.len() < 2 {
        return Err(Error::InvalidParameter(
            "rates need at least two (h, error) pairs of equal length".into(),
        ));
    }
    if hs.iter().chain(errors).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidParameter("rates need positive, finite sizes and errors".into()));
    }
    hs.windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| {
            if h[0] == h[1] {
                Err(Error::InvalidParameter("repeated step size in rate computation".into()))
            } else {
                Ok((e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            }
        })
        .collect()
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_rate(hs: &[f64], errors: &[f64]) -> Result<f64> {
    convergence_rate(hs, errors)?;
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// `|E - E0| / |E0|`, or the absolute difference when `E0 = 0`.
pub fn relative_drift(e: f64, e0: f64) -> f64 {
    if e0 == 0.0 {
        (e - e0).abs()
    } else {
        (e - e0).abs() / e0.abs()
    }
}

/// One observed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub rel_energy_err: f64,
    pub l2_err: Option<f64>,
    pub h1_err: Option<f64>,
    pub fp_iters: usize,
}

/// Time series of observations plus run metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: serde_json::Value,
}

impl Trace {
    pub fn max_rel_energy_err(&self) -> f64 {
        self.records.iter().map(|r| r.rel_energy_err).fold(0.0, f64::max)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with header `step,t,energy,rel_energy_err,l2_err,h1_err,fp_iters`;
    /// error columns are empty without an exact solution.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,t,energy,rel_energy_err,l2_err,h1_err,fp_iters")?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_f64(r.t),
                fmt_f64(r.energy),
                fmt_f64(r.rel_energy_err),
                opt(r.l2_err),
                opt(r.h1_err),
                r.fp_iters
            )?;
        }
        Ok(())
    }
}

/// Builds a [`Trace`] from observed states.
pub struct TraceRecorder<'s, 'p> {
    sys: &'s DiscreteSystem,
    nl: Nonlinearity,
    probe: Option<&'p ErrorProbe<'p>>,
    e0: Option<f64>,
    trace: Trace,
}

impl<'s, 'p> TraceRecorder<'s, 'p> {
    pub fn new(sys: &'s DiscreteSystem, nl: Nonlinearity, probe: Option<&'p ErrorProbe<'p>>) -> Self {
        Self {
            sys,
            nl,
            probe,
            e0: None,
            trace: Trace::default(),
        }
    }

    pub fn observe(&mut self, step: usize, state: &State, fp_iters: usize) -> Result<()> {
        let energy = discrete_energy(self.sys, self.nl, state);
        let e0 = *self.e0.get_or_insert(energy);
        let errs = self.probe.map(|p| p.errors(&state.alpha, state.t));
        self.trace.records.push(TraceRecord {
            step,
            t: state.t,
            energy,
            rel_energy_err: relative_drift(energy, e0),
            l2_err: errs.map(|e| e.l2),
            h1_err: errs.map(|e| e.h1),
            fp_iters,
        });
        Ok(())
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}
