//! Turns a problem, kernel, center layout and quadrature settings into an
//! assembled system with Ritz-projected initial coefficients.

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, AssemblyOptions, DiscreteSystem};
use crate::centers::{chebyshev_centers, halton_centers, uniform_centers, CenterSet};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Points};
use crate::kernel::Kernel;
use crate::problems::Problem;
use crate::quadrature::{refine_until_breaks, tensor_uniform_2d, ProbeIntegrand, QuadratureRule, RefineOptions};
use crate::system::{ritz_initial_conditions, State};

/// Center layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterKind {
    Uniform,
    /// Chebyshev points of the second kind (1D only).
    Chebyshev,
    Halton,
}

impl CenterKind {
    pub fn name(&self) -> &'static str {
        match self {
            CenterKind::Uniform => "uniform",
            CenterKind::Chebyshev => "chebyshev",
            CenterKind::Halton => "halton",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(CenterKind::Uniform),
            "chebyshev" => Some(CenterKind::Chebyshev),
            "halton" => Some(CenterKind::Halton),
            _ => None,
        }
    }
}

/// Centers: layout and count per axis (Halton draws `n^d` points).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub kind: CenterKind,
    pub n: usize,
}

pub fn make_centers(sigma: &BoxDomain, spec: CenterSpec) -> Result<CenterSet> {
    let d = sigma.dim();
    match spec.kind {
        CenterKind::Uniform => uniform_centers(sigma, &vec![spec.n; d]),
        CenterKind::Chebyshev => {
            if d != 1 {
                return Err(Error::InvalidParameter("chebyshev centers are 1D only".into()));
            }
            chebyshev_centers(sigma, spec.n)
        }
        CenterKind::Halton => halton_centers(sigma, spec.n.pow(d as u32)),
    }
}

/// Quadrature settings: adaptive composite Gauss in 1D, a uniform midpoint
/// grid in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub rtol: f64,
    pub atol: f64,
    /// Gauss order per cell; zero picks the order that integrates kernel
    /// products exactly.
    pub order: usize,
    /// Starting cells per breakpoint interval.
    pub initial_cells: usize,
    pub max_levels: usize,
    /// 2D nodes per axis.
    pub n_per_axis: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-14,
            order: 0,
            initial_cells: 1,
            max_levels: 12,
            n_per_axis: 64,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= 0.0 && self.atol >= 0.0) || (self.rtol == 0.0 && self.atol == 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerances must be nonnegative and not both zero".into()));
        }
        if self.order > 20 {
            return Err(Error::InvalidParameter(format!("quadrature order must lie in 0..=20 (got {})", self.order)));
        }
        if self.initial_cells < 1 {
            return Err(Error::InvalidParameter("quadrature initial_cells must be at least 1".into()));
        }
        if self.n_per_axis < 2 {
            return Err(Error::InvalidParameter("2D quadrature needs at least 2 nodes per axis".into()));
        }
        Ok(())
    }
}

/// Gauss order that integrates products of two kernel profiles exactly on
/// breakpoint-aligned pieces.
pub fn exact_product_order(kernel: &Kernel) -> usize {
    (kernel.degree() + 1).min(20)
}

/// Composite Gauss rule on `omega` with breakpoints at every center, at the
/// edges of every kernel support, and at the kinks of the initial data, so
/// the Gramians are integrated exactly. Cells are split until the probe
/// family (kernel products for a few neighboring center pairs, gradient
/// products, Ritz loads of the initial data near the origin, and the
/// initial energy density) stabilizes.
pub fn adaptive_rule_1d(
    problem: &Problem,
    kernel: &Kernel,
    centers: &CenterSet,
    omega: &BoxDomain,
    spec: &QuadratureSpec,
) -> Result<(QuadratureRule, usize)> {
    let xs: Vec<f64> = centers.points().iter().map(|p| p[0]).collect();
    let n = xs.len();
    let radius = kernel.support_radius();
    let mut breaks: Vec<f64> = Vec::with_capacity(3 * n + 2);
    for x in &xs {
        breaks.extend([x - radius, *x, x + radius]);
    }
    breaks.extend(problem.kinks());

    let mut probes = Vec::new();
    let picks = if n < 2 { vec![0] } else { (0..5).map(|k| k * (n - 2) / 4).collect::<Vec<_>>() };
    for i in picks {
        let j = (i + 1).min(n - 1);
        let (xi, xj) = (xs[i], xs[j]);
        let (k1, k2) = (kernel.clone(), kernel.clone());
        probes.push(ProbeIntegrand::new(format!("phi_{i} phi_{j}"), move |z: f64| {
            k1.value(&[z - xi]) * k1.value(&[z - xj])
        }));
        probes.push(ProbeIntegrand::new(format!("grad phi_{i} grad phi_{j}"), move |z: f64| {
            k2.grad(&[z - xi])[0] * k2.grad(&[z - xj])[0]
        }));
    }
    for target in [-0.5, 0.0, 0.5] {
        let i = (0..n)
            .min_by(|a, b| (xs[*a] - target).abs().total_cmp(&(xs[*b] - target).abs()))
            .unwrap_or(0);
        let xi = xs[i];
        let (k1, p1) = (kernel.clone(), problem.clone());
        probes.push(ProbeIntegrand::new(format!("ritz load u0 on phi_{i}"), move |z: f64| {
            k1.grad(&[z - xi])[0] * p1.grad_u0(&[z])[0]
        }));
        let (k2, p2) = (kernel.clone(), problem.clone());
        probes.push(ProbeIntegrand::new(format!("ritz load u1 on phi_{i}"), move |z: f64| {
            k2.grad(&[z - xi])[0] * p2.grad_u1(&[z])[0]
        }));
    }
    let p = problem.clone();
    let nl = problem.nonlinearity();
    probes.push(ProbeIntegrand::new("initial energy density", move |z: f64| {
        let x = [z];
        let g = p.grad_u0(&x)[0];
        let v = p.u1(&x);
        0.5 * v * v + 0.5 * g * g + nl.potential(p.u0(&x))
    }));
    let order = if spec.order == 0 { exact_product_order(kernel) } else { spec.order };
    let opts = RefineOptions {
        initial_cells: spec.initial_cells.max(1),
        order,
        max_levels: spec.max_levels,
    };
    let r = refine_until_breaks(omega, &breaks, &probes, spec.rtol, spec.atol, opts)?;
    log::debug!("quadrature accepted after {} levels with {} cells", r.levels, r.cells);
    Ok((r.rule, r.levels))
}

/// An assembled problem ready for time stepping.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub problem: Problem,
    pub system: DiscreteSystem,
    pub state0: State,
    /// Refinement levels used by the adaptive 1D rule (0 in 2D).
    pub quadrature_levels: usize,
}

impl Simulation {
    pub fn build(
        problem: &Problem,
        kernel: &Kernel,
        centers: CenterSpec,
        quad: &QuadratureSpec,
        assembly: AssemblyOptions,
    ) -> Result<Self> {
        quad.validate()?;
        if kernel.dim() != problem.dim() {
            return Err(Error::InvalidParameter(format!(
                "kernel dimension {} does not match the {}D problem",
                kernel.dim(),
                problem.dim()
            )));
        }
        let centers = make_centers(problem.sigma(), centers)?;
        Self::build_with_centers(problem, kernel, centers, quad, assembly)
    }

    pub fn build_with_centers(
        problem: &Problem,
        kernel: &Kernel,
        centers: CenterSet,
        quad: &QuadratureSpec,
        assembly: AssemblyOptions,
    ) -> Result<Self> {
        let omega = problem.omega(kernel.support_radius());
        warn_if_leaving(problem, kernel, &omega);
        let (rule, levels) = match problem.dim() {
            1 => adaptive_rule_1d(problem, kernel, &centers, &omega, quad)?,
            _ => (tensor_uniform_2d(&omega, quad.n_per_axis)?, 0),
        };
        let system = assemble(kernel, &centers, &rule, assembly)?;
        let state0 = initial_state(problem, &system)?;
        Ok(Self {
            problem: problem.clone(),
            system,
            state0,
            quadrature_levels: levels,
        })
    }
}

/// Ritz projections of `u0` and `u1` from their analytic gradients.
pub fn initial_state(problem: &Problem, sys: &DiscreteSystem) -> Result<State> {
    let d = sys.dim();
    let nodes: &Points = sys.rule().nodes();
    let mut g0 = vec![Vec::with_capacity(nodes.len()); d];
    let mut g1 = vec![Vec::with_capacity(nodes.len()); d];
    for z in nodes.iter() {
        let a = problem.grad_u0(z);
        let b = problem.grad_u1(z);
        for k in 0..d {
            g0[k].push(a[k]);
            g1[k].push(b[k]);
        }
    }
    let (alpha, beta) = ritz_initial_conditions(sys, &g0, &g1)?;
    Ok(State::new(0.0, alpha, beta))
}

// Linear waves with compact data travel at unit speed; warn when the front
// plus one kernel radius would reach the edge of the quadrature box by T.
fn warn_if_leaving(problem: &Problem, kernel: &Kernel, omega: &BoxDomain) {
    if let crate::problems::ProblemKind::LinearWave { .. } = problem.kind() {
        let reach = 1.0 + problem.t_final() + kernel.support_radius();
        if reach > omega.hi()[0] {
            log::warn!(
                "solution support may reach the boundary: 1 + T + radius = {reach} exceeds {}",
                omega.hi()[0]
            );
        }
    }
}
