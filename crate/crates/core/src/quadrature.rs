//! Quadrature rules `(Z, W)` defining the weighted inner product
//! `(f, g)_W = sum_j w_j f(z_j) g(z_j)` used for every Gramian, projection,
//! and discrete energy.

use crate::centers::tensor_points;
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Points};

/// Nodes and positive weights over a box.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Points,
    weights: Vec<f64>,
    omega: BoxDomain,
}

impl QuadratureRule {
    pub fn new(nodes: Points, weights: Vec<f64>, omega: BoxDomain) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "node and weight counts differ".into(),
            ));
        }
        if nodes.dim() != omega.dim() {
            return Err(Error::InvalidParameter(
                "node dimension does not match the box".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter(
                "quadrature weights must be positive".into(),
            ));
        }
        if let Some(z) = nodes.iter().find(|z| !omega.contains(z)) {
            return Err(Error::InvalidParameter(format!(
                "quadrature node {z:?} outside the integration box"
            )));
        }
        Ok(Self {
            nodes,
            weights,
            omega,
        })
    }

    pub fn nodes(&self) -> &Points {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega(&self) -> &BoxDomain {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(z))
            .sum()
    }

    /// `(f, g)_W` for values sampled at the nodes.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        assert_eq!(f.len(), self.len());
        assert_eq!(g.len(), self.len());
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| w * a * b)
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=20).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Legendre order must lie in [1, 20] (got {order})"
        )));
    }
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { p0 } else { p1 };
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p, d)
}

/// Sorted breakpoints in `[a, b]` including both ends; points outside are
/// clipped and near-duplicates (closer than `1e-12 (b - a)`) merged.
pub fn normalize_breaks(omega: &BoxDomain, breaks: &[f64]) -> Result<Vec<f64>> {
    if omega.dim() != 1 {
        return Err(Error::InvalidParameter(
            "composite Gauss rules are one-dimensional".into(),
        ));
    }
    let (a, b) = (omega.lo()[0], omega.hi()[0]);
    let mut pts: Vec<f64> = breaks
        .iter()
        .filter(|x| x.is_finite())
        .map(|x| x.clamp(a, b))
        .chain([a, b])
        .collect();
    pts.sort_by(f64::total_cmp);
    let gap = 1e-12 * (b - a);
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for x in pts {
        match out.last() {
            Some(last) if x - last <= gap => {}
            _ => out.push(x),
        }
    }
    // The merge may have kept a near-copy of b instead of b itself.
    if let Some(last) = out.last_mut() {
        *last = b;
    }
    out[0] = a;
    Ok(out)
}

fn composite_parts_on(breaks: &[f64], subdivisions: usize, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if subdivisions == 0 {
        return Err(Error::InvalidParameter("need at least one cell".into()));
    }
    let (gx, gw) = gauss_legendre(order)?;
    let pieces = breaks.len().saturating_sub(1);
    let mut xs = Vec::with_capacity(pieces * subdivisions * order);
    let mut ws = Vec::with_capacity(pieces * subdivisions * order);
    for piece in breaks.windows(2) {
        let width = (piece[1] - piece[0]) / subdivisions as f64;
        for c in 0..subdivisions {
            let mid = piece[0] + width * (c as f64 + 0.5);
            for (t, w) in gx.iter().zip(&gw) {
                xs.push(mid + 0.5 * width * t);
                ws.push(0.5 * width * w);
            }
        }
    }
    Ok((xs, ws))
}

fn composite_parts(omega: &BoxDomain, cells: usize, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let breaks = normalize_breaks(omega, &[])?;
    composite_parts_on(&breaks, cells, order)
}

/// Gauss-Legendre rule of the given order on every piece between
/// consecutive breakpoints, each piece split into `subdivisions` equal cells.
/// Placing breakpoints at the kinks of piecewise-polynomial integrands makes
/// the rule exact for them once the order is high enough.
pub fn composite_gauss_breaks(omega: &BoxDomain, breaks: &[f64], subdivisions: usize, order: usize) -> Result<QuadratureRule> {
    let breaks = normalize_breaks(omega, breaks)?;
    let (xs, ws) = composite_parts_on(&breaks, subdivisions, order)?;
    QuadratureRule::new(Points::from_1d(&xs), ws, omega.clone())
}

/// Gauss-Legendre rule of the given order on each of `cells` equal cells.
pub fn composite_gauss_1d(omega: &BoxDomain, cells: usize, order: usize) -> Result<QuadratureRule> {
    let (xs, ws) = composite_parts(omega, cells, order)?;
    QuadratureRule::new(Points::from_1d(&xs), ws, omega.clone())
}

/// A named 1D integrand driving [`refine_until`].
pub struct ProbeIntegrand {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ProbeIntegrand {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl std::fmt::Debug for ProbeIntegrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProbeIntegrand").field("name", &self.name).finish()
    }
}

/// Settings for [`refine_until`].
#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub initial_cells: usize,
    pub order: usize,
    pub max_levels: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            initial_cells: 16,
            order: 6,
            max_levels: 20,
        }
    }
}

/// Outcome of [`refine_until`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub rule: QuadratureRule,
    pub cells: usize,
    pub levels: usize,
    /// Final probe-integral estimates, one per integrand.
    pub estimates: Vec<f64>,
}

/// Doubles the composite-Gauss cell count until every probe integral changes
/// by less than `max(rtol |value|, atol)` between successive levels, and
/// returns the finer rule of the accepted pair.
pub fn refine_until(
    omega: &BoxDomain,
    probes: &[ProbeIntegrand],
    rtol: f64,
    atol: f64,
    opts: RefineOptions,
) -> Result<Refinement> {
    refine_until_breaks(omega, &[], probes, rtol, atol, opts)
}

/// [`refine_until`] on a breakpoint-aligned rule: every piece between
/// breakpoints starts with `opts.initial_cells` cells and all pieces are
/// split together.
pub fn refine_until_breaks(
    omega: &BoxDomain,
    breaks: &[f64],
    probes: &[ProbeIntegrand],
    rtol: f64,
    atol: f64,
    opts: RefineOptions,
) -> Result<Refinement> {
    if !(rtol >= 0.0 && atol >= 0.0) || (rtol == 0.0 && atol == 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerances must be nonnegative and not both zero (rtol={rtol}, atol={atol})"
        )));
    }
    if probes.is_empty() {
        return Err(Error::InvalidParameter("no probe integrands".into()));
    }
    let breaks = normalize_breaks(omega, breaks)?;
    let pieces = breaks.len() - 1;
    let estimate = |sub: usize| -> Result<Vec<f64>> {
        let (xs, ws) = composite_parts_on(&breaks, sub, opts.order)?;
        Ok(probes
            .iter()
            .map(|p| xs.iter().zip(&ws).map(|(x, w)| w * (p.f)(*x)).sum())
            .collect())
    };
    let mut sub = opts.initial_cells.max(1);
    let mut prev = estimate(sub)?;
    let mut worst = (String::new(), f64::INFINITY);
    for level in 1..=opts.max_levels {
        sub *= 2;
        let cur = estimate(sub)?;
        worst = (String::new(), 0.0);
        let mut ok = true;
        for ((p, a), b) in probes.iter().zip(&prev).zip(&cur) {
            let change = (a - b).abs();
            if change > (rtol * b.abs()).max(atol) {
                ok = false;
            }
            if change >= worst.1 {
                worst = (p.name.clone(), change);
            }
        }
        if ok {
            let (xs, ws) = composite_parts_on(&breaks, sub, opts.order)?;
            return Ok(Refinement {
                rule: QuadratureRule::new(Points::from_1d(&xs), ws, omega.clone())?,
                cells: sub * pieces,
                levels: level,
                estimates: cur,
            });
        }
        prev = cur;
    }
    Err(Error::QuadratureNotConverged {
        levels: opts.max_levels,
        worst: worst.0,
        change: worst.1,
    })
}

/// Cell-centered midpoint rule with `n_per_axis` equal cells along every axis.
pub fn uniform_midpoint(omega: &BoxDomain, n_per_axis: usize) -> Result<QuadratureRule> {
    if n_per_axis < 1 {
        return Err(Error::InvalidParameter("need at least one cell".into()));
    }
    let axes: Vec<Vec<f64>> = (0..omega.dim())
        .map(|i| {
            let (a, b) = (omega.lo()[i], omega.hi()[i]);
            let h = (b - a) / n_per_axis as f64;
            (0..n_per_axis).map(|j| a + h * (j as f64 + 0.5)).collect()
        })
        .collect();
    let nodes = tensor_points(&axes);
    let w = omega.measure() / nodes.len() as f64;
    let weights = vec![w; nodes.len()];
    QuadratureRule::new(nodes, weights, omega.clone())
}

/// Cell-centered `n x n` grid over a 2D box, every weight the cell area.
pub fn tensor_uniform_2d(omega: &BoxDomain, n_per_axis: usize) -> Result<QuadratureRule> {
    if omega.dim() != 2 {
        return Err(Error::InvalidParameter("tensor rule needs a 2D box".into()));
    }
    if n_per_axis < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 cells per axis (got {n_per_axis})"
        )));
    }
    uniform_midpoint(omega, n_per_axis)
}
