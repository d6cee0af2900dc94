//! Benchmark initial-value problems.

use serde::{Deserialize, Serialize};

use crate::diagnostics::ExactSolution;
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::system::Nonlinearity;

/// Which benchmark, with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemKind {
    /// `u_tt = u_xx`, `u0 = (1 - x^2)_+^{mu+1}`, `u1 = 0`.
    LinearWave { mu: u32 },
    /// Sine-Gordon kink-antikink pair moving apart at speed `zeta`.
    SineGordon { zeta: f64 },
    /// 2D cubic Klein-Gordon with `u0 = 2 sech(cosh(x^2 + y^2))`.
    KleinGordon2d,
}

/// A benchmark: domain of the centers, nonlinearity, final time, and the
/// initial (and where known, exact) data.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    kind: ProblemKind,
    sigma: BoxDomain,
    t_final: f64,
}

impl Problem {
    /// Linear wave on `[-4, 4]` up to `T = 1`.
    pub fn linear_wave(mu: u32) -> Result<Self> {
        Self::linear_wave_on(mu, 4.0, 1.0)
    }

    /// Linear wave on the long window `[-11, 11]` up to `T = 10`.
    pub fn linear_wave_long(mu: u32) -> Result<Self> {
        Self::linear_wave_on(mu, 11.0, 10.0)
    }

    /// Linear wave with centers in `[-half_width, half_width]`.
    pub fn linear_wave_on(mu: u32, half_width: f64, t_final: f64) -> Result<Self> {
        if ![0, 1, 2, 4].contains(&mu) {
            return Err(Error::InvalidParameter(format!("mu must be one of 0, 1, 2, 4 (got {mu})")));
        }
        Self::build(ProblemKind::LinearWave { mu }, BoxDomain::interval(-half_width, half_width)?, t_final)
    }

    /// Sine-Gordon kink-antikink on `[-20, 20]` up to `T = 1`.
    pub fn sine_gordon(zeta: f64) -> Result<Self> {
        Self::sine_gordon_until(zeta, 1.0)
    }

    pub fn sine_gordon_until(zeta: f64, t_final: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::InvalidParameter(format!("zeta must lie in (0, 1) (got {zeta})")));
        }
        Self::build(ProblemKind::SineGordon { zeta }, BoxDomain::interval(-20.0, 20.0)?, t_final)
    }

    /// Cubic Klein-Gordon on `[-10, 10]^2` up to `T = 7`.
    pub fn klein_gordon_2d() -> Result<Self> {
        Self::klein_gordon_2d_until(7.0)
    }

    pub fn klein_gordon_2d_until(t_final: f64) -> Result<Self> {
        Self::build(ProblemKind::KleinGordon2d, BoxDomain::square(-10.0, 10.0)?, t_final)
    }

    fn build(kind: ProblemKind, sigma: BoxDomain, t_final: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be nonnegative (got {t_final})")));
        }
        Ok(Self { kind, sigma, t_final })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::LinearWave { .. } => "linear_wave",
            ProblemKind::SineGordon { .. } => "sine_gordon",
            ProblemKind::KleinGordon2d => "klein_gordon_2d",
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// Box containing the centers.
    pub fn sigma(&self) -> &BoxDomain {
        &self.sigma
    }

    /// Integration box: `Sigma` padded by the kernel support radius.
    pub fn omega(&self, support_radius: f64) -> BoxDomain {
        self.sigma.padded(support_radius)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        match self.kind {
            ProblemKind::LinearWave { .. } => Nonlinearity::Zero,
            ProblemKind::SineGordon { .. } => Nonlinearity::SineGordon,
            ProblemKind::KleinGordon2d => Nonlinearity::Cubic,
        }
    }

    pub fn has_exact(&self) -> bool {
        !matches!(self.kind, ProblemKind::KleinGordon2d)
    }

    /// Initial displacement `u0`.
    pub fn u0(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::LinearWave { mu } => bump(mu, x[0]),
            ProblemKind::SineGordon { .. } => 0.0,
            ProblemKind::KleinGordon2d => kg_u0(x[0], x[1]),
        }
    }

    /// Initial velocity `u1`.
    pub fn u1(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::SineGordon { zeta } => {
                let c = speed(zeta);
                4.0 / (c * (x[0] / c).cosh())
            }
            _ => 0.0,
        }
    }

    /// `grad u0`; unused components are zero.
    pub fn grad_u0(&self, x: &[f64]) -> [f64; 2] {
        match self.kind {
            ProblemKind::LinearWave { mu } => [bump_prime(mu, x[0]), 0.0],
            ProblemKind::SineGordon { .. } => [0.0, 0.0],
            ProblemKind::KleinGordon2d => kg_grad_u0(x[0], x[1]),
        }
    }

    /// `grad u1`; unused components are zero.
    pub fn grad_u1(&self, x: &[f64]) -> [f64; 2] {
        match self.kind {
            ProblemKind::SineGordon { zeta } => {
                let c = speed(zeta);
                let s = x[0] / c;
                [-4.0 * s.tanh() / (c * c * s.cosh()), 0.0]
            }
            _ => [0.0, 0.0],
        }
    }

    /// Points where the 1D initial data lose smoothness.
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            ProblemKind::LinearWave { .. } => vec![-1.0, 1.0],
            _ => Vec::new(),
        }
    }

    /// `u*(x, t)` where known.
    pub fn exact(&self, x: &[f64], t: f64) -> Option<f64> {
        match self.kind {
            ProblemKind::LinearWave { mu } => Some(0.5 * (bump(mu, x[0] - t) + bump(mu, x[0] + t))),
            ProblemKind::SineGordon { zeta } => {
                let c = speed(zeta);
                Some(4.0 * pair_q(zeta, c, x[0], t).atan())
            }
            ProblemKind::KleinGordon2d => None,
        }
    }

    /// `grad_x u*(x, t)` where known.
    pub fn exact_grad(&self, x: &[f64], t: f64) -> Option<[f64; 2]> {
        match self.kind {
            ProblemKind::LinearWave { mu } => Some([0.5 * (bump_prime(mu, x[0] - t) + bump_prime(mu, x[0] + t)), 0.0]),
            ProblemKind::SineGordon { zeta } => {
                let c = speed(zeta);
                let q = pair_q(zeta, c, x[0], t);
                Some([-4.0 / (1.0 + q * q) * q * (x[0] / c).tanh() / c, 0.0])
            }
            ProblemKind::KleinGordon2d => None,
        }
    }

    /// `d/dt u*(x, t)` where known.
    pub fn exact_dt(&self, x: &[f64], t: f64) -> Option<f64> {
        match self.kind {
            ProblemKind::LinearWave { mu } => Some(0.5 * (bump_prime(mu, x[0] + t) - bump_prime(mu, x[0] - t))),
            ProblemKind::SineGordon { zeta } => {
                let c = speed(zeta);
                let q = pair_q(zeta, c, x[0], t);
                Some(4.0 / (1.0 + q * q) * (zeta * t / c).cosh() / (c * (x[0] / c).cosh()))
            }
            ProblemKind::KleinGordon2d => None,
        }
    }

    /// `u`, `u_t`, `grad u` at `t = 0` from the initial data.
    pub fn initial_field(&self, x: &[f64]) -> (f64, f64, [f64; 2]) {
        (self.u0(x), self.u1(x), self.grad_u0(x))
    }
}

/// Exact-solution adapter; panics on problems without one, so check
/// [`Problem::has_exact`] first.
impl ExactSolution for Problem {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        self.exact(x, t).expect("problem has no exact solution")
    }

    fn grad(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let g = self.exact_grad(x, t).expect("problem has no exact solution");
        out.copy_from_slice(&g[..out.len()]);
    }
}

fn bump(mu: u32, x: f64) -> f64 {
    let v = 1.0 - x * x;
    if v > 0.0 {
        v.powi(mu as i32 + 1)
    } else {
        0.0
    }
}

fn bump_prime(mu: u32, x: f64) -> f64 {
    let v = 1.0 - x * x;
    if v > 0.0 {
        -2.0 * (mu as f64 + 1.0) * x * v.powi(mu as i32)
    } else {
        0.0
    }
}

fn speed(zeta: f64) -> f64 {
    (1.0 - zeta * zeta).sqrt()
}

fn pair_q(zeta: f64, c: f64, x: f64, t: f64) -> f64 {
    (zeta * t / c).sinh() / (zeta * (x / c).cosh())
}

// sech(c) underflows long before c = 700; this also keeps sinh finite.
const KG_CUTOFF: f64 = 700.0;

fn kg_u0(x: f64, y: f64) -> f64 {
    let c = (x * x + y * y).cosh();
    if c > KG_CUTOFF {
        0.0
    } else {
        2.0 / c.cosh()
    }
}

fn kg_grad_u0(x: f64, y: f64) -> [f64; 2] {
    let r2 = x * x + y * y;
    let c = r2.cosh();
    if c > KG_CUTOFF {
        return [0.0, 0.0];
    }
    // d/dx 2 sech(cosh r2) = -2 sech(c) tanh(c) sinh(r2) 2x
    let common = -4.0 * r2.sinh() * c.tanh() / c.cosh();
    [common * x, common * y]
}
