//! Compactly supported Wendland kernels `phi_{s,k}` and their gradients.
//!
//! A kernel is the radial profile `phi_{s,k}(r)` on the scaled radius
//! `r = epsilon * |x|`, supported on `r < 1`. For `k = 1, 2` the profile is
//!
//! ```text
//! phi_{s,1}(r) = (1-r)_+^{l+1} ((l+1) r + 1)
//! phi_{s,2}(r) = (1-r)_+^{l+2} ((l^2+4l+3) r^2 + (3l+6) r + 3)
//! ```
//!
//! with `l = floor(s/2) + k + 1`. Used as a kernel on `R^d` with `d <= s` it
//! reproduces a Sobolev space of order `m = d/2 + k + 1/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn horner(&self, r: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    fn derivative(&self) -> Poly {
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        )
    }

    fn scale(&self, a: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * a).collect())
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|i| self.0.get(i).unwrap_or(&0.0) + other.0.get(i).unwrap_or(&0.0))
                .collect(),
        )
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }
}

/// Wendland kernel `Phi(x) = phi_{s,k}(epsilon |x|)` on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParams", into = "KernelParams")]
pub struct Kernel {
    s: u32,
    k: u32,
    epsilon: f64,
    d: usize,
    /// Exponent `p` of the `(1-r)^p` factor.
    power: i32,
    /// Cofactor `q` so that `phi = (1-r)^p q(r)`.
    cofactor: Poly,
    /// Cofactor `g` so that `phi'(r) = r (1-r)^{p-1} g(r)`.
    slope_cofactor: Poly,
}

/// Serialized form of a [`Kernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub s: u32,
    pub k: u32,
    pub epsilon: f64,
    pub d: usize,
}

impl TryFrom<KernelParams> for Kernel {
    type Error = Error;

    fn try_from(p: KernelParams) -> Result<Self> {
        Kernel::new(p.s, p.k, p.epsilon, p.d)
    }
}

impl From<Kernel> for KernelParams {
    fn from(k: Kernel) -> Self {
        k.params()
    }
}

impl Kernel {
    pub fn new(s: u32, k: u32, epsilon: f64, d: usize) -> Result<Self> {
        if !(k == 1 || k == 2) {
            return Err(Error::InvalidParameter(format!(
                "Wendland smoothness k must be 1 or 2 (got {k})"
            )));
        }
        if !(d == 1 || d == 2) {
            return Err(Error::InvalidParameter(format!(
                "spatial dimension must be 1 or 2 (got {d})"
            )));
        }
        if (s as usize) < d {
            return Err(Error::InvalidParameter(format!(
                "embedding dimension s={s} is smaller than d={d}"
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "shape parameter must be positive (got {epsilon})"
            )));
        }
        let l = (s / 2 + k + 1) as f64;
        let (power, cofactor) = match k {
            1 => (l as i32 + 1, Poly(vec![1.0, l + 1.0])),
            _ => (
                l as i32 + 2,
                Poly(vec![3.0, 3.0 * l + 6.0, l * l + 4.0 * l + 3.0]),
            ),
        };
        // phi' = (1-r)^{p-1} [ -p q + (1-r) q' ]; the bracket vanishes at r = 0.
        let one_minus_r = Poly(vec![1.0, -1.0]);
        let bracket = cofactor
            .scale(-(power as f64))
            .add(&one_minus_r.mul(&cofactor.derivative()));
        debug_assert!(bracket.0[0].abs() < 1e-12);
        let slope_cofactor = Poly(bracket.0[1..].to_vec());
        Ok(Self {
            s,
            k,
            epsilon,
            d,
            power,
            cofactor,
            slope_cofactor,
        })
    }

    pub fn params(&self) -> KernelParams {
        KernelParams {
            s: self.s,
            k: self.k,
            epsilon: self.epsilon,
            d: self.d,
        }
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `l = floor(s/2) + k + 1`.
    pub fn ell(&self) -> u32 {
        self.s / 2 + self.k + 1
    }

    /// Sobolev order `m = d/2 + k + 1/2` of the native space on `R^d`.
    pub fn smoothness(&self) -> f64 {
        self.d as f64 / 2.0 + self.k as f64 + 0.5
    }

    /// Physical support radius `1/epsilon`.
    /// Polynomial degree of the profile on `[0, 1]`.
    pub fn degree(&self) -> usize {
        self.power as usize + self.cofactor.0.len() - 1
    }

    pub fn support_radius(&self) -> f64 {
        1.0 / self.epsilon
    }

    /// Radial profile at an already scaled radius, rejecting negative input.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::Domain(format!(
                "kernel radius must be nonnegative (got {r})"
            )));
        }
        Ok(self.profile(r))
    }

    /// Radial profile `phi(r)` for `r >= 0`.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        (1.0 - r).powi(self.power) * self.cofactor.horner(r)
    }

    /// Radial derivative `phi'(r)` for `r >= 0`.
    #[inline]
    pub fn profile_derivative(&self, r: f64) -> f64 {
        r * self.slope_over_r(r)
    }

    /// `phi'(r) / r`, a polynomial on `[0, 1)`.
    #[inline]
    fn slope_over_r(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        (1.0 - r).powi(self.power - 1) * self.slope_cofactor.horner(r)
    }

    /// `Phi(x) = phi(epsilon |x|)` for a displacement `x`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.profile(self.epsilon * r)
    }

    /// Writes `grad Phi(x) = epsilon^2 (phi'(r)/r) x` into `out`.
    #[inline]
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = self.epsilon * self.epsilon * self.slope_over_r(self.epsilon * r);
        for (o, v) in out.iter_mut().zip(x) {
            *o = f * v;
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// Value and gradient together.
    #[inline]
    pub fn value_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let er = self.epsilon * r;
        if er >= 1.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return 0.0;
        }
        let f = self.epsilon * self.epsilon * self.slope_over_r(er);
        for (o, v) in grad.iter_mut().zip(x) {
            *o = f * v;
        }
        self.profile(er)
    }
}
