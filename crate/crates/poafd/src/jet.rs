//! Truncated bivariate Taylor arithmetic.
//!
//! `Jet2` carries the value of a quantity together with its partial
//! derivatives up to degree [`DEG`] in each of two perturbation variables
//! (σ, τ). Evaluating a kernel formula with `q + σ·θ_a` and `p + τ·θ_b`
//! therefore yields every mixed directional derivative
//! ∂_σ^i ∂_τ^j K at machine precision, with no step-size tuning.
//!
//! All nonlinear primitives (recip, exp, ln, powf) reduce to finite series
//! in the nilpotent part, so the results are exact up to truncation order.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum derivative degree carried per perturbation variable.
pub const DEG: usize = 4;
const N: usize = DEG + 1;

/// Scalar abstraction so kernel formulas can be written once and evaluated
/// either on plain `f64` or on jets.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn scale(self, v: f64) -> Self;
    fn exp(self) -> Self;
    /// Real power; the base must have a positive value part.
    fn powf(self, e: f64) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn scale(self, v: f64) -> Self {
        self * v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Bivariate jet: `c[i][j]` is the Taylor coefficient of σ^i τ^j.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub c: [[f64; N]; N],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        let mut c = [[0.0; N]; N];
        c[0][0] = v;
        Jet2 { c }
    }

    /// Jet for the quantity `v + slope_sigma·σ + slope_tau·τ`.
    pub fn variable(v: f64, slope_sigma: f64, slope_tau: f64) -> Self {
        let mut c = [[0.0; N]; N];
        c[0][0] = v;
        c[1][0] = slope_sigma;
        c[0][1] = slope_tau;
        Jet2 { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0][0]
    }

    /// Mixed partial derivative ∂_σ^i ∂_τ^j of the represented quantity.
    pub fn derivative(&self, i: usize, j: usize) -> f64 {
        assert!(i <= DEG && j <= DEG, "jet order exceeded");
        self.c[i][j] * factorial(i) * factorial(j)
    }

    /// Nilpotent part (value coefficient removed).
    fn nilpotent(&self) -> Jet2 {
        let mut out = *self;
        out.c[0][0] = 0.0;
        out
    }

    /// Σ_{k=0..2·DEG} coeffs[k]·u^k for nilpotent u; 2·DEG powers suffice
    /// because u^k vanishes entirely once k exceeds the grid's total degree.
    fn nilpotent_series(u: Jet2, coeffs: &[f64]) -> Jet2 {
        let mut acc = Jet2::constant(coeffs[0]);
        let mut pow = Jet2::constant(1.0);
        for &a in &coeffs[1..] {
            pow = pow * u;
            acc = acc + pow.scale(a);
        }
        acc
    }

    fn recip(self) -> Jet2 {
        let v = self.value();
        assert!(v != 0.0, "jet reciprocal of zero value");
        let u = self.nilpotent().scale(1.0 / v);
        // 1/(v(1+u)) = (1/v)·Σ (−u)^k
        let mut coeffs = [0.0; 2 * DEG + 1];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        Self::nilpotent_series(u, &coeffs).scale(1.0 / v)
    }

    fn ln(self) -> Jet2 {
        let v = self.value();
        assert!(v > 0.0, "jet log of non-positive value");
        let u = self.nilpotent().scale(1.0 / v);
        // ln(v(1+u)) = ln v + Σ (−1)^{k+1} u^k / k
        let mut coeffs = [0.0; 2 * DEG + 1];
        coeffs[0] = v.ln();
        for k in 1..coeffs.len() {
            coeffs[k] = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
        }
        Self::nilpotent_series(u, &coeffs)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.c[i][j] += rhs.c[i][j];
            }
        }
        out
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.c[i][j] -= rhs.c[i][j];
            }
        }
        out
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.c[i][j] = -out.c[i][j];
            }
        }
        out
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let mut c = [[0.0; N]; N];
        for i1 in 0..N {
            for j1 in 0..N {
                let a = self.c[i1][j1];
                if a == 0.0 {
                    continue;
                }
                for i2 in 0..N - i1 {
                    for j2 in 0..N - j1 {
                        c[i1 + i2][j1 + j2] += a * rhs.c[i2][j2];
                    }
                }
            }
        }
        Jet2 { c }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        self * rhs.recip()
    }
}

impl Scalar for Jet2 {
    fn from_f64(v: f64) -> Self {
        Jet2::constant(v)
    }

    fn scale(self, v: f64) -> Self {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.c[i][j] *= v;
            }
        }
        out
    }

    fn exp(self) -> Self {
        let v = self.value();
        let u = self.nilpotent();
        // e^{v+u} = e^v · Σ u^k / k!
        let mut coeffs = [0.0; 2 * DEG + 1];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = 1.0 / factorial(k);
        }
        Self::nilpotent_series(u, &coeffs).scale(v.exp())
    }

    fn powf(self, e: f64) -> Self {
        (self.ln().scale(e)).exp()
    }

    fn sqrt(self) -> Self {
        self.powf(0.5)
    }
}
