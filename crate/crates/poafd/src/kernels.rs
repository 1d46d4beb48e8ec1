//! Reproducing kernels for the four dictionary families.
//!
//! Each family gives a parameterized set {h_q} in an L² boundary space and
//! the induced reproducing kernel K(q,p) = ⟨h_q, h_p⟩. For the Poisson
//! half-space, heat, and spherical Poisson families K has a closed form via
//! the respective semigroup identity; the general convolution family is
//! evaluated by product quadrature on a configured grid.
//!
//! Closed-form kernels are written once over the [`Scalar`] trait so that the
//! same code yields values (`f64`) and parameter derivatives ([`Jet2`]) for
//! multiple kernels.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet2, Scalar, DEG};

/// Which dictionary is in force.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    PoissonHalfSpace,
    HeatHalfSpace,
    SphericalPoisson,
    Convolution,
}

impl FamilyKind {
    pub fn is_half_space(self) -> bool {
        !matches!(self, FamilyKind::SphericalPoisson)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FamilyKind::PoissonHalfSpace => "poisson",
            FamilyKind::HeatHalfSpace => "heat",
            FamilyKind::SphericalPoisson => "sphere",
            FamilyKind::Convolution => "convolution",
        };
        write!(f, "{name}")
    }
}

/// Γ(k/2) for positive integer k, exact for integer and half-integer
/// arguments (the only ones the normalization constants need).
pub(crate) fn gamma_half(k: u32) -> f64 {
    assert!(k >= 1);
    if k % 2 == 0 {
        // Γ(n) = (n−1)!
        let n = k / 2;
        (1..n).map(|i| i as f64).product()
    } else {
        // Γ(n + 1/2) = (2n)! / (4^n n!) · √π
        let n = (k - 1) / 2;
        let mut v = PI.sqrt();
        for i in 1..=n {
            // multiply by (i − 1/2)
            v *= i as f64 - 0.5;
        }
        v
    }
}

/// Poisson half-space normalization Γ((d+1)/2)/π^((d+1)/2), which makes the
/// boundary kernel integrate to one.
pub fn poisson_constant(d: usize) -> f64 {
    gamma_half(d as u32 + 1) / PI.powf((d as f64 + 1.0) / 2.0)
}

/// Composite quadrature rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadRule {
    Midpoint,
    Trapezoid,
}

/// Tensor-product quadrature grid over a box in R^d.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub steps: Vec<usize>,
    pub rule: QuadRule,
}

impl BoxGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, steps: Vec<usize>, rule: QuadRule) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != steps.len() || lo.is_empty() {
            return Err(Error::Config("box grid axis mismatch".into()));
        }
        for i in 0..lo.len() {
            if !(lo[i] < hi[i]) {
                return Err(Error::Config(format!("empty box axis {i}")));
            }
            if steps[i] < 16 {
                return Err(Error::Config(format!(
                    "axis {i} has {} steps, need at least 16",
                    steps[i]
                )));
            }
        }
        Ok(BoxGrid { lo, hi, steps, rule })
    }

    /// Symmetric box [−half_width, half_width]^d.
    pub fn symmetric(d: usize, half_width: f64, steps_per_axis: usize, rule: QuadRule) -> Result<Self> {
        BoxGrid::new(
            vec![-half_width; d],
            vec![half_width; d],
            vec![steps_per_axis; d],
            rule,
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Same box with every axis count doubled, for a-posteriori estimates.
    pub fn refined(&self) -> Self {
        BoxGrid {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            steps: self.steps.iter().map(|&s| s * 2).collect(),
            rule: self.rule,
        }
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let d = self.dim();
        let h: Vec<f64> = (0..d)
            .map(|i| (self.hi[i] - self.lo[i]) / self.steps[i] as f64)
            .collect();
        let cell: f64 = h.iter().product();
        let counts: Vec<usize> = match self.rule {
            QuadRule::Midpoint => self.steps.clone(),
            QuadRule::Trapezoid => self.steps.iter().map(|&s| s + 1).collect(),
        };
        let mut idx = vec![0usize; d];
        let mut point = vec![0.0; d];
        let mut sum = 0.0;
        loop {
            let mut w = cell;
            for i in 0..d {
                match self.rule {
                    QuadRule::Midpoint => point[i] = self.lo[i] + (idx[i] as f64 + 0.5) * h[i],
                    QuadRule::Trapezoid => {
                        point[i] = self.lo[i] + idx[i] as f64 * h[i];
                        if idx[i] == 0 || idx[i] == self.steps[i] {
                            w *= 0.5;
                        }
                    }
                }
            }
            sum += w * f(&point);
            // advance multi-index
            let mut axis = d;
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    axis = i;
                    break;
                }
                idx[i] = 0;
            }
            if axis == d {
                break;
            }
        }
        sum
    }
}

/// Profile φ of a general convolution kernel, with its decay exponent δ and
/// radial majorant constant C: |φ(y)| ≤ C(1+|y|²)^(−(d+δ)/2).
#[derive(Clone)]
pub struct ConvolutionProfile {
    phi: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub delta: f64,
    pub majorant_constant: f64,
    pub name: String,
}

impl fmt::Debug for ConvolutionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvolutionProfile")
            .field("name", &self.name)
            .field("delta", &self.delta)
            .field("majorant_constant", &self.majorant_constant)
            .finish()
    }
}

impl ConvolutionProfile {
    /// Validates ∫φ = 1 by quadrature and spot-checks the decay majorant on
    /// a sample of radii and directions.
    pub fn new(
        name: impl Into<String>,
        phi: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        delta: f64,
        majorant_constant: f64,
        check_grid: &BoxGrid,
    ) -> Result<Self> {
        if delta <= 0.0 {
            return Err(Error::InvalidProfile("delta must be positive".into()));
        }
        if majorant_constant <= 0.0 {
            return Err(Error::InvalidProfile("majorant constant must be positive".into()));
        }
        let d = check_grid.dim();
        let mass = check_grid.integrate(|x| phi(x));
        // Mass missed outside the check box, bounded through the majorant:
        // ∫_{|x|>R} C |x|^{-(d+δ)} dx = C σ_{d-1} R^{-δ} / δ.
        let r_in = (0..d)
            .map(|i| (-check_grid.lo[i]).min(check_grid.hi[i]))
            .fold(f64::INFINITY, f64::min);
        if r_in <= 1.0 {
            return Err(Error::InvalidProfile(
                "check grid must contain the unit ball".into(),
            ));
        }
        let sphere_area = 2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d as u32);
        let tail = majorant_constant * sphere_area * r_in.powf(-delta) / delta;
        if (mass - 1.0).abs() > 1e-6 + tail {
            return Err(Error::InvalidProfile(format!(
                "profile mass {mass:.8} differs from 1 by more than the \
                 quadrature tail allowance {tail:.2e}"
            )));
        }
        let exponent = -(d as f64 + delta) / 2.0;
        let mut x = vec![0.0; d];
        for k in 0..40 {
            let r = 0.25 * (k as f64 + 1.0);
            for axis in 0..d {
                x.iter_mut().for_each(|c| *c = 0.0);
                x[axis] = r;
                let bound = majorant_constant * (1.0 + r * r).powf(exponent);
                if phi(&x).abs() > bound * (1.0 + 1e-12) {
                    return Err(Error::InvalidProfile(format!(
                        "majorant violated at radius {r}: |phi| = {} > {bound}",
                        phi(&x).abs()
                    )));
                }
            }
        }
        Ok(ConvolutionProfile {
            phi,
            delta,
            majorant_constant,
            name: name.into(),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }

    /// Poisson boundary profile φ(x) = c_d (1+|x|²)^(−(d+1)/2); decay δ = 1.
    pub fn poisson(d: usize, check_grid: &BoxGrid) -> Result<Self> {
        let c = poisson_constant(d);
        let exp = -(d as f64 + 1.0) / 2.0;
        Self::new(
            "poisson",
            Arc::new(move |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                c * (1.0 + r2).powf(exp)
            }),
            1.0,
            c * 1.001,
            check_grid,
        )
    }

    /// Gaussian profile (4π)^{-d/2} e^{−|x|²/4}; decays faster than any
    /// polynomial, registered here with δ = 4.
    pub fn gaussian(d: usize, check_grid: &BoxGrid) -> Result<Self> {
        let c = (4.0 * PI).powf(-(d as f64) / 2.0);
        Self::new(
            "gaussian",
            Arc::new(move |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                c * (-r2 / 4.0).exp()
            }),
            4.0,
            1.0,
            check_grid,
        )
    }
}

/// Dictionary family: kernel kind, boundary dimension and constants.
#[derive(Clone, Debug)]
pub struct KernelFamily {
    pub kind: FamilyKind,
    pub d: usize,
    pub c_d: f64,
    pub profile: Option<ConvolutionProfile>,
    pub quad: Option<BoxGrid>,
}

impl KernelFamily {
    pub fn poisson_half_space(d: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter("poisson family needs d >= 1".into()));
        }
        Ok(KernelFamily {
            kind: FamilyKind::PoissonHalfSpace,
            d,
            c_d: poisson_constant(d),
            profile: None,
            quad: None,
        })
    }

    pub fn heat_half_space(d: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter("heat family needs d >= 1".into()));
        }
        // No free constant: (4πt)^{−d/2} is carried explicitly by the kernel.
        Ok(KernelFamily {
            kind: FamilyKind::HeatHalfSpace,
            d,
            c_d: 1.0,
            profile: None,
            quad: None,
        })
    }

    /// d is the ambient ball dimension (boundary sphere S^{d−1}); the
    /// normalized surface measure convention fixes c_d = 1.
    pub fn spherical_poisson(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameter("spherical family needs d >= 2".into()));
        }
        Ok(KernelFamily {
            kind: FamilyKind::SphericalPoisson,
            d,
            c_d: 1.0,
            profile: None,
            quad: None,
        })
    }

    pub fn convolution(d: usize, profile: ConvolutionProfile, quad: BoxGrid) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter("convolution family needs d >= 1".into()));
        }
        if quad.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: quad.dim(),
            });
        }
        Ok(KernelFamily {
            kind: FamilyKind::Convolution,
            d,
            c_d: 1.0,
            profile: Some(profile),
            quad: Some(quad),
        })
    }

    /// Dimension of the parameter space (search/derivative directions live
    /// here): d+1 for half-space kinds, d for the ball.
    pub fn param_dim(&self) -> usize {
        if self.kind.is_half_space() {
            self.d + 1
        } else {
            self.d
        }
    }

    /// Dimension of a boundary point: d for half-space kinds (point in R^d),
    /// d for the ball (unit vector in R^d).
    pub fn boundary_dim(&self) -> usize {
        self.d
    }
}

/// A dictionary parameter: half-space point (t, x) or ball point (ρ, s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamPoint {
    HalfSpace { t: f64, x: Vec<f64> },
    Ball { rho: f64, s: Vec<f64> },
}

impl ParamPoint {
    pub fn half_space(t: f64, x: Vec<f64>) -> Self {
        ParamPoint::HalfSpace { t, x }
    }

    pub fn ball(rho: f64, s: Vec<f64>) -> Self {
        ParamPoint::Ball { rho, s }
    }

    pub fn validate(&self, family: &KernelFamily) -> Result<()> {
        match self {
            ParamPoint::HalfSpace { t, x } => {
                if !family.kind.is_half_space() {
                    return Err(Error::MixedPointKinds);
                }
                if x.len() != family.d {
                    return Err(Error::DimensionMismatch {
                        expected: family.d,
                        got: x.len(),
                    });
                }
                if !(*t > 0.0) {
                    return Err(Error::InvalidParameter(format!("t = {t} must be positive")));
                }
            }
            ParamPoint::Ball { rho, s } => {
                if family.kind.is_half_space() {
                    return Err(Error::MixedPointKinds);
                }
                if s.len() != family.d {
                    return Err(Error::DimensionMismatch {
                        expected: family.d,
                        got: s.len(),
                    });
                }
                if !(*rho >= 0.0 && *rho < 1.0) {
                    return Err(Error::InvalidParameter(format!("rho = {rho} must lie in [0,1)")));
                }
                let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "|s| = {norm} deviates from 1 beyond 1e-12"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cartesian embedding of the parameter: (t, x…) ∈ R^{d+1} for
    /// half-space points, w = ρ·s ∈ R^d for ball points. Directional
    /// derivatives and the search refinement work in these coordinates.
    pub fn embed(&self) -> Vec<f64> {
        match self {
            ParamPoint::HalfSpace { t, x } => {
                let mut v = Vec::with_capacity(x.len() + 1);
                v.push(*t);
                v.extend_from_slice(x);
                v
            }
            ParamPoint::Ball { rho, s } => s.iter().map(|c| c * rho).collect(),
        }
    }

    /// Inverse of [`embed`]. At the ball origin the direction is the last
    /// coordinate axis by convention.
    pub fn from_embedding(kind: FamilyKind, v: &[f64]) -> Result<Self> {
        if kind.is_half_space() {
            if v.len() < 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: v.len() });
            }
            Ok(ParamPoint::HalfSpace {
                t: v[0],
                x: v[1..].to_vec(),
            })
        } else {
            let rho: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let s = if rho > 0.0 {
                v.iter().map(|c| c / rho).collect()
            } else {
                let mut s = vec![0.0; v.len()];
                s[v.len() - 1] = 1.0;
                s
            };
            Ok(ParamPoint::Ball { rho, s })
        }
    }
}

/// A dictionary element: the plain kernel at `param` (order 1) or the
/// (order−1)-th directional derivative of the kernel in its parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub param: ParamPoint,
    pub order: usize,
    pub direction: Option<Vec<f64>>,
}

impl Atom {
    pub fn plain(param: ParamPoint) -> Self {
        Atom {
            param,
            order: 1,
            direction: None,
        }
    }

    pub fn multiple(param: ParamPoint, order: usize, direction: Vec<f64>) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter("multiple atom needs order >= 2".into()));
        }
        let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "direction norm {norm} is not 1"
            )));
        }
        Ok(Atom {
            param,
            order,
            direction: Some(direction),
        })
    }

    pub fn validate(&self, family: &KernelFamily) -> Result<()> {
        self.param.validate(family)?;
        if self.order == 0 {
            return Err(Error::InvalidParameter("atom order must be >= 1".into()));
        }
        if self.order >= 2 {
            let dir = self
                .direction
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("order >= 2 atom needs a direction".into()))?;
            if dir.len() != family.param_dim() {
                return Err(Error::DimensionMismatch {
                    expected: family.param_dim(),
                    got: dir.len(),
                });
            }
        }
        Ok(())
    }
}

/// Closed-form kernel K(q,p) over Cartesian parameter embeddings. Not
/// defined for the convolution family.
fn kernel_generic<S: Scalar>(kind: FamilyKind, d: usize, c_d: f64, u: &[S], v: &[S]) -> S {
    match kind {
        FamilyKind::PoissonHalfSpace => {
            // K = c_d (t+t₁) / ((t+t₁)² + |x−x₁|²)^((d+1)/2)
            let a = u[0] + v[0];
            let mut den = a * a;
            for i in 1..u.len() {
                let diff = u[i] - v[i];
                den = den + diff * diff;
            }
            (a * den.powf(-(d as f64 + 1.0) / 2.0)).scale(c_d)
        }
        FamilyKind::HeatHalfSpace => {
            // K = (4π(t+s))^(−d/2) · exp(−|x−y|²/(4(t+s)))
            let m = u[0] + v[0];
            let mut r2 = S::from_f64(0.0);
            for i in 1..u.len() {
                let diff = u[i] - v[i];
                r2 = r2 + diff * diff;
            }
            let amp = m.scale(4.0 * PI).powf(-(d as f64) / 2.0);
            amp * (-(r2 / m.scale(4.0))).exp()
        }
        FamilyKind::SphericalPoisson => {
            // With w = ρs, z = r t: (rρ)² = |w|²|z|² and
            // |ρr t − s|² = |w|²|z|² − 2 w·z + 1, so
            // K = c_d (1 − |w|²|z|²) / (|w|²|z|² − 2 w·z + 1)^(d/2).
            let mut u2 = S::from_f64(0.0);
            let mut v2 = S::from_f64(0.0);
            let mut uv = S::from_f64(0.0);
            for i in 0..u.len() {
                u2 = u2 + u[i] * u[i];
                v2 = v2 + v[i] * v[i];
                uv = uv + u[i] * v[i];
            }
            let a = u2 * v2;
            let den = a - uv.scale(2.0) + S::from_f64(1.0);
            ((S::from_f64(1.0) - a) * den.powf(-(d as f64) / 2.0)).scale(c_d)
        }
        FamilyKind::Convolution => unreachable!("convolution kernel has no closed form"),
    }
}

/// Boundary-side kernel h_p(y) over a Cartesian parameter embedding.
fn boundary_generic<S: Scalar>(
    kind: FamilyKind,
    d: usize,
    c_d: f64,
    p: &[S],
    y: &[f64],
) -> S {
    match kind {
        FamilyKind::PoissonHalfSpace => {
            // h = c_d t / (t² + |x−y|²)^((d+1)/2)
            let t = p[0];
            let mut den = t * t;
            for i in 0..d {
                let diff = p[i + 1] - S::from_f64(y[i]);
                den = den + diff * diff;
            }
            (t * den.powf(-(d as f64 + 1.0) / 2.0)).scale(c_d)
        }
        FamilyKind::HeatHalfSpace => {
            let t = p[0];
            let mut r2 = S::from_f64(0.0);
            for i in 0..d {
                let diff = p[i + 1] - S::from_f64(y[i]);
                r2 = r2 + diff * diff;
            }
            t.scale(4.0 * PI).powf(-(d as f64) / 2.0) * (-(r2 / t.scale(4.0))).exp()
        }
        FamilyKind::SphericalPoisson => {
            // h = c_d (1 − |w|²)/|w − y|^d with y on the unit sphere.
            let mut w2 = S::from_f64(0.0);
            let mut wy = S::from_f64(0.0);
            for i in 0..d {
                w2 = w2 + p[i] * p[i];
                wy = wy + p[i].scale(y[i]);
            }
            let den = w2 - wy.scale(2.0) + S::from_f64(1.0);
            ((S::from_f64(1.0) - w2) * den.powf(-(d as f64) / 2.0)).scale(c_d)
        }
        FamilyKind::Convolution => unreachable!("handled separately"),
    }
}

fn check_pair(family: &KernelFamily, q: &ParamPoint, p: &ParamPoint) -> Result<()> {
    q.validate(family)?;
    p.validate(family)
}

/// K(q,p) = ⟨h_q, h_p⟩, via closed form (semigroup identity) or, for the
/// convolution family, product quadrature over the configured grid.
pub fn eval_k(family: &KernelFamily, q: &ParamPoint, p: &ParamPoint) -> Result<f64> {
    check_pair(family, q, p)?;
    match family.kind {
        FamilyKind::Convolution => {
            let grid = family.quad.as_ref().ok_or(Error::QuadratureNotConfigured)?;
            let qe = q.embed();
            let pe = p.embed();
            Ok(grid.integrate(|xi| {
                boundary_convolution(family, &qe, xi) * boundary_convolution(family, &pe, xi)
            }))
        }
        kind => {
            let u = q.embed();
            let v = p.embed();
            Ok(kernel_generic::<f64>(kind, family.d, family.c_d, &u, &v))
        }
    }
}

fn boundary_convolution(family: &KernelFamily, p: &[f64], y: &[f64]) -> f64 {
    let profile = family.profile.as_ref().expect("convolution profile");
    let t = p[0];
    let arg: Vec<f64> = (0..family.d).map(|i| (p[i + 1] - y[i]) / t).collect();
    profile.eval(&arg) / t.powi(family.d as i32)
}

/// ‖K_q‖ = √K(q,q), via the closed norm formulas where they exist.
pub fn kernel_norm(family: &KernelFamily, q: &ParamPoint) -> Result<f64> {
    q.validate(family)?;
    match (family.kind, q) {
        (FamilyKind::PoissonHalfSpace, ParamPoint::HalfSpace { t, .. }) => {
            Ok((family.c_d / (2.0 * t).powi(family.d as i32)).sqrt())
        }
        (FamilyKind::HeatHalfSpace, ParamPoint::HalfSpace { t, .. }) => {
            Ok((8.0 * PI * t).powf(-(family.d as f64) / 4.0))
        }
        (FamilyKind::SphericalPoisson, ParamPoint::Ball { rho, .. }) => {
            let r2 = rho * rho;
            Ok((family.c_d * (1.0 + r2) / (1.0 - r2).powi(family.d as i32 - 1)).sqrt())
        }
        (FamilyKind::Convolution, _) => Ok(eval_k(family, q, q)?.sqrt()),
        _ => Err(Error::MixedPointKinds),
    }
}

/// Normalized kernel value E_q(p) = K(q,p)/‖K_q‖.
pub fn eval_e(family: &KernelFamily, q: &ParamPoint, p: &ParamPoint) -> Result<f64> {
    Ok(eval_k(family, q, p)? / kernel_norm(family, q)?)
}

/// Boundary-side kernel value h_p(y).
pub fn eval_h(family: &KernelFamily, p: &ParamPoint, y: &[f64]) -> Result<f64> {
    p.validate(family)?;
    if y.len() != family.boundary_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.boundary_dim(),
            got: y.len(),
        });
    }
    let pe = p.embed();
    match family.kind {
        FamilyKind::Convolution => Ok(boundary_convolution(family, &pe, y)),
        kind => Ok(boundary_generic::<f64>(kind, family.d, family.c_d, &pe, y)),
    }
}

fn atom_jets(family: &KernelFamily, atom: &Atom, tau_side: bool) -> Result<Vec<Jet2>> {
    atom.validate(family)?;
    let e = atom.param.embed();
    let n = e.len();
    let dir = match &atom.direction {
        Some(d) if atom.order >= 2 => d.clone(),
        _ => vec![0.0; n],
    };
    Ok((0..n)
        .map(|i| {
            if tau_side {
                Jet2::variable(e[i], 0.0, dir[i])
            } else {
                Jet2::variable(e[i], dir[i], 0.0)
            }
        })
        .collect())
}

/// ⟨K̃_a, K̃_b⟩: the mixed directional derivative
/// (θ_a·∇_q)^{a.order−1} (θ_b·∇_p)^{b.order−1} K(q,p), exact via jets.
pub fn eval_k_derivative(family: &KernelFamily, a: &Atom, b: &Atom) -> Result<f64> {
    if a.order > DEG + 1 || b.order > DEG + 1 {
        return Err(Error::UnsupportedOrder {
            order: a.order.max(b.order),
            max: DEG + 1,
        });
    }
    if family.kind == FamilyKind::Convolution {
        if a.order > 1 || b.order > 1 {
            return Err(Error::UnsupportedOrder {
                order: a.order + b.order,
                max: 2,
            });
        }
        return eval_k(family, &a.param, &b.param);
    }
    if a.order == 1 && b.order == 1 {
        return eval_k(family, &a.param, &b.param);
    }
    check_pair(family, &a.param, &b.param)?;
    let u = atom_jets(family, a, false)?;
    let v = atom_jets(family, b, true)?;
    let k = kernel_generic::<Jet2>(family.kind, family.d, family.c_d, &u, &v);
    Ok(k.derivative(a.order - 1, b.order - 1))
}

/// ‖K̃_a‖ = √⟨K̃_a, K̃_a⟩ (equals [`kernel_norm`] for plain atoms).
pub fn atom_norm(family: &KernelFamily, a: &Atom) -> Result<f64> {
    if a.order == 1 {
        kernel_norm(family, &a.param)
    } else {
        Ok(eval_k_derivative(family, a, a)?.sqrt())
    }
}

/// Boundary data of the atom: (θ·∇_p)^{order−1} h_p(y). Convolution atoms
/// support order 1 only.
pub fn eval_h_derivative(family: &KernelFamily, a: &Atom, y: &[f64]) -> Result<f64> {
    if a.order == 1 {
        return eval_h(family, &a.param, y);
    }
    if family.kind == FamilyKind::Convolution {
        return Err(Error::UnsupportedOrder {
            order: a.order,
            max: 1,
        });
    }
    a.validate(family)?;
    if y.len() != family.boundary_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.boundary_dim(),
            got: y.len(),
        });
    }
    let p = atom_jets(family, a, false)?;
    let h = boundary_generic::<Jet2>(family.kind, family.d, family.c_d, &p, y);
    Ok(h.derivative(a.order - 1, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn north(d: usize) -> Vec<f64> {
        let mut s = vec![0.0; d];
        s[d - 1] = 1.0;
        s
    }

    #[test]
    fn poisson_diagonal_d1() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let k = eval_k(&fam, &q, &q).unwrap();
        // c₁ = 1/π, K(q,q) = c₁·2/4 = 1/(2π)
        assert_relative_eq!(fam.c_d, 1.0 / PI, max_relative = 1e-14);
        assert_relative_eq!(k, 1.0 / (2.0 * PI), max_relative = 1e-14);
    }

    #[test]
    fn heat_diagonal_d2() {
        let fam = KernelFamily::heat_half_space(2).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0, 0.0]);
        let p = ParamPoint::half_space(1.0, vec![0.0, 0.0]);
        assert_relative_eq!(
            eval_k(&fam, &q, &p).unwrap(),
            1.0 / (8.0 * PI),
            max_relative = 1e-14
        );
    }

    #[test]
    fn sphere_center_kernel_is_constant_one() {
        let fam = KernelFamily::spherical_poisson(3).unwrap();
        let q = ParamPoint::ball(0.4, north(3));
        let p = ParamPoint::ball(0.0, vec![1.0, 0.0, 0.0]);
        assert_relative_eq!(eval_k(&fam, &q, &p).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn closed_norms() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(0.5, vec![0.0]);
        assert_relative_eq!(
            kernel_norm(&fam, &q).unwrap(),
            (1.0 / PI_).sqrt(),
            max_relative = 1e-14
        );

        let fam = KernelFamily::spherical_poisson(3).unwrap();
        let q = ParamPoint::ball(0.6, north(3));
        assert_relative_eq!(
            kernel_norm(&fam, &q).unwrap(),
            (1.36f64).sqrt() / 0.64,
            max_relative = 1e-13
        );

        let fam = KernelFamily::heat_half_space(2).unwrap();
        let q = ParamPoint::half_space(2.0, vec![0.0, 0.0]);
        assert_relative_eq!(
            kernel_norm(&fam, &q).unwrap(),
            (16.0 * PI_).powf(-0.5),
            max_relative = 1e-14
        );
    }
    const PI_: f64 = std::f64::consts::PI;

    #[test]
    fn eval_e_diagonal_equals_norm() {
        let fam = KernelFamily::heat_half_space(2).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.3, -0.2]);
        let n = kernel_norm(&fam, &q).unwrap();
        assert_relative_eq!(eval_e(&fam, &q, &q).unwrap(), n, max_relative = 1e-13);
    }

    #[test]
    fn boundary_values() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let p = ParamPoint::half_space(1.0, vec![0.0]);
        assert_relative_eq!(eval_h(&fam, &p, &[0.0]).unwrap(), 1.0 / PI_, max_relative = 1e-14);

        let fam = KernelFamily::heat_half_space(2).unwrap();
        let p = ParamPoint::half_space(1.0, vec![0.0, 0.0]);
        assert_relative_eq!(
            eval_h(&fam, &p, &[0.0, 0.0]).unwrap(),
            1.0 / (4.0 * PI_),
            max_relative = 1e-14
        );

        let fam = KernelFamily::spherical_poisson(3).unwrap();
        let s = north(3);
        let p = ParamPoint::ball(0.8, s.clone());
        assert_relative_eq!(
            eval_h(&fam, &p, &s).unwrap(),
            (1.0 - 0.64) / 0.2f64.powi(3),
            max_relative = 1e-12
        );
    }

    #[test]
    fn symmetry_random_pairs() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fams = [
            KernelFamily::poisson_half_space(2).unwrap(),
            KernelFamily::heat_half_space(2).unwrap(),
        ];
        for fam in &fams {
            for _ in 0..20 {
                let q = ParamPoint::half_space(
                    rng.random_range(0.2..3.0),
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                );
                let p = ParamPoint::half_space(
                    rng.random_range(0.2..3.0),
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                );
                let a = eval_k(fam, &q, &p).unwrap();
                let b = eval_k(fam, &p, &q).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        let fam = KernelFamily::spherical_poisson(3).unwrap();
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                ParamPoint::ball(rng.random_range(0.0..0.9), v.iter().map(|c| c / n).collect())
            };
            let q = mk(&mut rng);
            let p = mk(&mut rng);
            let a = eval_k(&fam, &q, &p).unwrap();
            let b = eval_k(&fam, &p, &q).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_order_one_reduces_to_eval_k() {
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let a = Atom::plain(ParamPoint::half_space(1.0, vec![0.5]));
        let b = Atom::plain(ParamPoint::half_space(0.7, vec![-0.3]));
        assert_relative_eq!(
            eval_k_derivative(&fam, &a, &b).unwrap(),
            eval_k(&fam, &a.param, &b.param).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn derivative_antisymmetry_in_direction() {
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let p = ParamPoint::half_space(1.0, vec![0.3]);
        let q = ParamPoint::half_space(0.6, vec![-0.4]);
        let dir = vec![0.6, 0.8];
        let neg: Vec<f64> = dir.iter().map(|v| -v).collect();
        let a_plus = Atom::multiple(q.clone(), 2, dir).unwrap();
        let a_minus = Atom::multiple(q, 2, neg).unwrap();
        let b = Atom::plain(p);
        let v1 = eval_k_derivative(&fam, &a_plus, &b).unwrap();
        let v2 = eval_k_derivative(&fam, &a_minus, &b).unwrap();
        assert_relative_eq!(v1, -v2, max_relative = 1e-13);
    }

    #[test]
    fn mixed_kinds_rejected() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let p = ParamPoint::ball(0.5, vec![1.0]);
        assert!(matches!(
            eval_k(&fam, &q, &p),
            Err(Error::MixedPointKinds)
        ));
    }

    #[test]
    fn convolution_requires_grid_and_rejects_derivatives() {
        let check = BoxGrid::symmetric(1, 60.0, 4096, QuadRule::Trapezoid).unwrap();
        let profile = ConvolutionProfile::poisson(1, &check).unwrap();
        let quad = BoxGrid::symmetric(1, 40.0, 1600, QuadRule::Trapezoid).unwrap();
        let fam = KernelFamily::convolution(1, profile, quad).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let a = Atom::multiple(q.clone(), 2, vec![1.0, 0.0]).unwrap();
        let b = Atom::plain(q);
        assert!(matches!(
            eval_k_derivative(&fam, &a, &b),
            Err(Error::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn convolution_poisson_profile_matches_closed_form() {
        // With the Poisson profile the quadrature kernel must reproduce the
        // closed-form Poisson kernel.
        let check = BoxGrid::symmetric(1, 60.0, 4096, QuadRule::Trapezoid).unwrap();
        let profile = ConvolutionProfile::poisson(1, &check).unwrap();
        let quad = BoxGrid::symmetric(1, 50.0, 4000, QuadRule::Trapezoid).unwrap();
        let conv = KernelFamily::convolution(1, profile, quad).unwrap();
        let poisson = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(0.5, vec![0.3]);
        let p = ParamPoint::half_space(0.7, vec![-0.1]);
        let numeric = eval_k(&conv, &q, &p).unwrap();
        let exact = eval_k(&poisson, &q, &p).unwrap();
        assert_relative_eq!(numeric, exact, max_relative = 1e-4);
    }
}
