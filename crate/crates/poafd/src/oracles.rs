//! Independent brute-force verifiers.
//!
//! Everything here recomputes quantities the closed-form code paths already
//! provide — inner products by quadrature, derivatives by finite
//! differences, the greedy argmax by exhaustive scan — so that tests and the
//! `verify` command can certify the fast paths against a second route.

use crate::engine::{
    best_escalated, candidate_score, enumerate_grid, match_previous, Decomposition,
    SelectionConfig,
};
use crate::error::{Error, Result};
use crate::kernels::{eval_h, gamma_half, Atom, BoxGrid, FamilyKind, KernelFamily, ParamPoint};
use crate::signals::Signal;
use std::f64::consts::PI;

/// A value with an a-posteriori error estimate (difference between the
/// configured grid and a once-refined grid).
#[derive(Clone, Copy, Debug)]
pub struct Estimated {
    pub value: f64,
    pub error_estimate: f64,
}

fn unit_sphere_area(d: usize) -> f64 {
    // σ_{d−1} = 2 π^{d/2} / Γ(d/2)
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d as u32)
}

/// Crude upper estimate of the integral mass outside the box, from the
/// integrand maximum on the box boundary and the product kernel's power-law
/// decay exponent.
fn tail_estimate(
    family: &KernelFamily,
    grid: &BoxGrid,
    integrand: impl Fn(&[f64]) -> f64,
) -> f64 {
    let d = grid.dim();
    let radius = (0..d)
        .map(|i| grid.lo[i].abs().max(grid.hi[i].abs()))
        .fold(f64::INFINITY, f64::min);
    // Product of two boundary kernels: |x|^{−2(d+1)} for Poisson-type decay,
    // 2(d+δ) for a convolution profile; the heat tail decays faster still,
    // so the power-law estimate only overstates it.
    let alpha = match family.kind {
        FamilyKind::Convolution => {
            let delta = family.profile.as_ref().map(|p| p.delta).unwrap_or(1.0);
            2.0 * (d as f64 + delta)
        }
        _ => 2.0 * (d as f64 + 1.0),
    };
    let mut max_boundary: f64 = 0.0;
    // Sample face centers and a coarse lattice on each face.
    for axis in 0..d {
        for &face in &[grid.lo[axis], grid.hi[axis]] {
            let samples = 9;
            let mut idx = vec![0usize; d];
            loop {
                let mut x = vec![0.0; d];
                for i in 0..d {
                    x[i] = if i == axis {
                        face
                    } else {
                        grid.lo[i] + (grid.hi[i] - grid.lo[i]) * idx[i] as f64 / (samples - 1) as f64
                    };
                }
                max_boundary = max_boundary.max(integrand(&x).abs());
                let mut done = true;
                for i in (0..d).rev() {
                    if i == axis {
                        continue;
                    }
                    idx[i] += 1;
                    if idx[i] < samples {
                        done = false;
                        break;
                    }
                    idx[i] = 0;
                }
                if done {
                    break;
                }
            }
        }
    }
    // ∫_{|x|>R} C|x|^{−α} dx with C = M_b R^α.
    max_boundary * unit_sphere_area(d) * radius.powi(d as i32) * radius / (alpha - d as f64)
}

/// Numeric ⟨h_q, h_p⟩ over R^d for a half-space family, with tail check and
/// two-resolution error estimate. `tail_tol` bounds the admissible estimated
/// tail mass relative to the value.
pub fn quadrature_inner_halfspace(
    family: &KernelFamily,
    q: &ParamPoint,
    p: &ParamPoint,
    grid: &BoxGrid,
    tail_tol: f64,
) -> Result<Estimated> {
    if !family.kind.is_half_space() {
        return Err(Error::MixedPointKinds);
    }
    q.validate(family)?;
    p.validate(family)?;
    if grid.dim() != family.d {
        return Err(Error::DimensionMismatch {
            expected: family.d,
            got: grid.dim(),
        });
    }
    let integrand = |xi: &[f64]| {
        eval_h(family, q, xi).unwrap_or(f64::NAN) * eval_h(family, p, xi).unwrap_or(f64::NAN)
    };
    let value = grid.integrate(integrand);
    let tail = tail_estimate(family, grid, integrand);
    if tail > tail_tol * value.abs() {
        return Err(Error::GridTooSmall {
            tail,
            tol: tail_tol * value.abs(),
        });
    }
    let refined = grid.refined().integrate(integrand);
    Ok(Estimated {
        value,
        error_estimate: (value - refined).abs(),
    })
}

/// Product midpoint rule on S² in (φ, θ) with the sin φ weight, under the
/// normalized surface measure.
#[derive(Clone, Copy, Debug)]
pub struct SphereGrid {
    pub phi_steps: usize,
    pub theta_steps: usize,
}

impl SphereGrid {
    pub fn new(phi_steps: usize, theta_steps: usize) -> Result<Self> {
        if phi_steps < 16 || theta_steps < 16 {
            return Err(Error::Config("sphere grid needs at least 16 steps per axis".into()));
        }
        Ok(SphereGrid {
            phi_steps,
            theta_steps,
        })
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        let h_phi = PI / self.phi_steps as f64;
        let h_theta = 2.0 * PI / self.theta_steps as f64;
        let mut sum = 0.0;
        for i in 0..self.phi_steps {
            let phi = (i as f64 + 0.5) * h_phi;
            let (sin_phi, cos_phi) = phi.sin_cos();
            for j in 0..self.theta_steps {
                let theta = (j as f64 + 0.5) * h_theta;
                let s = [sin_phi * theta.cos(), sin_phi * theta.sin(), cos_phi];
                sum += f(&s) * sin_phi;
            }
        }
        sum * h_phi * h_theta / (4.0 * PI)
    }

    fn refined(&self) -> Self {
        SphereGrid {
            phi_steps: self.phi_steps * 2,
            theta_steps: self.theta_steps * 2,
        }
    }
}

/// Numeric ⟨h_q, h_p⟩ over S² (d = 3 only), normalized measure.
pub fn quadrature_inner_sphere(
    family: &KernelFamily,
    q: &ParamPoint,
    p: &ParamPoint,
    grid: &SphereGrid,
) -> Result<Estimated> {
    if family.kind != FamilyKind::SphericalPoisson || family.d != 3 {
        return Err(Error::Config(
            "sphere quadrature supports the d = 3 spherical Poisson family only".into(),
        ));
    }
    q.validate(family)?;
    p.validate(family)?;
    // The kernel's angular feature scale is ~(1−ρ); require a few grid cells
    // across it.
    let h = PI / grid.phi_steps as f64;
    for pt in [q, p] {
        if let ParamPoint::Ball { rho, .. } = pt {
            if 1.0 - rho < 5.0 * h {
                return Err(Error::Config(format!(
                    "parameter rho = {rho} too close to the sphere for {} phi steps",
                    grid.phi_steps
                )));
            }
        }
    }
    let f = |s: &[f64; 3]| {
        eval_h(family, q, s).unwrap_or(f64::NAN) * eval_h(family, p, s).unwrap_or(f64::NAN)
    };
    let value = grid.integrate(f);
    let refined = grid.refined().integrate(f);
    Ok(Estimated {
        value,
        error_estimate: (value - refined).abs(),
    })
}

fn central_difference(
    f: &dyn Fn(&[f64]) -> f64,
    point: &[f64],
    direction: &[f64],
    order: usize,
    h: f64,
) -> f64 {
    if order == 0 {
        return f(point);
    }
    let shift = |sgn: f64| -> Vec<f64> {
        point
            .iter()
            .zip(direction)
            .map(|(x, d)| x + sgn * h * d)
            .collect()
    };
    let plus = central_difference(f, &shift(1.0), direction, order - 1, h);
    let minus = central_difference(f, &shift(-1.0), direction, order - 1, h);
    (plus - minus) / (2.0 * h)
}

/// Nested central differences of `f` at `point` along `direction`, order ≤ 4,
/// with one Richardson extrapolation step (leading h² error eliminated).
pub fn fd_directional(
    f: &dyn Fn(&[f64]) -> f64,
    point: &[f64],
    direction: &[f64],
    order: usize,
    h: f64,
) -> Result<f64> {
    if order > 4 {
        return Err(Error::UnsupportedOrder { order, max: 4 });
    }
    if !(h > 1e-12) {
        return Err(Error::Config(format!("finite-difference step {h} underflows")));
    }
    let coarse = central_difference(f, point, direction, order, h);
    let fine = central_difference(f, point, direction, order, h / 2.0);
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Exhaustive candidate scan over the selection grid (no refinement),
/// deterministic lexicographic tie-break. Certifies `maximal_select`.
pub fn brute_force_argmax(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
) -> Result<(Atom, f64)> {
    let grid = enumerate_grid(family, config)?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut best: Option<(Atom, f64)> = None;
    for param in &grid {
        let scored = if let Some((base, count)) = match_previous(config, state, param) {
            best_escalated(family, sig, state, config, &base, count)?
        } else {
            candidate_score(
                family,
                sig,
                state,
                &Atom::plain(param.clone()),
                config.gs_degeneracy_tol,
            )?
        };
        if let Some(c) = scored {
            if best.as_ref().map_or(true, |(_, s)| c.score > *s) {
                best = Some((c.atom, c.score));
            }
        }
    }
    let mut bases: Vec<(ParamPoint, usize)> = Vec::new();
    for atom in &state.atoms {
        if !bases.iter().any(|(p, _)| p == &atom.param) {
            let count = state.atoms.iter().filter(|a| a.param == atom.param).count();
            bases.push((atom.param.clone(), count));
        }
    }
    for (base, count) in &bases {
        if let Some(c) = best_escalated(family, sig, state, config, base, *count)? {
            if best.as_ref().map_or(true, |(_, s)| c.score > *s) {
                best = Some((c.atom, c.score));
            }
        }
    }
    best.ok_or(Error::DictionaryExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{eval_k, kernel_norm, QuadRule};
    use approx::assert_relative_eq;

    #[test]
    fn poisson_diagonal_quadrature() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let grid = BoxGrid::symmetric(1, 120.0, 4000, QuadRule::Trapezoid).unwrap();
        let est = quadrature_inner_halfspace(&fam, &q, &q, &grid, 1e-4).unwrap();
        // K(q,q) = c₁/(2t) = 1/(2π)
        assert_relative_eq!(est.value, 1.0 / (2.0 * PI), max_relative = 1e-4);
        assert!(est.error_estimate <= 1e-6);
    }

    #[test]
    fn heat_semigroup_quadrature() {
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let p = ParamPoint::half_space(2.0, vec![1.0]);
        let grid = BoxGrid::symmetric(1, 40.0, 2000, QuadRule::Trapezoid).unwrap();
        let est = quadrature_inner_halfspace(&fam, &q, &p, &grid, 1e-4).unwrap();
        assert_relative_eq!(
            est.value,
            eval_k(&fam, &q, &p).unwrap(),
            max_relative = 1e-4
        );
        // symmetric swap
        let swapped = quadrature_inner_halfspace(&fam, &p, &q, &grid, 1e-4).unwrap();
        assert!((est.value - swapped.value).abs() <= 1e-12 * est.value.abs());
    }

    #[test]
    fn undersized_grid_rejected() {
        let fam = KernelFamily::poisson_half_space(1).unwrap();
        let q = ParamPoint::half_space(1.0, vec![0.0]);
        let grid = BoxGrid::symmetric(1, 3.0, 64, QuadRule::Trapezoid).unwrap();
        assert!(matches!(
            quadrature_inner_halfspace(&fam, &q, &q, &grid, 1e-5),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn sphere_diagonal_matches_norm_formula() {
        let fam = KernelFamily::spherical_poisson(3).unwrap();
        let q = ParamPoint::ball(0.4, vec![0.0, 0.0, 1.0]);
        let grid = SphereGrid::new(512, 512).unwrap();
        let est = quadrature_inner_sphere(&fam, &q, &q, &grid).unwrap();
        let want = (1.0 + 0.16) / (1.0 - 0.16f64).powi(2);
        assert_relative_eq!(est.value, want, max_relative = 1e-4);
        let nrm = kernel_norm(&fam, &q).unwrap();
        assert_relative_eq!(est.value, nrm * nrm, max_relative = 1e-4);
    }

    #[test]
    fn sphere_center_kernel_has_unit_mean() {
        let fam = KernelFamily::spherical_poisson(3).unwrap();
        let q = ParamPoint::ball(0.0, vec![1.0, 0.0, 0.0]);
        let p = ParamPoint::ball(0.7, vec![0.0, 1.0, 0.0]);
        let grid = SphereGrid::new(512, 512).unwrap();
        let est = quadrature_inner_sphere(&fam, &q, &p, &grid).unwrap();
        assert_relative_eq!(est.value, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn quadrature_residual_shrinks_with_refinement() {
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let q = ParamPoint::half_space(0.8, vec![0.4]);
        let p = ParamPoint::half_space(1.3, vec![-0.6]);
        let exact = eval_k(&fam, &q, &p).unwrap();
        let coarse = BoxGrid::new(vec![-30.0], vec![30.0], vec![64], QuadRule::Midpoint).unwrap();
        let fine = BoxGrid::new(vec![-30.0], vec![30.0], vec![128], QuadRule::Midpoint).unwrap();
        let rc = (coarse.integrate(|x| {
            eval_h(&fam, &q, x).unwrap() * eval_h(&fam, &p, x).unwrap()
        }) - exact)
            .abs();
        let rf = (fine.integrate(|x| {
            eval_h(&fam, &q, x).unwrap() * eval_h(&fam, &p, x).unwrap()
        }) - exact)
            .abs();
        assert!(rf * 2.0 <= rc + 1e-15, "coarse {rc:.3e}, fine {rf:.3e}");
    }

    #[test]
    fn fd_linear_function_exact() {
        let f = |x: &[f64]| 3.0 * x[0] - 2.0 * x[1];
        let v = fd_directional(&f, &[0.3, 0.7], &[0.6, 0.8], 1, 1e-3).unwrap();
        assert_relative_eq!(v, 3.0 * 0.6 - 2.0 * 0.8, epsilon = 1e-10);
    }

    #[test]
    fn fd_quadratic_second_derivative() {
        let f = |x: &[f64]| 1.5 * x[0] * x[0];
        let v = fd_directional(&f, &[0.4], &[1.0], 2, 1e-3).unwrap();
        assert_relative_eq!(v, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn fd_matches_jet_derivative_heat() {
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let p = ParamPoint::half_space(1.0, vec![0.0]);
        let a = Atom::multiple(ParamPoint::half_space(1.0, vec![0.0]), 2, vec![1.0, 0.0]).unwrap();
        let b = Atom::plain(p.clone());
        let analytic = crate::kernels::eval_k_derivative(&fam, &a, &b).unwrap();
        let f = |u: &[f64]| {
            let q = ParamPoint::half_space(u[0], vec![u[1]]);
            eval_k(&fam, &q, &p).unwrap()
        };
        let fd = fd_directional(&f, &[1.0, 0.0], &[1.0, 0.0], 1, 1e-3).unwrap();
        assert_relative_eq!(analytic, fd, max_relative = 1e-8);
    }

    #[test]
    fn fd_step_underflow_rejected() {
        let f = |x: &[f64]| x[0];
        assert!(fd_directional(&f, &[0.0], &[1.0], 1, 0.0).is_err());
    }

    #[test]
    fn argmax_recovers_grid_atom() {
        use crate::engine::{enumerate_grid, Decomposition, SelectionConfig};
        let fam = KernelFamily::heat_half_space(1).unwrap();
        let mut config = SelectionConfig::default_for(&fam);
        config.search_box = crate::engine::SearchBox::HalfSpace {
            t_min: 0.2,
            t_max: 3.0,
            x_half_width: 3.0,
        };
        config.grid_steps = vec![12, 12];
        let grid = enumerate_grid(&fam, &config).unwrap();
        let p = grid[70].clone();
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let dec = Decomposition::empty(&fam, 1.0);
        let (atom, score) = brute_force_argmax(&fam, &sig, &dec, &config).unwrap();
        assert_eq!(atom.param, p);
        assert_relative_eq!(score, 1.0, max_relative = 1e-10);
    }
}
