//! Target elements of the space and their inner products against atoms.
//!
//! A signal is either a finite combination of *normalized* kernels E_q
//! (the convention the experiment definitions use) or sampled boundary data
//! with quadrature weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    atom_norm, eval_h_derivative, eval_k_derivative, Atom, KernelFamily, ParamPoint,
};
use crate::oracles::fd_directional;

/// Step for finite-difference inner products of derivative atoms against
/// sampled data, where no closed form is available.
const SAMPLED_FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Signal {
    /// f = Σ coeff_j · E_{atom_j} with E the norm-one atoms.
    KernelCombination { terms: Vec<(f64, Atom)> },
    /// Boundary samples (points, values) with quadrature weights.
    SampledBoundary {
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Signal {
    pub fn combination(terms: Vec<(f64, Atom)>) -> Self {
        Signal::KernelCombination { terms }
    }

    pub fn sampled(points: Vec<Vec<f64>>, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() || points.len() != weights.len() {
            return Err(Error::Config(
                "sampled signal needs equal numbers of points, values and weights".into(),
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("quadrature weights must be positive".into()));
        }
        Ok(Signal::SampledBoundary {
            points,
            values,
            weights,
        })
    }

    pub fn validate(&self, family: &KernelFamily) -> Result<()> {
        match self {
            Signal::KernelCombination { terms } => {
                for (_, atom) in terms {
                    atom.validate(family)?;
                }
            }
            Signal::SampledBoundary { points, .. } => {
                for p in points {
                    if p.len() != family.boundary_dim() {
                        return Err(Error::DimensionMismatch {
                            expected: family.boundary_dim(),
                            got: p.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Convert normalized-kernel coefficients to raw-kernel coefficients
    /// (d_j E_j = (d_j/‖K̃_j‖) K̃_j). Guards against silent scale bugs when
    /// interfacing with code that expands against unnormalized kernels.
    pub fn raw_coefficients(&self, family: &KernelFamily) -> Result<Vec<f64>> {
        match self {
            Signal::KernelCombination { terms } => terms
                .iter()
                .map(|(c, atom)| Ok(c / atom_norm(family, atom)?))
                .collect(),
            Signal::SampledBoundary { .. } => Err(Error::Config(
                "raw coefficients are defined for kernel combinations only".into(),
            )),
        }
    }
}

/// ⟨f, K̃_a⟩.
pub fn signal_inner(family: &KernelFamily, sig: &Signal, a: &Atom) -> Result<f64> {
    a.validate(family)?;
    match sig {
        Signal::KernelCombination { terms } => {
            let mut acc = 0.0;
            for (coeff, atom) in terms {
                let norm = atom_norm(family, atom)?;
                acc += coeff * eval_k_derivative(family, atom, a)? / norm;
            }
            Ok(acc)
        }
        Signal::SampledBoundary {
            points,
            values,
            weights,
        } => {
            if a.order == 1 {
                let mut acc = 0.0;
                for i in 0..points.len() {
                    acc += weights[i] * values[i] * eval_h_derivative(family, a, &points[i])?;
                }
                Ok(acc)
            } else {
                // Derivative atoms against sampled data: differentiate the
                // order-1 inner product in the parameter.
                let dir = a.direction.clone().expect("validated order >= 2 atom");
                let base = a.param.embed();
                let kind = family.kind;
                let fam = family.clone();
                let sig2 = sig.clone();
                let g = move |u: &[f64]| -> f64 {
                    let param = ParamPoint::from_embedding(kind, u).expect("embedding");
                    let plain = Atom::plain(param);
                    signal_inner(&fam, &sig2, &plain).unwrap_or(f64::NAN)
                };
                fd_directional(&g, &base, &dir, a.order - 1, SAMPLED_FD_STEP)
            }
        }
    }
}

/// ‖f‖: Gram expansion for kernel combinations, weighted ℓ² norm for
/// sampled data.
pub fn signal_norm(family: &KernelFamily, sig: &Signal) -> Result<f64> {
    sig.validate(family)?;
    match sig {
        Signal::KernelCombination { terms } => {
            let n = terms.len();
            let norms: Vec<f64> = terms
                .iter()
                .map(|(_, a)| atom_norm(family, a))
                .collect::<Result<_>>()?;
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let gij = eval_k_derivative(family, &terms[i].1, &terms[j].1)?;
                    acc += terms[i].0 * terms[j].0 * gij / (norms[i] * norms[j]);
                }
            }
            Ok(acc.max(0.0).sqrt())
        }
        Signal::SampledBoundary {
            values, weights, ..
        } => Ok(values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v * v)
            .sum::<f64>()
            .sqrt()),
    }
}

/// Evaluate the n-term approximation Σ_k ⟨f,B_k⟩ B_k on the boundary by
/// expanding each B_k into boundary-side kernels through the stored
/// Gram-Schmidt coefficients.
pub fn reconstruct_boundary(
    family: &KernelFamily,
    dec: &crate::engine::Decomposition,
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = dec.atoms.len();
    if n == 0 {
        return Ok(vec![0.0; points.len()]);
    }
    // β_i = Σ_k c_k a_{k,i}: weight of atom i in the reconstruction.
    let mut beta = vec![0.0; n];
    for k in 0..n {
        for (i, &a) in dec.gs_matrix[k].iter().enumerate() {
            beta[i] += dec.fourier_coeffs[k] * a;
        }
    }
    let mut out = Vec::with_capacity(points.len());
    for pt in points {
        let mut v = 0.0;
        for i in 0..n {
            v += beta[i] * eval_h_derivative(family, &dec.atoms[i], pt)?;
        }
        out.push(v);
    }
    Ok(out)
}
