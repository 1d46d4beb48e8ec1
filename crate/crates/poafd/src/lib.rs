//! Pre-orthogonal greedy sparse approximation over parameterized
//! reproducing-kernel dictionaries.
//!
//! The dictionaries are normalized kernels of four families — the
//! half-space Poisson kernel, the heat kernel, the Poisson kernel of the
//! unit ball, and general convolution kernels — and the engine expands a
//! target signal into a short adaptive combination of them, escalating to
//! directional-derivative kernels when a parameter is re-selected.
//!
//! Entry points:
//! - [`kernels`]: kernel evaluation, norms, normalizations, derivatives.
//! - [`signals`]: targets (kernel combinations or sampled boundary data),
//!   inner products, boundary reconstruction.
//! - [`engine`]: Gram-Schmidt, maximal selection, the decomposition driver.
//! - [`oracles`]: quadrature / finite-difference / exhaustive-scan
//!   verifiers used by tests and the `verify` command.
//! - [`run`]: run configuration, experiment presets and verification
//!   suites backing the CLI.

pub mod engine;
pub mod error;
pub mod jet;
pub mod kernels;
pub mod oracles;
pub mod run;
pub mod signals;

pub use engine::{
    candidate_score, gram_matrix, gs_step, maximal_select, poafd_run, relative_error,
    Decomposition, SearchBox, SelectionConfig,
};
pub use error::{Error, Result};
pub use kernels::{
    atom_norm, eval_e, eval_h, eval_k, eval_k_derivative, kernel_norm, Atom, BoxGrid,
    ConvolutionProfile, FamilyKind, KernelFamily, ParamPoint, QuadRule,
};
pub use signals::{reconstruct_boundary, signal_inner, signal_norm, Signal};
