//! The greedy decomposition engine.
//!
//! Each iteration scans a parameter grid, scores every candidate atom by the
//! projection of the current remainder onto the next pre-orthogonalized
//! basis element, optionally polishes the winner with a compass search, and
//! commits it through a Gram-Schmidt step. Re-selected parameters escalate
//! to multiple kernels (directional derivatives of the kernel in its
//! parameter).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{eval_k_derivative, Atom, FamilyKind, KernelFamily, ParamPoint};
use crate::signals::{signal_inner, signal_norm, Signal};

/// Serializable identification of the family a decomposition was produced
/// with. Convolution profiles are referenced by name only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub kind: FamilyKind,
    pub d: usize,
    pub profile: Option<String>,
}

impl FamilyDescriptor {
    pub fn of(family: &KernelFamily) -> Self {
        FamilyDescriptor {
            kind: family.kind,
            d: family.d,
            profile: family.profile.as_ref().map(|p| p.name.clone()),
        }
    }
}

/// Result of a POAFD run: selected atoms, the lower-triangular Gram-Schmidt
/// coefficient matrix (row k expresses B_k in the atom basis), Fourier
/// coefficients ⟨f,B_k⟩ and the remainder-energy trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub family: FamilyDescriptor,
    pub atoms: Vec<Atom>,
    pub gs_matrix: Vec<Vec<f64>>,
    pub fourier_coeffs: Vec<f64>,
    pub remainder_energies: Vec<f64>,
    pub signal_norm: f64,
}

impl Decomposition {
    pub fn empty(family: &KernelFamily, signal_norm: f64) -> Self {
        Decomposition {
            family: FamilyDescriptor::of(family),
            atoms: Vec::new(),
            gs_matrix: Vec::new(),
            fourier_coeffs: Vec::new(),
            remainder_energies: Vec::new(),
            signal_norm,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Current remainder energy ‖g_{n+1}‖².
    pub fn remainder_energy(&self) -> f64 {
        self.remainder_energies
            .last()
            .copied()
            .unwrap_or(self.signal_norm * self.signal_norm)
    }

    /// Max-norm deviation of gs·gram·gsᵀ from the identity.
    pub fn orthonormality_residual(&self, family: &KernelFamily) -> Result<f64> {
        let n = self.len();
        if n == 0 {
            return Ok(0.0);
        }
        let gram = gram_matrix(family, &self.atoms)?;
        let mut s = DMatrix::zeros(n, n);
        for (k, row) in self.gs_matrix.iter().enumerate() {
            for (i, &a) in row.iter().enumerate() {
                s[(k, i)] = a;
            }
        }
        let prod = &s * gram * s.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        Ok(worst)
    }

    /// Atoms of order j ≥ 2 must be preceded by orders 1..j−1 at the same
    /// parameter.
    pub fn is_consecutive_multiple_sequence(&self) -> bool {
        for (n, atom) in self.atoms.iter().enumerate() {
            if atom.order < 2 {
                continue;
            }
            for j in 1..atom.order {
                let found = self.atoms[..n]
                    .iter()
                    .any(|prev| prev.order == j && prev.param == atom.param);
                if !found {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// √(‖g_k‖²)/‖f‖ after k iterations, 1 ≤ k ≤ iterations run.
pub fn relative_error(dec: &Decomposition, k: usize) -> Result<f64> {
    if k == 0 || k > dec.remainder_energies.len() {
        return Err(Error::OutOfRange {
            index: k,
            len: dec.remainder_energies.len(),
        });
    }
    Ok(dec.remainder_energies[k - 1].max(0.0).sqrt() / dec.signal_norm)
}

/// Parameter bounds the greedy search scans. The true parameter set is
/// unbounded for half-space families; scores vanish toward its boundary, so
/// a finite box suffices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SearchBox {
    HalfSpace {
        t_min: f64,
        t_max: f64,
        x_half_width: f64,
    },
    Ball {
        rho_max: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub search_box: SearchBox,
    /// Grid points per parameter coordinate (t, x… or ρ, angles…).
    pub grid_steps: Vec<usize>,
    pub refine: bool,
    pub max_refine_rounds: usize,
    /// Distance (box-normalized metric) under which a candidate counts as a
    /// repeat of a previously selected parameter.
    pub duplicate_tol: f64,
    /// Relative Gram-Schmidt degeneracy threshold (× candidate norm).
    pub gs_degeneracy_tol: f64,
    /// 1 = pure POAFD; ρ < 1 = weak selection accepting the first candidate
    /// reaching ρ × the grid supremum.
    pub weak_rho: f64,
    /// Directions tried for multiple kernels; default: signed coordinate
    /// axes plus an estimated score-gradient direction.
    pub directions: Option<Vec<Vec<f64>>>,
    /// Stop when remainder energy falls below this × ‖f‖².
    pub early_stop_rel: f64,
}

impl SelectionConfig {
    pub fn default_for(family: &KernelFamily) -> Self {
        let dim = family.param_dim();
        let per_axis = if dim == 2 { 100 } else { 50 };
        let search_box = if family.kind.is_half_space() {
            SearchBox::HalfSpace {
                t_min: 0.05,
                t_max: 20.0,
                x_half_width: 10.0,
            }
        } else {
            SearchBox::Ball { rho_max: 0.99 }
        };
        SelectionConfig {
            search_box,
            grid_steps: vec![per_axis; dim],
            refine: true,
            max_refine_rounds: 500,
            duplicate_tol: 1e-6,
            gs_degeneracy_tol: 1e-8,
            weak_rho: 1.0,
            directions: None,
            early_stop_rel: 1e-14,
        }
    }

    pub fn validate(&self, family: &KernelFamily) -> Result<()> {
        if self.grid_steps.len() != family.param_dim() {
            return Err(Error::Config(format!(
                "grid_steps has {} axes, parameter space has {}",
                self.grid_steps.len(),
                family.param_dim()
            )));
        }
        if self.grid_steps.iter().any(|&s| s < 2) {
            return Err(Error::Config("need at least 2 grid steps per axis".into()));
        }
        match (&self.search_box, family.kind.is_half_space()) {
            (SearchBox::HalfSpace { t_min, t_max, x_half_width }, true) => {
                if !(*t_min > 0.0 && t_max > t_min && *x_half_width > 0.0) {
                    return Err(Error::Config("invalid half-space search box".into()));
                }
            }
            (SearchBox::Ball { rho_max }, false) => {
                if !(*rho_max > 0.0 && *rho_max < 1.0) {
                    return Err(Error::Config("rho_max must lie in (0,1)".into()));
                }
            }
            _ => return Err(Error::Config("search box kind does not match family".into())),
        }
        if !(self.weak_rho > 0.0 && self.weak_rho <= 1.0) {
            return Err(Error::Config("weak_rho must lie in (0,1]".into()));
        }
        if !(self.duplicate_tol > 0.0) {
            return Err(Error::Config("duplicate_tol must be positive".into()));
        }
        Ok(())
    }

    /// Characteristic scale per embedded coordinate, for the box-normalized
    /// duplicate metric and the refinement steps.
    fn coord_scales(&self, dim: usize) -> Vec<f64> {
        match self.search_box {
            SearchBox::HalfSpace {
                t_min,
                t_max,
                x_half_width,
            } => {
                let mut s = vec![2.0 * x_half_width; dim];
                s[0] = t_max - t_min;
                s
            }
            SearchBox::Ball { rho_max } => vec![2.0 * rho_max; dim],
        }
    }
}

/// Matrix of pairwise atom inner products ⟨K̃_i, K̃_j⟩.
pub fn gram_matrix(family: &KernelFamily, atoms: &[Atom]) -> Result<DMatrix<f64>> {
    let n = atoms.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = eval_k_derivative(family, &atoms[i], &atoms[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// One pre-orthogonal Gram-Schmidt step.
///
/// `prior_rows` express B_1..B_{n−1} in the atom basis; `candidate_column`
/// holds ⟨K̃_cand, K̃_i⟩ for the existing atoms and `candidate_diag` is
/// ‖K̃_cand‖². Returns the coefficients of B_n^cand over the extended atom
/// basis (candidate last) and the normalizing denominator.
pub fn gs_step(
    prior_rows: &[Vec<f64>],
    candidate_column: &[f64],
    candidate_diag: f64,
    degeneracy_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = prior_rows.len();
    debug_assert_eq!(candidate_column.len(), n);
    let mut proj = vec![0.0; n];
    let mut sumsq = 0.0;
    for k in 0..n {
        let mut p = 0.0;
        for (i, &a) in prior_rows[k].iter().enumerate() {
            p += a * candidate_column[i];
        }
        proj[k] = p;
        sumsq += p * p;
    }
    let denom2 = candidate_diag - sumsq;
    let denom = denom2.max(0.0).sqrt();
    let norm = candidate_diag.max(0.0).sqrt();
    if denom <= degeneracy_tol * norm {
        return Err(Error::DegenerateCandidate { denominator: denom });
    }
    let mut row = vec![0.0; n + 1];
    for k in 0..n {
        for (i, &a) in prior_rows[k].iter().enumerate() {
            row[i] -= proj[k] * a;
        }
    }
    row[n] = 1.0;
    for v in row.iter_mut() {
        *v /= denom;
    }
    Ok((row, denom))
}

/// A scored candidate: |⟨g_n, B_n^cand⟩| together with the data needed to
/// commit it.
#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub atom: Atom,
    pub score: f64,
    /// Signed Fourier coefficient ⟨f, B_n^cand⟩.
    pub fourier: f64,
    pub gs_row: Vec<f64>,
    pub denominator: f64,
}

/// Score a candidate against the partial decomposition. `Ok(None)` marks a
/// Gram-Schmidt degenerate candidate (caller should skip it or escalate the
/// atom order).
pub fn candidate_score(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    cand: &Atom,
    degeneracy_tol: f64,
) -> Result<Option<ScoredCandidate>> {
    let n = state.len();
    let mut column = vec![0.0; n];
    for i in 0..n {
        column[i] = eval_k_derivative(family, cand, &state.atoms[i])?;
    }
    let diag = eval_k_derivative(family, cand, cand)?;
    let (row, denom) = match gs_step(&state.gs_matrix, &column, diag, degeneracy_tol) {
        Ok(v) => v,
        Err(Error::DegenerateCandidate { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    // ⟨g_n, B_n^cand⟩ = ⟨f, B_n^cand⟩ since B_n^cand ⊥ span{B_1..B_{n−1}}.
    let mut proj_f = 0.0;
    for k in 0..n {
        let mut p = 0.0;
        for (i, &a) in state.gs_matrix[k].iter().enumerate() {
            p += a * column[i];
        }
        proj_f += p * state.fourier_coeffs[k];
    }
    let inner_f = signal_inner(family, sig, cand)?;
    let fourier = (inner_f - proj_f) / denom;
    Ok(Some(ScoredCandidate {
        atom: cand.clone(),
        score: fourier.abs(),
        fourier,
        gs_row: row,
        denominator: denom,
    }))
}

/// Embed a unit vector from hyperspherical angles: the first d−2 angles run
/// over [0,π], the last over [0,2π).
fn unit_from_angles(angles: &[f64]) -> Vec<f64> {
    let d = angles.len() + 1;
    let mut v = vec![0.0; d];
    let mut sin_prod = 1.0;
    for (i, &a) in angles.iter().enumerate() {
        v[i] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    v[d - 1] = sin_prod;
    v
}

/// All grid parameter points in deterministic lexicographic order.
pub fn enumerate_grid(family: &KernelFamily, config: &SelectionConfig) -> Result<Vec<ParamPoint>> {
    config.validate(family)?;
    let dim = family.param_dim();
    // Per-axis node lists.
    let axes: Vec<Vec<f64>> = match config.search_box {
        SearchBox::HalfSpace {
            t_min,
            t_max,
            x_half_width,
        } => (0..dim)
            .map(|i| {
                let (lo, hi) = if i == 0 {
                    (t_min, t_max)
                } else {
                    (-x_half_width, x_half_width)
                };
                linspace(lo, hi, config.grid_steps[i], true)
            })
            .collect(),
        SearchBox::Ball { rho_max } => {
            let mut axes = vec![linspace(0.0, rho_max, config.grid_steps[0], true)];
            for i in 1..dim {
                let last = i == dim - 1;
                if last {
                    axes.push(linspace(
                        0.0,
                        2.0 * std::f64::consts::PI,
                        config.grid_steps[i],
                        false,
                    ));
                } else {
                    axes.push(linspace(0.0, std::f64::consts::PI, config.grid_steps[i], true));
                }
            }
            axes
        }
    };
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    loop {
        let coords: Vec<f64> = (0..dim).map(|i| axes[i][idx[i]]).collect();
        let p = match config.search_box {
            SearchBox::HalfSpace { .. } => ParamPoint::HalfSpace {
                t: coords[0],
                x: coords[1..].to_vec(),
            },
            SearchBox::Ball { .. } => ParamPoint::Ball {
                rho: coords[0],
                s: unit_from_angles(&coords[1..]),
            },
        };
        out.push(p);
        let mut done = true;
        for i in (0..dim).rev() {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                done = false;
                break;
            }
            idx[i] = 0;
        }
        if done {
            break;
        }
    }
    Ok(out)
}

fn linspace(lo: f64, hi: f64, n: usize, inclusive: bool) -> Vec<f64> {
    let denom = if inclusive { n - 1 } else { n };
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / denom as f64)
        .collect()
}

/// Box-normalized distance between two parameters of the same kind.
fn normalized_distance(config: &SelectionConfig, a: &ParamPoint, b: &ParamPoint) -> f64 {
    let ea = a.embed();
    let eb = b.embed();
    let scales = config.coord_scales(ea.len());
    ea.iter()
        .zip(&eb)
        .zip(&scales)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Index of a previously selected parameter within duplicate tolerance, if
/// any, plus how many times it has been chosen so far.
pub(crate) fn match_previous(
    config: &SelectionConfig,
    state: &Decomposition,
    param: &ParamPoint,
) -> Option<(ParamPoint, usize)> {
    let mut found: Option<ParamPoint> = None;
    for atom in &state.atoms {
        if normalized_distance(config, &atom.param, param) <= config.duplicate_tol {
            found = Some(atom.param.clone());
            break;
        }
    }
    let base = found?;
    let count = state
        .atoms
        .iter()
        .filter(|a| a.param == base)
        .count();
    Some((base, count))
}

/// Candidate directions for a multiple kernel at `param`: the configured
/// set, or signed coordinate axes plus a finite-difference estimate of the
/// score gradient at the parameter.
fn direction_set(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
    param: &ParamPoint,
) -> Vec<Vec<f64>> {
    if let Some(dirs) = &config.directions {
        return dirs.clone();
    }
    let dim = family.param_dim();
    let mut dirs = Vec::with_capacity(2 * dim + 1);
    for i in 0..dim {
        for sgn in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[i] = sgn;
            dirs.push(d);
        }
    }
    // Score-gradient direction from central differences of the order-1
    // score around the parameter.
    let base = param.embed();
    let scales = config.coord_scales(dim);
    let mut grad = vec![0.0; dim];
    let mut ok = true;
    for i in 0..dim {
        let h = 1e-4 * scales[i].max(1.0);
        let mut vals = [0.0; 2];
        for (slot, sgn) in [1.0f64, -1.0].iter().enumerate() {
            let mut e = base.clone();
            e[i] += sgn * h;
            let score = ParamPoint::from_embedding(family.kind, &e)
                .ok()
                .filter(|p| p.validate(family).is_ok())
                .and_then(|p| {
                    candidate_score(
                        family,
                        sig,
                        state,
                        &Atom::plain(p),
                        config.gs_degeneracy_tol,
                    )
                    .ok()
                    .flatten()
                })
                .map(|c| c.score);
            match score {
                Some(s) => vals[slot] = s,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        grad[i] = (vals[0] - vals[1]) / (2.0 * h);
    }
    if ok {
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 1e-14 {
            dirs.push(grad.iter().map(|g| g / norm).collect());
        }
    }
    dirs
}

fn clamp_to_box(config: &SelectionConfig, e: &mut [f64]) {
    match config.search_box {
        SearchBox::HalfSpace {
            t_min,
            t_max,
            x_half_width,
        } => {
            e[0] = e[0].clamp(t_min, t_max);
            for v in e.iter_mut().skip(1) {
                *v = v.clamp(-x_half_width, x_half_width);
            }
        }
        SearchBox::Ball { rho_max } => {
            let r: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > rho_max {
                let f = rho_max / r;
                for v in e.iter_mut() {
                    *v *= f;
                }
            }
        }
    }
}

fn on_box_boundary(config: &SelectionConfig, p: &ParamPoint) -> bool {
    let eps = 1e-9;
    match (&config.search_box, p) {
        (
            SearchBox::HalfSpace {
                t_min,
                t_max,
                x_half_width,
            },
            ParamPoint::HalfSpace { t, x },
        ) => {
            (t - t_min).abs() <= eps * t_max
                || (t - t_max).abs() <= eps * t_max
                || x.iter().any(|v| (v.abs() - x_half_width).abs() <= eps * x_half_width)
        }
        (SearchBox::Ball { rho_max }, ParamPoint::Ball { rho, .. }) => {
            (rho - rho_max).abs() <= eps
        }
        _ => false,
    }
}

/// Compass (coordinate) search polish of an order-1 winner, staying inside
/// the search box and away from previously selected parameters.
fn refine_plain(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
    start: &ScoredCandidate,
) -> Result<ScoredCandidate> {
    let dim = family.param_dim();
    let scales = config.coord_scales(dim);
    let mut steps: Vec<f64> = (0..dim)
        .map(|i| scales[i] / config.grid_steps[i] as f64)
        .collect();
    let mut current = start.clone();
    let mut embed = current.atom.param.embed();
    for _ in 0..config.max_refine_rounds {
        let mut improved = false;
        for i in 0..dim {
            for sgn in [1.0, -1.0] {
                let mut e = embed.clone();
                e[i] += sgn * steps[i];
                clamp_to_box(config, &mut e);
                let Ok(param) = ParamPoint::from_embedding(family.kind, &e) else {
                    continue;
                };
                if param.validate(family).is_err() {
                    continue;
                }
                if match_previous(config, state, &param).is_some() {
                    continue;
                }
                let cand = Atom::plain(param);
                if let Some(scored) =
                    candidate_score(family, sig, state, &cand, config.gs_degeneracy_tol)?
                {
                    if scored.score > current.score {
                        embed = scored.atom.param.embed();
                        current = scored;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
            if steps.iter().all(|&s| s < 1e-6) {
                break;
            }
        }
    }
    Ok(current)
}

/// Multiple-kernel candidates at a previously selected parameter: order =
/// times chosen + 1, best over the direction set.
pub(crate) fn best_escalated(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
    base: &ParamPoint,
    count: usize,
) -> Result<Option<ScoredCandidate>> {
    if family.kind == FamilyKind::Convolution {
        // Derivative kernels are unavailable without a closed form.
        return Ok(None);
    }
    let order = count + 1;
    if order + 1 > 5 {
        return Ok(None);
    }
    let mut best: Option<ScoredCandidate> = None;
    for dir in direction_set(family, sig, state, config, base) {
        let Ok(atom) = Atom::multiple(base.clone(), order, dir) else {
            continue;
        };
        if atom.validate(family).is_err() {
            continue;
        }
        if let Some(scored) = candidate_score(family, sig, state, &atom, config.gs_degeneracy_tol)? {
            if best.as_ref().map_or(true, |b| scored.score > b.score) {
                best = Some(scored);
            }
        }
    }
    Ok(best)
}

/// Maximal selection: the best atom over the grid (with repeat escalation
/// and optional compass refinement), or — with `weak_rho < 1` — the first
/// grid atom reaching `weak_rho` × the grid supremum at a fresh parameter.
pub fn maximal_select(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
) -> Result<Atom> {
    Ok(select_scored(family, sig, state, config)?.atom)
}

/// As [`maximal_select`] but returning the full scored candidate.
pub fn select_scored(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
) -> Result<ScoredCandidate> {
    config.validate(family)?;
    let grid = enumerate_grid(family, config)?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }

    if config.weak_rho < 1.0 {
        return weak_select(family, sig, state, config, &grid);
    }

    let mut best: Option<ScoredCandidate> = None;
    let mut escalation_bases: Vec<(ParamPoint, usize)> = Vec::new();
    for atom in &state.atoms {
        if !escalation_bases.iter().any(|(p, _)| p == &atom.param) {
            let count = state.atoms.iter().filter(|a| a.param == atom.param).count();
            escalation_bases.push((atom.param.clone(), count));
        }
    }

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
            if best.as_ref().map_or(true, |b| c.score > b.score) {
                best = Some(c);
            }
        }
    }
    // Previously selected parameters are themselves dictionary points; score
    // their multiple kernels even when no grid node lands on them.
    for (base, count) in &escalation_bases {
        if let Some(c) = best_escalated(family, sig, state, config, base, *count)? {
            if best.as_ref().map_or(true, |b| c.score > b.score) {
                best = Some(c);
            }
        }
    }

    let mut best = best.ok_or(Error::DictionaryExhausted)?;
    if config.refine && best.atom.order == 1 {
        best = refine_plain(family, sig, state, config, &best)?;
    }
    if on_box_boundary(config, &best.atom.param) {
        eprintln!(
            "warning: selected parameter {:?} lies on the search box boundary; consider enlarging the box",
            best.atom.param
        );
    }
    Ok(best)
}

fn weak_select(
    family: &KernelFamily,
    sig: &Signal,
    state: &Decomposition,
    config: &SelectionConfig,
    grid: &[ParamPoint],
) -> Result<ScoredCandidate> {
    // Weak selection never escalates order: parameters must stay distinct
    // from every previous choice.
    let mut scores: Vec<Option<ScoredCandidate>> = Vec::with_capacity(grid.len());
    let mut sup = f64::NEG_INFINITY;
    for param in grid {
        if match_previous(config, state, param).is_some() {
            scores.push(None);
            continue;
        }
        let scored = candidate_score(
            family,
            sig,
            state,
            &Atom::plain(param.clone()),
            config.gs_degeneracy_tol,
        )?;
        if let Some(c) = &scored {
            sup = sup.max(c.score);
        }
        scores.push(scored);
    }
    if !sup.is_finite() {
        return Err(Error::DictionaryExhausted);
    }
    let threshold = config.weak_rho * sup;
    for scored in scores.into_iter().flatten() {
        if scored.score >= threshold {
            return Ok(scored);
        }
    }
    Err(Error::DictionaryExhausted)
}

/// Run POAFD: iterate maximal selection and Gram-Schmidt commits, recording
/// Fourier coefficients and remainder energies.
pub fn poafd_run(
    family: &KernelFamily,
    sig: &Signal,
    n_iterations: usize,
    config: &SelectionConfig,
) -> Result<Decomposition> {
    if n_iterations == 0 {
        return Err(Error::Config("n_iterations must be >= 1".into()));
    }
    if let Some(profile) = &family.profile {
        if profile.delta < 1.0 {
            return Err(Error::BvcUnavailable {
                delta: profile.delta,
            });
        }
    }
    config.validate(family)?;
    sig.validate(family)?;
    let norm = signal_norm(family, sig)?;
    if !(norm > 0.0) {
        return Err(Error::Config("signal norm must be positive".into()));
    }
    let mut dec = Decomposition::empty(family, norm);
    let mut energy = norm * norm;
    for _ in 0..n_iterations {
        if energy <= config.early_stop_rel * norm * norm {
            break;
        }
        let scored = match select_scored(family, sig, &dec, config) {
            Ok(s) => s,
            Err(Error::DictionaryExhausted) => break,
            Err(e) => return Err(e),
        };
        dec.atoms.push(scored.atom);
        dec.gs_matrix.push(scored.gs_row);
        dec.fourier_coeffs.push(scored.fourier);
        energy -= scored.fourier * scored.fourier;
        dec.remainder_energies.push(energy);
    }
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::atom_norm;
    use approx::assert_relative_eq;

    fn heat1() -> KernelFamily {
        KernelFamily::heat_half_space(1).unwrap()
    }

    fn small_config(family: &KernelFamily) -> SelectionConfig {
        let mut c = SelectionConfig::default_for(family);
        c.search_box = SearchBox::HalfSpace {
            t_min: 0.2,
            t_max: 3.0,
            x_half_width: 3.0,
        };
        c.grid_steps = vec![15; family.param_dim()];
        c
    }

    #[test]
    fn gs_first_step() {
        let diag = 4.0;
        let (row, denom) = gs_step(&[], &[], diag, 1e-8).unwrap();
        assert_relative_eq!(denom, 2.0);
        assert_eq!(row, vec![0.5]);
    }

    #[test]
    fn gs_duplicate_candidate_degenerate() {
        let fam = heat1();
        let a = Atom::plain(ParamPoint::half_space(1.0, vec![0.3]));
        let diag = eval_k_derivative(&fam, &a, &a).unwrap();
        let (row0, _) = gs_step(&[], &[], diag, 1e-8).unwrap();
        let res = gs_step(&[row0], &[diag], diag, 1e-8);
        assert!(matches!(res, Err(Error::DegenerateCandidate { .. })));
    }

    #[test]
    fn gs_rows_match_cholesky_inverse() {
        // The GS coefficient matrix is the inverse Cholesky factor of the
        // Gram matrix; check on a random 3-atom instance.
        let fam = heat1();
        let atoms = vec![
            Atom::plain(ParamPoint::half_space(0.5, vec![0.0])),
            Atom::plain(ParamPoint::half_space(1.0, vec![1.0])),
            Atom::plain(ParamPoint::half_space(2.0, vec![-0.5])),
        ];
        let gram = gram_matrix(&fam, &atoms).unwrap();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for n in 0..3 {
            let col: Vec<f64> = (0..n).map(|i| gram[(n, i)]).collect();
            let (row, _) = gs_step(&rows, &col, gram[(n, n)], 1e-8).unwrap();
            rows.push(row);
        }
        let chol = gram.clone().cholesky().expect("gram is SPD");
        let linv = chol
            .l()
            .try_inverse()
            .expect("triangular inverse");
        for k in 0..3 {
            for i in 0..=k {
                assert_relative_eq!(rows[k][i], linv[(k, i)], max_relative = 1e-10);
            }
        }
        // orthonormality under gram
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..=i {
                    for b in 0..=j {
                        acc += rows[i][a] * rows[j][b] * gram[(a, b)];
                    }
                }
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((acc - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn score_of_matching_atom_is_one() {
        let fam = heat1();
        let p = ParamPoint::half_space(1.0, vec![0.5]);
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let dec = Decomposition::empty(&fam, 1.0);
        let scored = candidate_score(&fam, &sig, &dec, &Atom::plain(p), 1e-8)
            .unwrap()
            .unwrap();
        assert_relative_eq!(scored.score, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn score_vanishes_with_distance() {
        let fam = heat1();
        let p = ParamPoint::half_space(1.0, vec![0.0]);
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let dec = Decomposition::empty(&fam, 1.0);
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let q = ParamPoint::half_space(1.0, vec![4.0 * k as f64]);
            let s = candidate_score(&fam, &sig, &dec, &Atom::plain(q), 1e-8)
                .unwrap()
                .unwrap()
                .score;
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn exhausted_remainder_scores_tiny() {
        let fam = heat1();
        let p = ParamPoint::half_space(1.0, vec![0.5]);
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let config = small_config(&fam);
        let dec = poafd_run(&fam, &sig, 1, &config).unwrap();
        assert_eq!(dec.len(), 1);
        let q = ParamPoint::half_space(0.7, vec![-1.0]);
        if let Some(scored) = candidate_score(&fam, &sig, &dec, &Atom::plain(q), 1e-8).unwrap() {
            assert!(scored.score <= 1e-6, "score {}", scored.score);
        }
    }

    #[test]
    fn one_atom_recovery_on_grid() {
        let fam = heat1();
        let mut config = small_config(&fam);
        config.refine = false;
        let grid = enumerate_grid(&fam, &config).unwrap();
        let p = grid[37].clone();
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let dec = poafd_run(&fam, &sig, 1, &config).unwrap();
        assert_eq!(dec.atoms[0].param, p);
        assert!(dec.remainder_energies[0].abs() <= 1e-10);
    }

    #[test]
    fn repeat_escalates_order() {
        let fam = heat1();
        let mut config = small_config(&fam);
        config.refine = false;
        let grid = enumerate_grid(&fam, &config).unwrap();
        let p = grid[52].clone();
        let deriv = Atom::multiple(p.clone(), 2, vec![1.0, 0.0]).unwrap();
        let sig = Signal::combination(vec![(2.0, Atom::plain(p.clone())), (0.05, deriv)]);
        let dec = poafd_run(&fam, &sig, 2, &config).unwrap();
        assert_eq!(dec.atoms[0].param, p);
        assert_eq!(dec.atoms[1].order, 2);
        assert_eq!(dec.atoms[1].param, p);
        assert!(dec.is_consecutive_multiple_sequence());
    }

    #[test]
    fn scale_equivariance() {
        let fam = heat1();
        let mut config = small_config(&fam);
        config.refine = false;
        let terms = vec![
            (0.9, Atom::plain(ParamPoint::half_space(0.7, vec![0.4]))),
            (-1.4, Atom::plain(ParamPoint::half_space(1.6, vec![-1.1]))),
        ];
        let scaled: Vec<(f64, Atom)> =
            terms.iter().map(|(c, a)| (-3.0 * c, a.clone())).collect();
        let d1 = poafd_run(&fam, &Signal::combination(terms), 3, &config).unwrap();
        let d2 = poafd_run(&fam, &Signal::combination(scaled), 3, &config).unwrap();
        assert_eq!(d1.atoms, d2.atoms);
        for k in 0..d1.len() {
            assert_relative_eq!(
                d2.fourier_coeffs[k],
                -3.0 * d1.fourier_coeffs[k],
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn weak_selection_contract() {
        let fam = heat1();
        let mut config = small_config(&fam);
        config.refine = false;
        let sig = Signal::combination(vec![
            (1.0, Atom::plain(ParamPoint::half_space(0.7, vec![0.4]))),
            (0.8, Atom::plain(ParamPoint::half_space(1.9, vec![-1.3]))),
        ]);
        let dec = Decomposition::empty(&fam, signal_norm(&fam, &sig).unwrap());
        // Pure selection gives the grid supremum.
        let sup = select_scored(&fam, &sig, &dec, &config).unwrap().score;
        config.weak_rho = 0.5;
        let weak = select_scored(&fam, &sig, &dec, &config).unwrap();
        assert!(weak.score >= 0.5 * sup - 1e-12);
    }

    #[test]
    fn monotone_errors_and_energy_identity() {
        let fam = heat1();
        let config = small_config(&fam);
        let sig = Signal::combination(vec![
            (1.0, Atom::plain(ParamPoint::half_space(0.6, vec![0.3]))),
            (0.5, Atom::plain(ParamPoint::half_space(1.5, vec![-0.9]))),
            (0.2, Atom::plain(ParamPoint::half_space(2.2, vec![1.7]))),
        ]);
        let dec = poafd_run(&fam, &sig, 4, &config).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=dec.len() {
            let e = relative_error(&dec, k).unwrap();
            assert!(e <= prev + 1e-12);
            prev = e;
        }
        let sum_sq: f64 = dec.fourier_coeffs.iter().map(|c| c * c).sum();
        let norm2 = dec.signal_norm * dec.signal_norm;
        assert!(
            (norm2 - sum_sq - dec.remainder_energy()).abs() <= 1e-8 * norm2,
            "energy identity violated"
        );
        assert!(dec.orthonormality_residual(&fam).unwrap() <= 1e-8);
    }

    #[test]
    fn zero_iterations_rejected() {
        let fam = heat1();
        let config = small_config(&fam);
        let sig = Signal::combination(vec![(
            1.0,
            Atom::plain(ParamPoint::half_space(1.0, vec![0.0])),
        )]);
        assert!(poafd_run(&fam, &sig, 0, &config).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let fam = heat1();
        let config = small_config(&fam);
        let sig = Signal::combination(vec![
            (1.0, Atom::plain(ParamPoint::half_space(0.6, vec![0.3]))),
            (0.5, Atom::plain(ParamPoint::half_space(1.5, vec![-0.9]))),
        ]);
        let dec = poafd_run(&fam, &sig, 2, &config).unwrap();
        let json = dec.to_json().unwrap();
        let back = Decomposition::from_json(&json).unwrap();
        assert_eq!(back.atoms, dec.atoms);
        assert_eq!(back.gs_matrix, dec.gs_matrix);
        assert_eq!(back.fourier_coeffs, dec.fourier_coeffs);
        assert_eq!(back.remainder_energies, dec.remainder_energies);
        assert_eq!(back.signal_norm, dec.signal_norm);
    }

    #[test]
    fn one_term_reconstruction_matches_normalized_boundary_kernel() {
        let fam = heat1();
        let config = small_config(&fam);
        let p = ParamPoint::half_space(1.0, vec![0.5]);
        let sig = Signal::combination(vec![(1.0, Atom::plain(p.clone()))]);
        let dec = poafd_run(&fam, &sig, 1, &config).unwrap();
        let pts: Vec<Vec<f64>> = (-5..=5).map(|i| vec![i as f64 * 0.5]).collect();
        let rec = crate::signals::reconstruct_boundary(&fam, &dec, &pts).unwrap();
        let norm = atom_norm(&fam, &Atom::plain(p.clone())).unwrap();
        for (pt, r) in pts.iter().zip(rec) {
            let want = crate::kernels::eval_h(&fam, &p, pt).unwrap() / norm;
            assert_relative_eq!(r, want, max_relative = 1e-6, epsilon = 1e-12);
        }
    }
}
