//! Run configurations, experiment presets and verification suites backing
//! the command-line interface.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    enumerate_grid, maximal_select, poafd_run, relative_error, Decomposition, SelectionConfig,
};
use crate::error::{Error, Result};
use crate::kernels::{
    atom_norm, eval_h_derivative, eval_k, eval_k_derivative, kernel_norm, Atom, BoxGrid,
    ConvolutionProfile, KernelFamily, ParamPoint, QuadRule,
};
use crate::oracles::{
    brute_force_argmax, fd_directional, quadrature_inner_halfspace, quadrature_inner_sphere,
    SphereGrid,
};
use crate::signals::{reconstruct_boundary, signal_inner, Signal};

pub const SCHEMA_VERSION: u32 = 1;
pub const CURVE_POINTS: usize = 512;

pub fn library_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// FNV-1a, used to stamp emitted CSVs with a hash of the driving config.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".into()
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilySpec {
    /// One of "poisson", "heat", "sphere", "convolution".
    pub kind: String,
    pub d: usize,
    /// Convolution profile name ("poisson" or "gaussian"); required iff
    /// kind = "convolution".
    #[serde(default)]
    pub profile: Option<String>,
}

impl FamilySpec {
    pub fn build(&self) -> Result<KernelFamily> {
        match self.kind.as_str() {
            "poisson" => KernelFamily::poisson_half_space(self.d),
            "heat" => KernelFamily::heat_half_space(self.d),
            "sphere" => KernelFamily::spherical_poisson(self.d),
            "convolution" => {
                let name = self.profile.as_deref().ok_or_else(|| {
                    Error::Config("convolution family needs a profile name".into())
                })?;
                let steps = match self.d {
                    1 => 4096,
                    2 => 256,
                    _ => 64,
                };
                let check = BoxGrid::symmetric(self.d, 60.0, steps, QuadRule::Trapezoid)?;
                let profile = match name {
                    "poisson" => ConvolutionProfile::poisson(self.d, &check)?,
                    "gaussian" => ConvolutionProfile::gaussian(self.d, &check)?,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown convolution profile {other:?} (expected poisson or gaussian)"
                        )))
                    }
                };
                let qsteps = match self.d {
                    1 => 1600,
                    2 => 160,
                    _ => 48,
                };
                let quad = BoxGrid::symmetric(self.d, 40.0, qsteps, QuadRule::Trapezoid)?;
                KernelFamily::convolution(self.d, profile, quad)
            }
            other => Err(Error::Config(format!(
                "unknown family kind {other:?} (expected poisson, heat, sphere or convolution)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermSpec {
    pub coefficient: f64,
    pub param: ParamPoint,
    #[serde(default = "one")]
    pub order: usize,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSpec {
    /// Inline kernel combination.
    Terms(Vec<TermSpec>),
    /// Path to a CSV of sampled boundary rows: point coords…, value, weight.
    Samples(PathBuf),
}

impl SignalSpec {
    pub fn build(&self, family: &KernelFamily, base_dir: &Path) -> Result<Signal> {
        match self {
            SignalSpec::Terms(terms) => {
                let mut out = Vec::with_capacity(terms.len());
                for t in terms {
                    let atom = if t.order == 1 {
                        Atom::plain(t.param.clone())
                    } else {
                        let dir = t.direction.clone().ok_or_else(|| {
                            Error::Config("terms of order > 1 need a direction".into())
                        })?;
                        Atom::multiple(t.param.clone(), t.order, dir)?
                    };
                    atom.validate(family)?;
                    out.push((t.coefficient, atom));
                }
                Ok(Signal::combination(out))
            }
            SignalSpec::Samples(path) => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let text = fs::read_to_string(&full).map_err(|e| {
                    Error::Config(format!("cannot read sample file {}: {e}", full.display()))
                })?;
                parse_samples(&text, family.boundary_dim())
            }
        }
    }
}

/// Parse sampled boundary rows: `x1,…,xd,value,weight`. Lines starting with
/// `#` and a non-numeric header row are skipped.
pub fn parse_samples(text: &str, d: usize) -> Result<Signal> {
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0].parse::<f64>().is_err() && lineno == 0 {
            continue; // header
        }
        if fields.len() != d + 2 {
            return Err(Error::Config(format!(
                "sample line {}: expected {} fields, got {}",
                lineno + 1,
                d + 2,
                fields.len()
            )));
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Config(format!("sample line {}: bad number {f:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        points.push(nums[..d].to_vec());
        values.push(nums[d]);
        weights.push(nums[d + 1]);
    }
    if points.is_empty() {
        return Err(Error::Config("sample file has no data rows".into()));
    }
    Signal::sampled(points, values, weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitKind {
    Decomposition,
    Errors,
    BoundaryCurve,
    GramReport,
}

fn default_emit() -> Vec<EmitKind> {
    vec![EmitKind::Decomposition, EmitKind::Errors]
}

/// Boundary curve along which approximation quality is tabulated.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    /// Meridian of S² at fixed azimuth θ, polar angle φ ∈ [0, π].
    SphereMeridian { theta: f64 },
    /// Straight line in the boundary hyperplane: coordinate `axis` sweeps
    /// [lo, hi], the remaining coordinates are pinned to `fixed`.
    BoundaryLine {
        axis: usize,
        fixed: Vec<f64>,
        lo: f64,
        hi: f64,
    },
}

impl CurveSpec {
    /// (abscissa, boundary point) pairs; CURVE_POINTS evenly spaced samples.
    pub fn points(&self, boundary_dim: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = CURVE_POINTS;
        match self {
            CurveSpec::SphereMeridian { theta } => {
                if boundary_dim != 3 {
                    return Err(Error::Config("sphere_meridian curve needs d = 3".into()));
                }
                Ok((0..n)
                    .map(|i| {
                        let phi = PI * i as f64 / (n - 1) as f64;
                        let s = vec![
                            phi.sin() * theta.cos(),
                            phi.sin() * theta.sin(),
                            phi.cos(),
                        ];
                        (phi, s)
                    })
                    .collect())
            }
            CurveSpec::BoundaryLine {
                axis,
                fixed,
                lo,
                hi,
            } => {
                if fixed.len() != boundary_dim || *axis >= boundary_dim {
                    return Err(Error::Config("boundary_line axis/fixed mismatch".into()));
                }
                if !(hi > lo) {
                    return Err(Error::Config("boundary_line needs hi > lo".into()));
                }
                Ok((0..n)
                    .map(|i| {
                        let u = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                        let mut p = fixed.clone();
                        p[*axis] = u;
                        (u, p)
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub family: FamilySpec,
    pub signal: SignalSpec,
    pub iterations: usize,
    /// Selection settings; family defaults when omitted.
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    pub output: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<EmitKind>,
    #[serde(default)]
    pub curve: Option<CurveSpec>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.emit.contains(&EmitKind::BoundaryCurve) && self.curve.is_none() {
            return Err(Error::Config(
                "emit includes boundary-curve but no curve is configured".into(),
            ));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<(RunConfig, u64)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "config {}: parse error at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    config.validate()?;
    Ok((config, fnv1a64(text.as_bytes())))
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

fn csv_comment(config_hash: u64) -> String {
    format!(
        "# config_hash={config_hash:016x} version={}\n",
        library_version()
    )
}

fn param_headers(family: &KernelFamily) -> Vec<String> {
    if family.kind.is_half_space() {
        let mut h = vec!["t".to_string()];
        h.extend((1..=family.d).map(|i| format!("x{i}")));
        h
    } else {
        let mut h = vec!["rho".to_string()];
        h.extend((1..=family.d).map(|i| format!("s{i}")));
        h
    }
}

fn param_fields(p: &ParamPoint) -> Vec<f64> {
    match p {
        ParamPoint::HalfSpace { t, x } => {
            let mut v = vec![*t];
            v.extend_from_slice(x);
            v
        }
        ParamPoint::Ball { rho, s } => {
            let mut v = vec![*rho];
            v.extend_from_slice(s);
            v
        }
    }
}

pub fn errors_csv(family: &KernelFamily, dec: &Decomposition, config_hash: u64) -> Result<String> {
    let mut out = csv_comment(config_hash);
    out.push_str("iteration,");
    out.push_str(&param_headers(family).join(","));
    out.push_str(",order,coefficient,relative_error\n");
    for k in 0..dec.len() {
        let fields: Vec<String> = param_fields(&dec.atoms[k].param)
            .into_iter()
            .map(fmt_f)
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            k + 1,
            fields.join(","),
            dec.atoms[k].order,
            fmt_f(dec.fourier_coeffs[k]),
            fmt_f(relative_error(dec, k + 1)?)
        ));
    }
    Ok(out)
}

/// Boundary value of a kernel-combination signal; None for sampled signals,
/// whose underlying function is unknown off the sample set.
pub fn signal_boundary_value(
    family: &KernelFamily,
    sig: &Signal,
    y: &[f64],
) -> Result<Option<f64>> {
    match sig {
        Signal::KernelCombination { terms } => {
            let mut v = 0.0;
            for (c, atom) in terms {
                v += c * eval_h_derivative(family, atom, y)? / atom_norm(family, atom)?;
            }
            Ok(Some(v))
        }
        Signal::SampledBoundary { .. } => Ok(None),
    }
}

pub fn curve_csv(
    family: &KernelFamily,
    sig: &Signal,
    dec: &Decomposition,
    curve: &CurveSpec,
    config_hash: u64,
) -> Result<String> {
    let pts = curve.points(family.boundary_dim())?;
    let boundary: Vec<Vec<f64>> = pts.iter().map(|(_, p)| p.clone()).collect();
    let rec = reconstruct_boundary(family, dec, &boundary)?;
    let mut out = csv_comment(config_hash);
    out.push_str("abscissa,");
    out.push_str(
        &(1..=family.boundary_dim())
            .map(|i| format!("p{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push_str(",true_value,reconstructed\n");
    for ((u, p), r) in pts.iter().zip(rec) {
        let truth = signal_boundary_value(family, sig, p)?
            .map(fmt_f)
            .unwrap_or_else(|| "nan".into());
        let coords: Vec<String> = p.iter().copied().map(fmt_f).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f(*u),
            coords.join(","),
            truth,
            fmt_f(r)
        ));
    }
    Ok(out)
}

pub fn gram_csv(family: &KernelFamily, dec: &Decomposition, config_hash: u64) -> Result<String> {
    let mut out = csv_comment(config_hash);
    out.push_str(&format!(
        "# orthonormality_residual={}\n",
        fmt_f(dec.orthonormality_residual(family)?)
    ));
    out.push_str("i,j,gram\n");
    let g = crate::engine::gram_matrix(family, &dec.atoms)?;
    for i in 0..dec.len() {
        for j in 0..dec.len() {
            out.push_str(&format!("{},{},{}\n", i + 1, j + 1, fmt_f(g[(i, j)])));
        }
    }
    Ok(out)
}

pub struct RunArtifacts {
    pub decomposition: Decomposition,
    pub written: Vec<PathBuf>,
}

/// Execute a run config end to end and write the requested artifacts.
pub fn run_decompose(config: &RunConfig, base_dir: &Path, config_hash: u64) -> Result<RunArtifacts> {
    config.validate()?;
    let family = config.family.build()?;
    let sig = config.signal.build(&family, base_dir)?;
    let selection = match &config.selection {
        Some(s) => s.clone(),
        None => SelectionConfig::default_for(&family),
    };
    let dec = poafd_run(&family, &sig, config.iterations, &selection)?;

    fs::create_dir_all(&config.output)?;
    let mut written = Vec::new();
    for kind in &config.emit {
        let (name, text) = match kind {
            EmitKind::Decomposition => ("decomposition.json".to_string(), dec.to_json()?),
            EmitKind::Errors => ("errors.csv".to_string(), errors_csv(&family, &dec, config_hash)?),
            EmitKind::BoundaryCurve => {
                let curve = config.curve.as_ref().expect("validated");
                (
                    "boundary_curve.csv".to_string(),
                    curve_csv(&family, &sig, &dec, curve, config_hash)?,
                )
            }
            EmitKind::GramReport => {
                ("gram_report.csv".to_string(), gram_csv(&family, &dec, config_hash)?)
            }
        };
        let path = config.output.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(RunArtifacts {
        decomposition: dec,
        written,
    })
}

// ---------------------------------------------------------------------------
// Experiment presets
// ---------------------------------------------------------------------------

pub struct Experiment {
    pub name: &'static str,
    pub family: KernelFamily,
    pub signal: Signal,
    pub iterations: usize,
    pub curve: CurveSpec,
    /// (iteration, published relative error) comparison rows.
    pub published: Vec<(usize, f64)>,
}

fn sphere_point(phi: f64, theta: f64) -> Vec<f64> {
    vec![
        phi.sin() * theta.cos(),
        phi.sin() * theta.sin(),
        phi.cos(),
    ]
}

pub fn example1() -> Result<Experiment> {
    let family = KernelFamily::spherical_poisson(3)?;
    let c = [0.8463, 1.4105, 0.0470];
    let rho = [0.4, 0.6, 0.8];
    let phi = [PI / 5.0, PI / 2.0, 4.0 * PI / 5.0];
    let theta = [PI / 5.0, 4.0 * PI / 5.0, 7.0 * PI / 5.0];
    let terms = (0..3)
        .map(|j| {
            (
                c[j],
                Atom::plain(ParamPoint::ball(rho[j], sphere_point(phi[j], theta[j]))),
            )
        })
        .collect();
    Ok(Experiment {
        name: "example1",
        family,
        signal: Signal::combination(terms),
        iterations: 8,
        curve: CurveSpec::SphereMeridian { theta: 3.02 },
        published: vec![(2, 0.4310), (4, 0.0237), (6, 0.0022), (8, 3e-6)],
    })
}

pub fn example2() -> Result<Experiment> {
    let family = KernelFamily::heat_half_space(2)?;
    let s = [3.0, 1.0, 5.0, 7.0];
    let y = [
        vec![-1.0, 1.0],
        vec![1.0, -5.0],
        vec![2.0, 6.0],
        vec![-5.0, 2.0],
    ];
    let c = [0.05, 0.5, 0.01, 1.0];
    let terms = (0..4)
        .map(|j| (c[j], Atom::plain(ParamPoint::half_space(s[j], y[j].clone()))))
        .collect();
    Ok(Experiment {
        name: "example2",
        family,
        signal: Signal::combination(terms),
        iterations: 7,
        curve: CurveSpec::BoundaryLine {
            axis: 0,
            fixed: vec![0.0, -10.0],
            lo: -10.0,
            hi: 10.0,
        },
        published: vec![(3, 0.0190), (5, 0.0087), (7, 0.0002)],
    })
}

pub fn experiment_by_name(name: &str) -> Result<Experiment> {
    match name {
        "example1" => example1(),
        "example2" => example2(),
        other => Err(Error::Config(format!(
            "unknown experiment {other:?} (expected example1 or example2)"
        ))),
    }
}

pub struct ExperimentReport {
    pub decomposition: Decomposition,
    pub comparison: Vec<(usize, f64, f64)>,
    pub written: Vec<PathBuf>,
}

pub fn run_experiment(name: &str, out_dir: &Path) -> Result<ExperimentReport> {
    let exp = experiment_by_name(name)?;
    let selection = SelectionConfig::default_for(&exp.family);
    let dec = poafd_run(&exp.family, &exp.signal, exp.iterations, &selection)?;
    let hash = fnv1a64(name.as_bytes());

    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (file, text) in [
        ("decomposition.json".to_string(), dec.to_json()?),
        ("errors.csv".to_string(), errors_csv(&exp.family, &dec, hash)?),
        (
            "boundary_curve.csv".to_string(),
            curve_csv(&exp.family, &exp.signal, &dec, &exp.curve, hash)?,
        ),
    ] {
        let path = out_dir.join(file);
        fs::write(&path, text)?;
        written.push(path);
    }

    let mut comparison = Vec::new();
    let mut cmp = csv_comment(hash);
    cmp.push_str("iteration,relative_error,published\n");
    for &(k, pub_err) in &exp.published {
        let measured = relative_error(&dec, k)?;
        cmp.push_str(&format!("{k},{},{}\n", fmt_f(measured), fmt_f(pub_err)));
        comparison.push((k, measured, pub_err));
    }
    let path = out_dir.join("comparison.csv");
    fs::write(&path, cmp)?;
    written.push(path);

    Ok(ExperimentReport {
        decomposition: dec,
        comparison,
        written,
    })
}

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyScope {
    Semigroup,
    Bvc,
    Derivatives,
    Greedy,
    Rate,
}

impl VerifyScope {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "semigroup" => VerifyScope::Semigroup,
            "bvc" => VerifyScope::Bvc,
            "derivatives" => VerifyScope::Derivatives,
            "greedy" => VerifyScope::Greedy,
            "rate" => VerifyScope::Rate,
            other => {
                return Err(Error::Config(format!(
                    "unknown verify scope {other:?} (expected semigroup, bvc, derivatives, greedy or rate)"
                )))
            }
        })
    }

    pub fn all() -> Vec<Self> {
        vec![
            VerifyScope::Semigroup,
            VerifyScope::Bvc,
            VerifyScope::Derivatives,
            VerifyScope::Greedy,
            VerifyScope::Rate,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(
        suite: &'static str,
        name: String,
        value: f64,
        reference: f64,
        residual: f64,
        tolerance: f64,
    ) -> Self {
        CheckRow {
            suite,
            name,
            value,
            reference,
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }
}

pub fn checks_csv(rows: &[CheckRow], config_hash: u64) -> String {
    let mut out = csv_comment(config_hash);
    out.push_str("suite,check,value,reference,residual,tolerance,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.suite,
            r.name,
            fmt_f(r.value),
            fmt_f(r.reference),
            fmt_f(r.residual),
            fmt_f(r.tolerance),
            r.pass
        ));
    }
    out
}

fn random_half_space(rng: &mut ChaCha8Rng, d: usize) -> ParamPoint {
    let t = rng.random_range(0.4..3.0);
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    ParamPoint::half_space(t, x)
}

fn random_ball(rng: &mut ChaCha8Rng, d: usize) -> ParamPoint {
    let rho = rng.random_range(0.1..0.75);
    let mut s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0f64)).collect();
    let n: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-6 {
        s = vec![0.0; d];
        s[d - 1] = 1.0;
        return ParamPoint::ball(rho, s);
    }
    s.iter_mut().for_each(|v| *v /= n);
    ParamPoint::ball(rho, s)
}

fn random_param(rng: &mut ChaCha8Rng, family: &KernelFamily) -> ParamPoint {
    if family.kind.is_half_space() {
        random_half_space(rng, family.d)
    } else {
        random_ball(rng, family.d)
    }
}

/// Semigroup suite: quadrature ⟨h_q, h_p⟩ vs the closed-form K(q, p),
/// 6 random pairs for each of Poisson d=1,2, heat d=1,2, sphere d=3.
pub fn verify_semigroup(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let tol = 1e-4;

    for (mk, label) in [
        (KernelFamily::poisson_half_space as fn(usize) -> Result<KernelFamily>, "poisson"),
        (KernelFamily::heat_half_space as fn(usize) -> Result<KernelFamily>, "heat"),
    ] {
        for d in [1usize, 2] {
            let fam = mk(d)?;
            let (hw, steps) = if d == 1 { (120.0, 4000) } else { (60.0, 600) };
            let grid = BoxGrid::symmetric(d, hw, steps, QuadRule::Trapezoid)?;
            for i in 0..6 {
                let q = random_half_space(&mut rng, d);
                let p = random_half_space(&mut rng, d);
                let exact = eval_k(&fam, &q, &p)?;
                let est = quadrature_inner_halfspace(&fam, &q, &p, &grid, 1e-3)?;
                let residual = (est.value - exact).abs() / exact.abs();
                rows.push(CheckRow::new(
                    "semigroup",
                    format!("{label}_d{d}_pair{i}"),
                    est.value,
                    exact,
                    residual,
                    tol,
                ));
            }
        }
    }

    let fam = KernelFamily::spherical_poisson(3)?;
    let grid = SphereGrid::new(600, 1200)?;
    for i in 0..6 {
        let q = random_ball(&mut rng, 3);
        let p = random_ball(&mut rng, 3);
        let exact = eval_k(&fam, &q, &p)?;
        let est = quadrature_inner_sphere(&fam, &q, &p, &grid)?;
        let residual = (est.value - exact).abs() / exact.abs();
        rows.push(CheckRow::new(
            "semigroup",
            format!("sphere_d3_pair{i}"),
            est.value,
            exact,
            residual,
            tol,
        ));
    }
    Ok(rows)
}

/// Boundary vanishing: candidate scores |⟨f, E_{q_k}⟩| along t = 2^{−k} and
/// |x| = 2^{k} (half-space) and ρ = 1 − 2^{−k} (sphere) fall below 1e-3 by
/// k = 20 for a fixed test signal.
pub fn verify_bvc(_seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let tol = 1e-3;
    let k_max = 20usize;

    for (fam, label) in [
        (KernelFamily::poisson_half_space(1)?, "poisson_d1"),
        (KernelFamily::heat_half_space(2)?, "heat_d2"),
        (KernelFamily::spherical_poisson(3)?, "sphere_d3"),
    ] {
        let d = fam.d;
        let sig = if fam.kind.is_half_space() {
            Signal::combination(vec![
                (0.3, Atom::plain(ParamPoint::half_space(2.0, vec![2.0; d]))),
                (0.4, Atom::plain(ParamPoint::half_space(2.5, vec![-3.0; d]))),
                (0.3, Atom::plain(ParamPoint::half_space(1.5, vec![4.0; d]))),
            ])
        } else {
            let mut e1 = vec![0.0; d];
            e1[0] = 1.0;
            let mut e2 = vec![0.0; d];
            e2[d - 1] = 1.0;
            Signal::combination(vec![
                (0.4, Atom::plain(ParamPoint::ball(0.5, e1))),
                (0.4, Atom::plain(ParamPoint::ball(0.6, e2))),
            ])
        };
        let score = |q: &ParamPoint| -> Result<f64> {
            let a = Atom::plain(q.clone());
            Ok((signal_inner(&fam, &sig, &a)? / atom_norm(&fam, &a)?).abs())
        };
        let sequences: Vec<(&str, Box<dyn Fn(usize) -> ParamPoint>)> = if fam.kind.is_half_space()
        {
            vec![
                (
                    "t_to_0",
                    Box::new(move |k| ParamPoint::half_space(0.5f64.powi(k as i32), vec![0.3; d])),
                ),
                (
                    "x_to_inf",
                    Box::new(move |k| ParamPoint::half_space(1.0, vec![2.0f64.powi(k as i32); d])),
                ),
            ]
        } else {
            vec![(
                "rho_to_1",
                Box::new(move |k| {
                    let mut s = vec![0.0; d];
                    s[0] = 1.0;
                    ParamPoint::ball(1.0 - 0.5f64.powi(k as i32), s)
                }),
            )]
        };
        for (seq_label, seq) in sequences {
            let first = score(&seq(1))?;
            let last = score(&seq(k_max))?;
            rows.push(CheckRow::new(
                "bvc",
                format!("{label}_{seq_label}_k{k_max}"),
                last,
                0.0,
                last,
                tol,
            ));
            rows.push(CheckRow::new(
                "bvc",
                format!("{label}_{seq_label}_decays"),
                last,
                first,
                if last < first { 0.0 } else { 1.0 },
                0.5,
            ));
        }
    }
    Ok(rows)
}

/// Finite difference with step selection: among a sweep of base steps the
/// pair of consecutive estimates that agree best wins.
fn fd_stable(
    f: &dyn Fn(&[f64]) -> f64,
    point: &[f64],
    direction: &[f64],
    order: usize,
) -> Result<f64> {
    let steps = [4e-2, 2e-2, 1e-2, 5e-3];
    let ests: Vec<f64> = steps
        .iter()
        .map(|&h| fd_directional(f, point, direction, order, h))
        .collect::<Result<_>>()?;
    let mut best = ests[1];
    let mut gap = f64::INFINITY;
    for w in ests.windows(2) {
        let g = (w[1] - w[0]).abs();
        if g < gap {
            gap = g;
            best = w[1];
        }
    }
    Ok(best)
}

/// Derivative suite: mixed kernel derivatives against the nested
/// central-difference oracle, all order pairs of total derivative order ≤ 4,
/// 10 random parameter pairs per closed-form family.
pub fn verify_derivatives(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let tol = 1e-6;
    let order_pairs: [(usize, usize); 9] = [
        (1, 1),
        (2, 1),
        (2, 2),
        (3, 1),
        (3, 2),
        (3, 3),
        (4, 1),
        (4, 2),
        (5, 1),
    ];

    for (fam, label) in [
        (KernelFamily::poisson_half_space(1)?, "poisson_d1"),
        (KernelFamily::heat_half_space(1)?, "heat_d1"),
        (KernelFamily::spherical_poisson(3)?, "sphere_d3"),
    ] {
        let dim = fam.param_dim();
        for pair_idx in 0..10 {
            let q = random_param(&mut rng, &fam);
            let p = random_param(&mut rng, &fam);
            let mut mk_dir = || {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0f64)).collect();
                let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                v.iter_mut().for_each(|c| *c /= n.max(1e-9));
                v
            };
            let da = mk_dir();
            let db = mk_dir();
            let scale_floor = kernel_norm(&fam, &q)? * kernel_norm(&fam, &p)?;
            for &(oa, ob) in &order_pairs {
                let a = if oa == 1 {
                    Atom::plain(q.clone())
                } else {
                    Atom::multiple(q.clone(), oa, da.clone())?
                };
                let b = if ob == 1 {
                    Atom::plain(p.clone())
                } else {
                    Atom::multiple(p.clone(), ob, db.clone())?
                };
                let jet = eval_k_derivative(&fam, &a, &b)?;
                // FD in the first parameter slot, analytic jets in the second.
                let fd = if oa == 1 && ob == 1 {
                    eval_k(&fam, &q, &p)?
                } else if oa == 1 {
                    // FD in the second slot instead.
                    let inner = |pe: &[f64]| {
                        let pp = ParamPoint::from_embedding(fam.kind, pe).unwrap();
                        eval_k(&fam, &q, &pp).unwrap_or(f64::NAN)
                    };
                    fd_stable(&inner, &p.embed(), &db, ob - 1)?
                } else {
                    let inner = |qe: &[f64]| {
                        let qp = ParamPoint::from_embedding(fam.kind, qe).unwrap();
                        eval_k_derivative(&fam, &Atom::plain(qp), &b).unwrap_or(f64::NAN)
                    };
                    fd_stable(&inner, &q.embed(), &da, oa - 1)?
                };
                let scale = jet.abs().max(scale_floor);
                let residual = (fd - jet).abs() / scale;
                rows.push(CheckRow::new(
                    "derivatives",
                    format!("{label}_pair{pair_idx}_orders_{oa}_{ob}"),
                    jet,
                    fd,
                    residual,
                    tol,
                ));
            }
        }
    }
    Ok(rows)
}

fn coarse_config(family: &KernelFamily) -> SelectionConfig {
    let mut c = SelectionConfig::default_for(family);
    c.refine = false;
    c.grid_steps = vec![12; family.param_dim()];
    if let crate::engine::SearchBox::HalfSpace {
        ref mut t_min,
        ref mut t_max,
        ref mut x_half_width,
    } = c.search_box
    {
        *t_min = 0.2;
        *t_max = 4.0;
        *x_half_width = 3.0;
    }
    c
}

/// Greediness suite: `maximal_select` must match the exhaustive argmax
/// exactly, 10 random instances per family.
pub fn verify_greedy(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    let convolution = {
        let check = BoxGrid::symmetric(1, 60.0, 2048, QuadRule::Trapezoid)?;
        let profile = ConvolutionProfile::poisson(1, &check)?;
        let quad = BoxGrid::symmetric(1, 30.0, 600, QuadRule::Trapezoid)?;
        KernelFamily::convolution(1, profile, quad)?
    };
    for (fam, label) in [
        (KernelFamily::poisson_half_space(1)?, "poisson_d1"),
        (KernelFamily::heat_half_space(1)?, "heat_d1"),
        (KernelFamily::spherical_poisson(2)?, "sphere_d2"),
        (convolution, "convolution_d1"),
    ] {
        let config = coarse_config(&fam);
        for i in 0..10 {
            let terms: Vec<(f64, Atom)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(-2.0..2.0f64),
                        Atom::plain(random_param(&mut rng, &fam)),
                    )
                })
                .collect();
            let sig = Signal::combination(terms);
            let picked = maximal_select(&fam, &sig, &Decomposition::empty(&fam, 1.0), &config)?;
            let (brute, _) =
                brute_force_argmax(&fam, &sig, &Decomposition::empty(&fam, 1.0), &config)?;
            let agree = picked == brute;
            rows.push(CheckRow::new(
                "greedy",
                format!("{label}_instance{i}"),
                if agree { 1.0 } else { 0.0 },
                1.0,
                if agree { 0.0 } else { 1.0 },
                0.5,
            ));
        }
    }
    Ok(rows)
}

/// Rate suite: for f = Σ c_j E_{q_j} with Σ|c_j| ≤ M and q_j on the search
/// grid, the remainders obey ‖g_n‖ √n ≤ M for n ≤ 50.
pub fn verify_rate(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let n_iter = 50usize;

    for (fam, label) in [
        (KernelFamily::poisson_half_space(1)?, "poisson_d1"),
        (KernelFamily::heat_half_space(1)?, "heat_d1"),
        (KernelFamily::spherical_poisson(2)?, "sphere_d2"),
    ] {
        let config = coarse_config(&fam);
        let grid = enumerate_grid(&fam, &config)?;
        for s in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s));
            let terms: Vec<(f64, Atom)> = (0..20)
                .map(|_| {
                    let p = grid[rng.random_range(0..grid.len())].clone();
                    (rng.random_range(-1.0..1.0f64), Atom::plain(p))
                })
                .collect();
            let m: f64 = terms.iter().map(|(c, _)| c.abs()).sum();
            let sig = Signal::combination(terms);
            let dec = poafd_run(&fam, &sig, n_iter, &config)?;
            let mut worst = 0.0f64;
            for n in 1..=dec.len() {
                let g = dec.remainder_energies[n - 1].max(0.0).sqrt();
                worst = worst.max(g * (n as f64).sqrt());
            }
            rows.push(CheckRow::new(
                "rate",
                format!("{label}_seed{s}"),
                worst,
                m,
                (worst / m).max(0.0),
                1.0 + 1e-9,
            ));
        }
    }
    Ok(rows)
}

pub fn run_verify(scopes: &[VerifyScope], seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for scope in scopes {
        rows.extend(match scope {
            VerifyScope::Semigroup => verify_semigroup(seed)?,
            VerifyScope::Bvc => verify_bvc(seed)?,
            VerifyScope::Derivatives => verify_derivatives(seed)?,
            VerifyScope::Greedy => verify_greedy(seed)?,
            VerifyScope::Rate => verify_rate(seed)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::FamilyKind;

    #[test]
    fn config_round_trip_and_validation() {
        let text = r#"{
            "schema_version": 1,
            "family": { "kind": "heat", "d": 1 },
            "signal": { "terms": [
                { "coefficient": 1.0, "param": { "HalfSpace": { "t": 1.0, "x": [0.5] } } }
            ]},
            "iterations": 2,
            "output": "/tmp/poafd-test-out"
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.emit, default_emit());
        let fam = config.family.build().unwrap();
        assert_eq!(fam.kind, FamilyKind::HeatHalfSpace);
        let sig = config.signal.build(&fam, Path::new(".")).unwrap();
        sig.validate(&fam).unwrap();
    }

    #[test]
    fn bad_schema_version_rejected() {
        let text = r#"{
            "schema_version": 99,
            "family": { "kind": "heat", "d": 1 },
            "signal": { "terms": [] },
            "iterations": 1,
            "output": "out"
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sample_parsing() {
        let text = "x,value,weight\n0.0,1.5,0.1\n# comment\n1.0,2.5,0.1\n";
        let sig = parse_samples(text, 1).unwrap();
        match sig {
            Signal::SampledBoundary { points, values, .. } => {
                assert_eq!(points, vec![vec![0.0], vec![1.0]]);
                assert_eq!(values, vec![1.5, 2.5]);
            }
            _ => panic!("expected sampled signal"),
        }
        assert!(parse_samples("0.0,1.0\n", 1).is_err());
    }

    #[test]
    fn experiment_presets_are_well_formed() {
        for name in ["example1", "example2"] {
            let exp = experiment_by_name(name).unwrap();
            exp.signal.validate(&exp.family).unwrap();
            assert!(exp.iterations >= 7);
            assert!(!exp.published.is_empty());
            let pts = exp.curve.points(exp.family.boundary_dim()).unwrap();
            assert_eq!(pts.len(), CURVE_POINTS);
        }
        assert!(experiment_by_name("example3").is_err());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn checks_csv_has_header_and_comment() {
        let rows = vec![CheckRow::new("suite", "x".into(), 1.0, 1.0, 0.0, 1e-6)];
        let text = checks_csv(&rows, 7);
        assert!(text.starts_with("# config_hash=0000000000000007"));
        assert!(text.contains("suite,check,value,reference,residual,tolerance,pass"));
        assert!(text.trim_end().ends_with("true"));
    }
}
