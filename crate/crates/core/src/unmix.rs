//! Abundance estimation.
//!
//! * [`fcls`]: simplex-constrained least squares.
//! * [`solve_abundances`]: least squares plus the smoothed sparsity penalty
//!   `λ_p Σⱼ (xⱼ + ε_p)^p` on the simplex.
//! * [`analysis_by_synthesis`]: alternates the abundance solve with Adam
//!   updates of every endmember's dispersion parameters inside its box,
//!   minimising `‖b − A(Λ)x‖² + λ_p Σⱼ (xⱼ + ε_p)^p`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::{
    adam_step, minimize_projected_gradient, AdamConfig, AdamState, Bounds, EarlyStop,
    GradientConfig, OntoSimplex, SimplexVector,
};
use crate::spectral::{
    render_into, render_with_gradient, DispersionParams, ParamBox, ParamKind, Spectrum,
    WavenumberGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endmember {
    pub name: String,
    pub params: DispersionParams,
    pub bounds: ParamBox,
}

/// Named endmembers sharing one wavenumber grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberLibrary {
    grid: WavenumberGrid,
    entries: Vec<Endmember>,
}

impl EndmemberLibrary {
    pub fn new(grid: WavenumberGrid, entries: Vec<Endmember>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("endmember library is empty".into()));
        }
        let mut names = HashSet::new();
        for e in &entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate endmember name `{}`",
                    e.name
                )));
            }
            if e.bounds.layout() != &e.params.layout() {
                return Err(Error::InvalidBox(format!(
                    "box of `{}` does not match its parameters",
                    e.name
                )));
            }
            if !e.bounds.contains(&e.params) {
                return Err(Error::InvalidBox(format!(
                    "parameters of `{}` lie outside their box",
                    e.name
                )));
            }
        }
        Ok(Self { grid, entries })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn entries(&self) -> &[Endmember] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn params(&self) -> Vec<DispersionParams> {
        self.entries.iter().map(|e| e.params.clone()).collect()
    }
}

/// An observed spectrum `b` to unmix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSpectrum {
    grid: WavenumberGrid,
    values: Vec<f64>,
}

impl MixedSpectrum {
    pub fn new(grid: WavenumberGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum(
                "mixed spectrum has non-finite samples".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl From<Spectrum> for MixedSpectrum {
    fn from(s: Spectrum) -> Self {
        let grid = s.grid().clone();
        Self {
            grid,
            values: s.into_values(),
        }
    }
}

/// Inner solver settings for the abundance step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XSolverConfig {
    pub steps: usize,
    pub early_stop: Option<EarlyStop>,
}

impl Default for XSolverConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            early_stop: Some(EarlyStop::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixConfig {
    pub p: f64,
    pub lambda_p: f64,
    pub outer_iters: usize,
    pub x_solver: XSolverConfig,
    /// Λ-step optimizer. `steps` Adam updates are taken per outer iteration,
    /// in box-normalised coordinates (a unit step spans the whole box).
    pub lambda_step: AdamConfig,
    pub p_epsilon: f64,
}

impl Default for UnmixConfig {
    fn default() -> Self {
        Self {
            p: 0.95,
            lambda_p: 1e-4,
            outer_iters: 100,
            x_solver: XSolverConfig::default(),
            lambda_step: AdamConfig {
                learning_rate: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                weight_decay: 0.0,
                steps: 5,
                early_stop: None,
            },
            p_epsilon: 1e-8,
        }
    }
}

impl UnmixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p = {} must lie in (0, 1]",
                self.p
            )));
        }
        if !(self.lambda_p >= 0.0) {
            return Err(Error::InvalidConfig("lambda_p must be non-negative".into()));
        }
        if self.outer_iters == 0 || self.x_solver.steps == 0 {
            return Err(Error::InvalidConfig("iteration counts must be >= 1".into()));
        }
        if !(self.p_epsilon > 0.0) {
            return Err(Error::InvalidConfig("p_epsilon must be positive".into()));
        }
        self.lambda_step.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixResult {
    pub abundances: SimplexVector,
    pub refined: Vec<DispersionParams>,
    pub residual_rms: f64,
    /// Total objective per outer iteration (a single entry for the
    /// one-shot solvers).
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fcls,
    Lp,
    Abs,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcls" => Ok(Method::Fcls),
            "lp" => Ok(Method::Lp),
            "abs" => Ok(Method::Abs),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (fcls|lp|abs)"
            ))),
        }
    }
}

/// Endmember matrix: column `j` is the rendered spectrum of entry `j`.
pub fn build_a(library: &EndmemberLibrary) -> DMatrix<f64> {
    build_a_from(&library.params(), library.grid())
}

pub fn build_a_from(params: &[DispersionParams], grid: &WavenumberGrid) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(grid.len(), params.len());
    let mut column = vec![0.0; grid.len()];
    for (j, p) in params.iter().enumerate() {
        render_into(p, grid, &mut column);
        a.column_mut(j).copy_from_slice(&column);
    }
    a
}

/// Smoothed L_p sparsity term and its gradient.
fn lp_penalty(x: &[f64], p: f64, eps: f64) -> f64 {
    x.iter().map(|v| (v.max(0.0) + eps).powf(p)).sum()
}

/// Quadratic pieces `AᵀA`, `Aᵀb`, `bᵀb` of the least-squares term.
struct Normal {
    gram: DMatrix<f64>,
    atb: DVector<f64>,
    btb: f64,
}

impl Normal {
    fn new(a: &DMatrix<f64>, b: &[f64]) -> Self {
        let bv = DVector::from_column_slice(b);
        Self {
            gram: a.transpose() * a,
            atb: a.transpose() * &bv,
            btb: bv.dot(&bv),
        }
    }

    /// Largest eigenvalue of the Gram matrix.
    fn lambda_max(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.gram.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// `argmin_{x ∈ simplex} ‖b − Ax‖² + λ_p Σⱼ (xⱼ + ε_p)^p`, starting from the
/// uniform vector. `λ_p = 0` gives fully constrained least squares.
pub fn solve_abundances(
    a: &DMatrix<f64>,
    b: &MixedSpectrum,
    p: f64,
    lambda_p: f64,
    p_epsilon: f64,
    solver: &XSolverConfig,
) -> Result<SimplexVector> {
    solve_abundances_raw(a, b.values(), p, lambda_p, p_epsilon, solver)
}

fn solve_abundances_raw(
    a: &DMatrix<f64>,
    b: &[f64],
    p: f64,
    lambda_p: f64,
    p_epsilon: f64,
    solver: &XSolverConfig,
) -> Result<SimplexVector> {
    if a.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "A has {} rows but b has {} samples",
            a.nrows(),
            b.len()
        )));
    }
    let e = a.ncols();
    if e == 0 {
        return Err(Error::ShapeMismatch("A has no columns".into()));
    }
    if e == 1 {
        return Ok(SimplexVector::vertex(1, 0));
    }
    let normal = Normal::new(a, b);
    let lipschitz = 2.0 * normal.lambda_max();
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::NonFinite {
            what: "Lipschitz constant",
            iteration: 0,
        });
    }
    let objective = |x: &[f64]| {
        let xv = DVector::from_column_slice(x);
        let gx = &normal.gram * &xv;
        let mut loss = xv.dot(&gx) - 2.0 * xv.dot(&normal.atb) + normal.btb;
        let mut grad: Vec<f64> = (0..e).map(|j| 2.0 * (gx[j] - normal.atb[j])).collect();
        if lambda_p > 0.0 {
            loss += lambda_p * lp_penalty(x, p, p_epsilon);
            for (g, v) in grad.iter_mut().zip(x) {
                *g += lambda_p * p * (v.max(0.0) + p_epsilon).powf(p - 1.0);
            }
        }
        (loss, grad)
    };
    let config = GradientConfig {
        step: 1.0 / lipschitz,
        steps: solver.steps,
        accelerated: true,
        early_stop: solver.early_stop,
    };
    let min =
        minimize_projected_gradient(objective, &vec![1.0 / e as f64; e], &OntoSimplex, &config)?;
    // Projection output sums to one up to rounding; renormalise for the
    // strict invariant.
    let mut x = min.argmin;
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= sum);
    SimplexVector::new(x)
}

/// Fully constrained least squares: sum-to-one and non-negativity.
pub fn fcls(a: &DMatrix<f64>, b: &MixedSpectrum) -> Result<SimplexVector> {
    solve_abundances(a, b, 1.0, 0.0, 1e-8, &XSolverConfig::default())
}

fn residual_sq(a: &DMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let model = a * DVector::from_column_slice(x);
    model.iter().zip(b).map(|(m, v)| (m - v).powi(2)).sum()
}

fn rms(sq: f64, n: usize) -> f64 {
    (sq / n as f64).sqrt()
}

fn check_grid(library: &EndmemberLibrary, b: &MixedSpectrum) -> Result<()> {
    if library.grid() != b.grid() {
        return Err(Error::ShapeMismatch(
            "mixed spectrum and library use different grids".into(),
        ));
    }
    Ok(())
}

/// Box-normalised view of all endmember parameters: `p = lower + width·u`
/// with `u ∈ [0, 1]`; pinned slots (zero width, and all axis weights) are
/// held fixed.
struct Normalised {
    offsets: Vec<usize>,
    lower: Vec<f64>,
    width: Vec<f64>,
    free: Vec<bool>,
}

impl Normalised {
    fn new(library: &EndmemberLibrary) -> Self {
        let mut offsets = vec![0];
        let (mut lower, mut width, mut free) = (Vec::new(), Vec::new(), Vec::new());
        for e in library.entries() {
            let kinds = e.bounds.layout().kinds();
            for (i, kind) in kinds.iter().enumerate() {
                let (lo, hi) = (e.bounds.lower()[i], e.bounds.upper()[i]);
                lower.push(lo);
                width.push(hi - lo);
                free.push(hi > lo && !matches!(kind, ParamKind::Alpha { .. }));
            }
            offsets.push(lower.len());
        }
        Self {
            offsets,
            lower,
            width,
            free,
        }
    }

    fn to_u(&self, params: &[DispersionParams]) -> Vec<f64> {
        params
            .iter()
            .flat_map(|p| p.to_flat())
            .enumerate()
            .map(|(i, v)| {
                if self.free[i] {
                    (v - self.lower[i]) / self.width[i]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn to_params(&self, u: &[f64], template: &[DispersionParams]) -> Vec<DispersionParams> {
        template
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let range = self.offsets[j]..self.offsets[j + 1];
                let mut flat = t.to_flat();
                for (k, i) in range.enumerate() {
                    if self.free[i] {
                        flat[k] = (self.lower[i] + self.width[i] * u[i])
                            .clamp(self.lower[i], self.lower[i] + self.width[i]);
                    }
                }
                DispersionParams::from_flat(&t.layout(), &flat)
                    .expect("box-clamped parameters are valid")
            })
            .collect()
    }

    fn unit_box(&self) -> Bounds {
        Bounds {
            lower: vec![0.0; self.lower.len()],
            upper: self
                .free
                .iter()
                .map(|f| if *f { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Alternating minimisation over abundances and endmember parameters.
///
/// Starts from the library parameters and the uniform abundance vector.
/// Each outer iteration solves for `x` with `A(Λ)` fixed, then takes
/// `config.lambda_step.steps` projected Adam steps on every endmember's
/// parameters with `x` fixed. One Adam state persists across the whole
/// alternation. Returns the best iterate by total objective.
pub fn analysis_by_synthesis(
    library: &EndmemberLibrary,
    b: &MixedSpectrum,
    config: &UnmixConfig,
) -> Result<UnmixResult> {
    config.validate()?;
    check_grid(library, b)?;
    let grid = library.grid();
    let bv = b.values();
    let n = grid.len();
    let template = library.params();
    let norm = Normalised::new(library);
    let unit = norm.unit_box();
    let mut adam = AdamState::new(config.lambda_step, norm.to_u(&template));
    let mut params = template.clone();

    let mut trace = Vec::with_capacity(config.outer_iters + 1);
    let mut best: Option<(f64, SimplexVector, Vec<DispersionParams>, f64)> = None;

    for outer in 0..=config.outer_iters {
        let a = build_a_from(&params, grid);
        let x = solve_abundances_raw(
            &a,
            bv,
            config.p,
            config.lambda_p,
            config.p_epsilon,
            &config.x_solver,
        )
        .map_err(|e| at_iteration(e, outer))?;
        let sq = residual_sq(&a, x.values(), bv);
        let objective = sq + config.lambda_p * lp_penalty(x.values(), config.p, config.p_epsilon);
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                iteration: outer,
            });
        }
        trace.push(objective);
        if best.as_ref().is_none_or(|bst| objective < bst.0) {
            best = Some((objective, x.clone(), params.clone(), rms(sq, n)));
        }
        if outer == config.outer_iters {
            break;
        }

        for _ in 0..config.lambda_step.steps {
            let grad = lambda_gradient(&params, &norm, x.values(), bv, grid);
            adam_step(&mut adam, &grad, &unit).map_err(|e| at_iteration(e, outer))?;
            params = norm.to_params(&adam.params, &template);
        }
    }

    let (_, abundances, refined, residual_rms) = best.expect("at least one outer iteration");
    Ok(UnmixResult {
        abundances,
        refined,
        residual_rms,
        loss_trace: trace,
    })
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, iteration },
        other => other,
    }
}

/// Gradient of `‖A(Λ)x − b‖²` in normalised coordinates.
fn lambda_gradient(
    params: &[DispersionParams],
    norm: &Normalised,
    x: &[f64],
    b: &[f64],
    grid: &WavenumberGrid,
) -> Vec<f64> {
    let rendered: Vec<_> = params
        .iter()
        .map(|p| render_with_gradient(p, grid))
        .collect();
    let mut residual = vec![0.0; b.len()];
    for ((spectrum, _), &xj) in rendered.iter().zip(x) {
        for (r, v) in residual.iter_mut().zip(spectrum.values()) {
            *r += xj * v;
        }
    }
    for (r, v) in residual.iter_mut().zip(b) {
        *r -= v;
    }
    let mut grad = vec![0.0; norm.lower.len()];
    for (j, ((_, jac), &xj)) in rendered.iter().zip(x).enumerate() {
        let off = norm.offsets[j];
        for col in 0..jac.matrix.ncols() {
            let i = off + col;
            if !norm.free[i] {
                continue;
            }
            let d: f64 = jac
                .matrix
                .column(col)
                .iter()
                .zip(&residual)
                .map(|(a, r)| a * r)
                .sum();
            grad[i] = 2.0 * xj * d * norm.width[i];
        }
    }
    grad
}

/// One-shot unmixing by method; the one-shot solvers report the library
/// parameters unchanged.
pub fn unmix(
    library: &EndmemberLibrary,
    b: &MixedSpectrum,
    method: Method,
    config: &UnmixConfig,
) -> Result<UnmixResult> {
    config.validate()?;
    check_grid(library, b)?;
    if method == Method::Abs {
        return analysis_by_synthesis(library, b, config);
    }
    let a = build_a(library);
    let lambda = if method == Method::Fcls {
        0.0
    } else {
        config.lambda_p
    };
    let x = solve_abundances(&a, b, config.p, lambda, config.p_epsilon, &config.x_solver)?;
    let sq = residual_sq(&a, x.values(), b.values());
    let objective = sq + lambda * lp_penalty(x.values(), config.p, config.p_epsilon);
    Ok(UnmixResult {
        residual_rms: rms(sq, b.values().len()),
        abundances: x,
        refined: library.params(),
        loss_trace: vec![objective],
    })
}

/// Unmixes independent pixels; each pixel works on its own copy of the
/// library parameters.
pub fn unmix_batch(
    library: &EndmemberLibrary,
    pixels: &[MixedSpectrum],
    method: Method,
    config: &UnmixConfig,
    execution: Execution,
) -> Vec<Result<UnmixResult>> {
    execution.map_slice(pixels, |b| unmix(library, b, method, config))
}
