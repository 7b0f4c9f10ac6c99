//! Endmember fitting: sparse box-constrained regression of dispersion
//! parameters onto a measured emissivity spectrum.
//!
//! The objective is `Σᵢ (ε_measured(ωᵢ) − ε_model(Λ; ωᵢ))² + λ_ρ‖ρ‖₁` over a
//! wide validity box. Each restart starts from a random bank of `k_init`
//! oscillators, descends with projected Adam, prunes bands whose strength
//! fell below `prune_threshold`, then refits the survivors with `λ_ρ = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::optim::{minimize_projected, project_simplex_in_place, AdamConfig, Projection};
use crate::spectral::{
    render_into, render_with_gradient, AxisParams, Band, DispersionParams, ParamBox, ParamKind,
    ParamLayout, Spectrum, WavenumberGrid, GAMMA_FLOOR, OMEGA0_FLOOR,
};

/// Generation rule for the wide box explored during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    /// ω₀ may leave the grid range by this fraction of the grid span.
    pub omega0_margin: f64,
    pub gamma: (f64, f64),
    pub rho_max: f64,
    pub eps_r_max: f64,
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            omega0_margin: 0.1,
            gamma: (1e-3, 1.0),
            rho_max: 2.0,
            eps_r_max: 20.0,
        }
    }
}

/// Per-family step scale for the optimizer: Adam moves each coordinate by
/// roughly `learning_rate × scale` per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScales {
    /// Fraction of the grid span.
    pub omega0: f64,
    pub gamma: f64,
    pub rho: f64,
    pub eps_r: f64,
    pub alpha: f64,
}

impl Default for StepScales {
    fn default() -> Self {
        Self {
            omega0: 0.02,
            gamma: 0.1,
            rho: 0.1,
            eps_r: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k_init: usize,
    pub lambda_rho: f64,
    pub prune_threshold: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Number of optical axes (1 or 2).
    pub axes: usize,
    pub bounds: FitBounds,
    pub scales: StepScales,
    /// Sparse-regression stage.
    pub optimizer: AdamConfig,
    /// Unpenalised refit of the surviving bands.
    pub refit: AdamConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_init: 50,
            lambda_rho: 0.01,
            prune_threshold: 1e-3,
            restarts: 4,
            seed: 7,
            axes: 1,
            bounds: FitBounds::default(),
            scales: StepScales::default(),
            optimizer: AdamConfig {
                learning_rate: 0.01,
                steps: 3000,
                ..AdamConfig::default()
            },
            refit: AdamConfig {
                learning_rate: 0.005,
                steps: 1500,
                ..AdamConfig::default()
            },
            execution: Execution::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_init == 0 {
            return Err(Error::InvalidConfig("k_init must be >= 1".into()));
        }
        if !(self.lambda_rho >= 0.0) || !(self.prune_threshold >= 0.0) {
            return Err(Error::InvalidConfig(
                "lambda_rho and prune_threshold must be non-negative".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if !(1..=2).contains(&self.axes) {
            return Err(Error::InvalidConfig(format!(
                "axes must be 1 or 2, got {}",
                self.axes
            )));
        }
        self.optimizer.validate()?;
        self.refit.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DispersionParams,
    /// Mean squared error of the rendered fit against the target.
    pub mse: f64,
    pub k_final: usize,
    pub axis_count: usize,
    /// Box the fit was constrained to.
    pub bounds: ParamBox,
    /// Objective per iteration: sparse stage followed by the refit.
    pub loss_trace: Vec<f64>,
    /// mse of the sparse-stage fit before pruning.
    pub sparse_mse: f64,
    /// Total ρ of the bands removed by pruning.
    pub pruned_rho: f64,
}

/// Appendix-style relative tolerances for unmixing-time refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rho: f64,
    pub gamma: f64,
    pub eps_r: f64,
    pub omega0: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rho: 0.05,
            gamma: 0.005,
            eps_r: 0.001,
            omega0: 0.0001,
        }
    }
}

/// `fitted ∓ tol·|fitted|` per parameter family, intersected with the
/// validity region. Axis weights are pinned.
pub fn make_tolerance_box(fitted: &DispersionParams, tol: &Tolerances) -> ParamBox {
    let layout = fitted.layout();
    let flat = fitted.to_flat();
    let mut lower = flat.clone();
    let mut upper = flat.clone();
    for (i, kind) in layout.kinds().into_iter().enumerate() {
        let v = flat[i];
        let (t, floor) = match kind {
            ParamKind::Rho { .. } => (tol.rho, 0.0),
            ParamKind::Gamma { .. } => (tol.gamma, GAMMA_FLOOR),
            ParamKind::EpsR { .. } => (tol.eps_r, 1.0),
            ParamKind::Omega0 { .. } => (tol.omega0, OMEGA0_FLOOR),
            ParamKind::Alpha { .. } => continue,
        };
        lower[i] = (v - t * v.abs()).max(floor);
        upper[i] = (v + t * v.abs()).max(lower[i]);
    }
    ParamBox::new(layout, lower, upper).expect("tolerance box around valid params is valid")
}

fn wide_box(layout: &ParamLayout, grid: &WavenumberGrid, b: &FitBounds) -> ParamBox {
    let span = grid.last() - grid.first();
    let w_lo = (grid.first() - b.omega0_margin * span).max(OMEGA0_FLOOR);
    let w_hi = grid.last() + b.omega0_margin * span;
    let (lower, upper) = layout
        .kinds()
        .into_iter()
        .map(|kind| match kind {
            ParamKind::Rho { .. } => (0.0, b.rho_max),
            ParamKind::Omega0 { .. } => (w_lo, w_hi),
            ParamKind::Gamma { .. } => (b.gamma.0.max(GAMMA_FLOOR), b.gamma.1),
            ParamKind::EpsR { .. } => (1.0, b.eps_r_max),
            ParamKind::Alpha { .. } => (0.0, 1.0),
        })
        .unzip();
    ParamBox::new(layout.clone(), lower, upper).expect("fit bounds are valid")
}

fn scale_vector(layout: &ParamLayout, grid: &WavenumberGrid, s: &StepScales) -> Vec<f64> {
    let span = grid.last() - grid.first();
    layout
        .kinds()
        .into_iter()
        .map(|kind| match kind {
            ParamKind::Rho { .. } => s.rho,
            ParamKind::Omega0 { .. } => s.omega0 * span,
            ParamKind::Gamma { .. } => s.gamma,
            ParamKind::EpsR { .. } => s.eps_r,
            ParamKind::Alpha { .. } => s.alpha,
        })
        .collect()
}

/// Random initial bank: ω₀ uniform over the grid, γ ∈ [0.01, 0.2],
/// ρ ∈ [0, 0.1], ε_r ∈ [1, 3].
fn random_init(
    grid: &WavenumberGrid,
    k: usize,
    axes: usize,
    rng: &mut ChaCha8Rng,
) -> DispersionParams {
    let axes = (0..axes)
        .map(|_| {
            let bands = (0..k)
                .map(|_| {
                    Band::new(
                        rng.random_range(grid.first()..=grid.last()),
                        rng.random_range(0.01..=0.2),
                        rng.random_range(0.0..=0.1),
                    )
                })
                .collect();
            AxisParams::from_bands(rng.random_range(1.0..=3.0), bands).expect("init is valid")
        })
        .collect();
    DispersionParams::uniform(axes).expect("init is valid")
}

/// Box projection plus simplex projection of the axis weights, applied in
/// scaled coordinates `u = p / scale`.
struct ScaledProjection<'a> {
    bounds: &'a ParamBox,
    scale: &'a [f64],
    alpha_offset: usize,
}

impl Projection for ScaledProjection<'_> {
    fn project(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            let s = self.scale[i];
            *v = (*v * s).clamp(self.bounds.lower()[i], self.bounds.upper()[i]) / s;
        }
        let alpha = &mut u[self.alpha_offset..];
        let s = self.scale[self.alpha_offset];
        alpha.iter_mut().for_each(|a| *a *= s);
        project_simplex_in_place(alpha);
        alpha.iter_mut().for_each(|a| *a /= s);
    }
}

struct Stage<'a> {
    target: &'a [f64],
    grid: &'a WavenumberGrid,
    layout: &'a ParamLayout,
    bounds: &'a ParamBox,
    scale: &'a [f64],
    rho_mask: &'a [bool],
}

impl Stage<'_> {
    /// Minimises the penalised squared error from `init`; returns the best
    /// parameters and the loss trace.
    fn run(
        &self,
        init: &DispersionParams,
        lambda: f64,
        config: &AdamConfig,
    ) -> Result<(DispersionParams, Vec<f64>)> {
        let u0: Vec<f64> = init
            .to_flat()
            .iter()
            .zip(self.scale)
            .map(|(p, s)| p / s)
            .collect();
        let projection = ScaledProjection {
            bounds: self.bounds,
            scale: self.scale,
            alpha_offset: self.layout.alpha_offset(),
        };
        let objective = |u: &[f64]| {
            let p: Vec<f64> = u.iter().zip(self.scale).map(|(v, s)| v * s).collect();
            match DispersionParams::from_flat(self.layout, &p) {
                Ok(params) => penalised_loss(
                    &params,
                    self.target,
                    self.grid,
                    lambda,
                    self.rho_mask,
                    self.scale,
                ),
                Err(_) => (f64::NAN, vec![0.0; u.len()]),
            }
        };
        let min = minimize_projected(objective, &u0, &projection, config)?;
        let p: Vec<f64> = min
            .argmin
            .iter()
            .zip(self.scale)
            .map(|(v, s)| v * s)
            .collect();
        Ok((DispersionParams::from_flat(self.layout, &p)?, min.trace))
    }
}

/// Loss and gradient in scaled coordinates.
fn penalised_loss(
    params: &DispersionParams,
    target: &[f64],
    grid: &WavenumberGrid,
    lambda: f64,
    rho_mask: &[bool],
    scale: &[f64],
) -> (f64, Vec<f64>) {
    let (model, jac) = render_with_gradient(params, grid);
    let flat = params.to_flat();
    let residual: Vec<f64> = model
        .values()
        .iter()
        .zip(target)
        .map(|(m, t)| m - t)
        .collect();
    let mut loss: f64 = residual.iter().map(|r| r * r).sum();
    let mut grad = vec![0.0; flat.len()];
    for (j, g) in grad.iter_mut().enumerate() {
        let col = jac.matrix.column(j);
        let mut acc = 2.0 * col.iter().zip(&residual).map(|(d, r)| d * r).sum::<f64>();
        if rho_mask[j] {
            acc += lambda;
        }
        *g = acc * scale[j];
    }
    loss += lambda
        * flat
            .iter()
            .zip(rho_mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| v.abs())
            .sum::<f64>();
    (loss, grad)
}

fn prune(params: &DispersionParams, threshold: f64) -> DispersionParams {
    let axes = params
        .axes()
        .iter()
        .map(|a| {
            let kept = a
                .bands()
                .iter()
                .copied()
                .filter(|b| b.rho >= threshold)
                .collect();
            AxisParams::from_bands(a.eps_r(), kept).expect("subset of valid bands")
        })
        .collect();
    DispersionParams::new(axes, params.alpha().to_vec()).expect("weights unchanged")
}

fn mse(params: &DispersionParams, target: &[f64], grid: &WavenumberGrid) -> f64 {
    let mut model = vec![0.0; grid.len()];
    render_into(params, grid, &mut model);
    model
        .iter()
        .zip(target)
        .map(|(m, t)| (m - t).powi(2))
        .sum::<f64>()
        / target.len() as f64
}

fn total_rho(params: &DispersionParams) -> f64 {
    params
        .axes()
        .iter()
        .flat_map(|a| a.bands())
        .map(|b| b.rho)
        .sum()
}

struct Restart {
    params: DispersionParams,
    mse: f64,
    sparse_mse: f64,
    pruned_rho: f64,
    bounds: ParamBox,
    trace: Vec<f64>,
}

fn fit_once(target: &Spectrum, config: &FitConfig, seed: u64) -> Result<Restart> {
    let grid = target.grid();
    let values = target.values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_init(grid, config.k_init, config.axes, &mut rng);

    let layout = init.layout();
    let bounds = wide_box(&layout, grid, &config.bounds);
    let scale = scale_vector(&layout, grid, &config.scales);
    let rho_mask: Vec<bool> = layout
        .kinds()
        .iter()
        .map(|k| matches!(k, ParamKind::Rho { .. }))
        .collect();
    let stage = Stage {
        target: values,
        grid,
        layout: &layout,
        bounds: &bounds,
        scale: &scale,
        rho_mask: &rho_mask,
    };
    let (sparse, mut trace) = stage.run(&init, config.lambda_rho, &config.optimizer)?;

    let sparse_mse = mse(&sparse, values, grid);
    let pruned = prune(&sparse, config.prune_threshold);
    let pruned_rho = total_rho(&sparse) - total_rho(&pruned);
    let layout = pruned.layout();
    let bounds = wide_box(&layout, grid, &config.bounds);
    let scale = scale_vector(&layout, grid, &config.scales);
    let rho_mask: Vec<bool> = layout
        .kinds()
        .iter()
        .map(|k| matches!(k, ParamKind::Rho { .. }))
        .collect();
    let stage = Stage {
        target: values,
        grid,
        layout: &layout,
        bounds: &bounds,
        scale: &scale,
        rho_mask: &rho_mask,
    };
    let (params, refit_trace) = stage.run(&pruned, 0.0, &config.refit)?;
    trace.extend(refit_trace);
    // Bands the refit drove to ρ = 0 contribute nothing; dropping them is exact.
    let params = prune(&params, f64::MIN_POSITIVE);
    let bounds = wide_box(&params.layout(), grid, &config.bounds);
    let mse = mse(&params, values, grid);
    Ok(Restart {
        params,
        mse,
        sparse_mse,
        pruned_rho,
        bounds,
        trace,
    })
}

pub fn fit_endmember(target: &Spectrum, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if target.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpectrum(
            "target has non-finite samples".into(),
        ));
    }
    let runs = config.execution.map_indexed(config.restarts, |r| {
        fit_once(target, config, derive_seed(config.seed, r as u64))
    });
    // Lowest mse wins; earliest restart breaks ties.
    let best = runs
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|r| r.mse.is_finite())
        .reduce(|best, r| if r.mse < best.mse { r } else { best })
        .ok_or(Error::FitFailed {
            restarts: config.restarts,
        })?;
    Ok(FitResult {
        k_final: best.params.band_count(),
        axis_count: best.params.axes().len(),
        params: best.params,
        mse: best.mse,
        bounds: best.bounds,
        loss_trace: best.trace,
        sparse_mse: best.sparse_mse,
        pruned_rho: best.pruned_rho,
    })
}

/// Absolute mse margin by which a two-axis fit must beat the single-axis fit.
pub const AXIS_TIE_TOLERANCE: f64 = 1e-9;

/// Fits with one and with two axes and keeps the lower-error model; near
/// ties go to the single axis.
pub fn select_axis_count(target: &Spectrum, config: &FitConfig) -> Result<FitResult> {
    let one = fit_endmember(
        target,
        &FitConfig {
            axes: 1,
            ..config.clone()
        },
    );
    let two = fit_endmember(
        target,
        &FitConfig {
            axes: 2,
            ..config.clone()
        },
    );
    match (one, two) {
        (Ok(a), Ok(b)) => Ok(if b.mse < a.mse - AXIS_TIE_TOLERANCE {
            b
        } else {
            a
        }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}
