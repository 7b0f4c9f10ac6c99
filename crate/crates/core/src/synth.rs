//! Synthetic data: parameter perturbation, linear mixing, blackbody-shaped
//! noise and k-means exemplar extraction.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::optim::SimplexVector;
use crate::spectral::{
    render, AxisParams, Band, DispersionParams, ParamBox, ParamKind, Spectrum, WavenumberGrid,
    GAMMA_FLOOR, OMEGA0_FLOOR,
};
use crate::unmix::{EndmemberLibrary, MixedSpectrum};

/// Second radiation constant `c₂ = hc/k` in cm·K.
pub const C2: f64 = 1.4387768775;

/// Ranges for random parameter perturbation. Shifts are additive (cm⁻¹),
/// scales multiplicative; each draw is uniform on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub omega0_shift: (f64, f64),
    pub gamma_scale: (f64, f64),
    pub rho_scale: (f64, f64),
    pub eps_scale: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

impl Default for PerturbSpec {
    /// The identity perturbation.
    fn default() -> Self {
        Self {
            omega0_shift: (0.0, 0.0),
            gamma_scale: (1.0, 1.0),
            rho_scale: (1.0, 1.0),
            eps_scale: (1.0, 1.0),
            seed: 0,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("omega0_shift", self.omega0_shift),
            ("gamma_scale", self.gamma_scale),
            ("rho_scale", self.rho_scale),
            ("eps_scale", self.eps_scale),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range [{lo}, {hi}] is not ordered"
                )));
            }
            if name != "omega0_shift" && lo <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * u
    }
}

/// Perturbs every band (and each axis' ε_r) using `spec.seed`. Results are
/// clamped to the validity region; axis weights are untouched.
pub fn perturb_params(params: &DispersionParams, spec: &PerturbSpec) -> Result<DispersionParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(perturb_with(params, spec, &mut rng))
}

fn perturb_with(
    params: &DispersionParams,
    spec: &PerturbSpec,
    rng: &mut ChaCha8Rng,
) -> DispersionParams {
    let axes = params
        .axes()
        .iter()
        .map(|axis| {
            let bands = axis
                .bands()
                .iter()
                .map(|b| {
                    let omega0 = (b.omega0 + draw(rng, spec.omega0_shift)).max(OMEGA0_FLOOR);
                    let gamma = (b.gamma * draw(rng, spec.gamma_scale)).max(GAMMA_FLOOR);
                    let rho = b.rho * draw(rng, spec.rho_scale);
                    Band::new(omega0, gamma, rho)
                })
                .collect();
            let eps_r = (axis.eps_r() * draw(rng, spec.eps_scale)).max(1.0);
            AxisParams::from_bands(eps_r, bands).expect("clamped to validity")
        })
        .collect();
    DispersionParams::new(axes, params.alpha().to_vec()).expect("axis weights unchanged")
}

/// Uniform draw inside a parameter box. Axis weights are taken from the
/// box's lower corner (tolerance boxes pin them).
pub fn sample_in_box(bounds: &ParamBox, rng: &mut ChaCha8Rng) -> DispersionParams {
    let kinds = bounds.layout().kinds();
    let flat: Vec<f64> = kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
            let u: f64 = rng.random();
            match kind {
                ParamKind::Alpha { .. } => lo,
                _ if lo == hi => lo,
                _ => (lo + (hi - lo) * u).clamp(lo, hi),
            }
        })
        .collect();
    let mut params = DispersionParams::from_flat(bounds.layout(), &flat);
    if params.is_err() {
        // Lower corner of the weights may not sum to one; fall back to the
        // upper corner's weights renormalised.
        let mut flat = flat;
        let off = bounds.layout().alpha_offset();
        let sum: f64 = bounds.upper()[off..].iter().sum();
        for (i, v) in flat[off..].iter_mut().enumerate() {
            *v = bounds.upper()[off + i] / sum;
        }
        params = DispersionParams::from_flat(bounds.layout(), &flat);
    }
    params.expect("box sample is valid")
}

/// Uniform draw on the simplex (symmetric Dirichlet, concentration 1). With
/// `active = Some(r)`, all but `r` randomly chosen entries are zero.
pub fn sample_abundances(
    count: usize,
    active: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<SimplexVector> {
    if count == 0 {
        return Err(Error::InvalidConfig(
            "cannot sample an empty abundance vector".into(),
        ));
    }
    let r = active.unwrap_or(count);
    if r == 0 || r > count {
        return Err(Error::InvalidConfig(format!(
            "{r} active endmembers out of {count}"
        )));
    }
    let chosen = index::sample(rng, count, r).into_vec();
    let mut x = vec![0.0; count];
    for &j in &chosen {
        x[j] = rng.sample::<f64, _>(Exp1);
    }
    let sum: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= sum);
    SimplexVector::new(x)
}

/// Blackbody noise shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation relative to the peak of the normalised blackbody.
    pub sigma_radiance: f64,
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_radiance: 0.0,
            temperature: 330.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_radiance >= 0.0 && self.sigma_radiance.is_finite()) {
            return Err(Error::InvalidConfig(
                "sigma_radiance must be non-negative".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Relative spectral radiance `ω³ / (exp(c₂ω/T) − 1)`, not normalised.
pub fn planck(omega: f64, temperature: f64) -> f64 {
    omega.powi(3) / (C2 * omega / temperature).exp_m1()
}

/// [`planck`] on every grid sample, divided by its largest value.
pub fn planck_normalized(grid: &WavenumberGrid, temperature: f64) -> Vec<f64> {
    let mut b: Vec<f64> = grid
        .values()
        .iter()
        .map(|&w| planck(w, temperature))
        .collect();
    let peak = b.iter().cloned().fold(0.0, f64::max);
    b.iter_mut().for_each(|v| *v /= peak);
    b
}

/// Per-sample emissivity standard deviation `σ_radiance / √B_norm(ω, T)`.
pub fn noise_std(grid: &WavenumberGrid, noise: &NoiseSpec) -> Vec<f64> {
    planck_normalized(grid, noise.temperature)
        .into_iter()
        .map(|b| noise.sigma_radiance / b.sqrt())
        .collect()
}

/// Adds independent Gaussian noise shaped by the blackbody curve. The
/// result is flagged as measured, so it may leave `[0, 1]`.
pub fn emissivity_noise(spectrum: &Spectrum, noise: &NoiseSpec) -> Result<Spectrum> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let values = add_noise(spectrum.values(), spectrum.grid(), noise, &mut rng);
    Spectrum::measured(spectrum.grid().clone(), values)
}

fn add_noise(
    values: &[f64],
    grid: &WavenumberGrid,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    if noise.sigma_radiance == 0.0 {
        return values.to_vec();
    }
    values
        .iter()
        .zip(noise_std(grid, noise))
        .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Everything needed to regenerate a synthetic mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub abundances: SimplexVector,
    /// Perturbed endmember parameters, in library order.
    pub params: Vec<DispersionParams>,
    pub perturb_seed: u64,
    pub noise: NoiseSpec,
}

impl GroundTruth {
    /// `Σⱼ xⱼ · render(Λⱼ)`, accumulated in library order.
    pub fn noiseless(&self, grid: &WavenumberGrid) -> Vec<f64> {
        let mut b = vec![0.0; grid.len()];
        for (x, p) in self.abundances.values().iter().zip(&self.params) {
            let col = render(p, grid);
            for (acc, v) in b.iter_mut().zip(col.values()) {
                *acc += x * v;
            }
        }
        b
    }

    /// The noisy mixture, regenerated from the record.
    pub fn replay(&self, grid: &WavenumberGrid) -> Result<MixedSpectrum> {
        let clean = self.noiseless(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed);
        MixedSpectrum::new(grid.clone(), add_noise(&clean, grid, &self.noise, &mut rng))
    }
}

/// `b = Σⱼ xⱼ · render(perturb(Λⱼ)) + η`. Endmembers are perturbed in
/// library order from one stream seeded by `perturb.seed`.
pub fn synth_mixture(
    library: &EndmemberLibrary,
    abundances: &SimplexVector,
    perturb: &PerturbSpec,
    noise: &NoiseSpec,
) -> Result<(MixedSpectrum, GroundTruth)> {
    if abundances.len() != library.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} abundances for {} endmembers",
            abundances.len(),
            library.len()
        )));
    }
    perturb.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(perturb.seed);
    let params = library
        .entries()
        .iter()
        .map(|e| perturb_with(&e.params, perturb, &mut rng))
        .collect();
    let truth = GroundTruth {
        abundances: abundances.clone(),
        params,
        perturb_seed: perturb.seed,
        noise: *noise,
    };
    Ok((truth.replay(library.grid())?, truth))
}

/// How abundances are drawn for batch generation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AbundanceSampling {
    /// Number of non-zero endmembers per mixture; all when `None`.
    pub active: Option<usize>,
}

/// `count` independent mixtures. Mixture `i` draws its abundances,
/// perturbation and noise from seeds derived from `(seed, i)`, so the
/// output does not depend on scheduling.
pub fn synth_batch(
    library: &EndmemberLibrary,
    count: usize,
    sampling: AbundanceSampling,
    perturb: &PerturbSpec,
    noise: &NoiseSpec,
    seed: u64,
    execution: Execution,
) -> Result<Vec<(MixedSpectrum, GroundTruth)>> {
    execution
        .map_indexed(count, |i| {
            let base = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            let x = sample_abundances(library.len(), sampling.active, &mut rng)?;
            let p = perturb.with_seed(derive_seed(base, 1));
            let n = noise.with_seed(derive_seed(base, 2));
            synth_mixture(library, &x, &p, &n)
        })
        .into_iter()
        .collect()
}

pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(point, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixpoint
/// or [`KMEANS_MAX_ITERS`] iterations. An emptied cluster keeps its
/// previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} spectra cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch(
            "spectra have different lengths".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if target < *di {
                    idx = i;
                    break;
                }
                target -= di;
            }
            idx
        } else {
            // Every point already coincides with a centroid.
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut wcss = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        wcss.push(next.iter().map(|(_, d)| d).sum());
        let changed = next.iter().zip(&assignments).any(|((a, _), b)| a != b);
        assignments = next.into_iter().map(|(a, _)| a).collect();
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        wcss,
        iterations,
    })
}

/// Cluster centroids as spectra on the shared grid.
pub fn kmeans_exemplars(spectra: &[Spectrum], k: usize, seed: u64) -> Result<Vec<Spectrum>> {
    let grid = match spectra.first() {
        Some(s) => s.grid().clone(),
        None => return Err(Error::InvalidConfig("no spectra to cluster".into())),
    };
    if spectra.iter().any(|s| s.grid() != &grid) {
        return Err(Error::ShapeMismatch("spectra use different grids".into()));
    }
    let points: Vec<Vec<f64>> = spectra.iter().map(|s| s.values().to_vec()).collect();
    let result = kmeans(&points, k, seed)?;
    result
        .centroids
        .into_iter()
        .map(|c| {
            Spectrum::new(grid.clone(), c.clone()).or_else(|_| Spectrum::measured(grid.clone(), c))
        })
        .collect()
}
