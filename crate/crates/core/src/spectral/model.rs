//! The Lorentz-oscillator dispersion forward model.
//!
//! Per axis and wavenumber ω, each band contributes
//!
//! ```text
//! D  = (ω₀² − ω²)² + γ² ω₀² ω²
//! θ += 4π ρ ω₀² (ω₀² − ω²) / D
//! φ += 2π ρ ω₀² γ ω₀ ω / D
//! ```
//!
//! on top of `θ = ε_r`. The optical constants follow from
//! `n² − k² = θ, n·k = φ`, and the normal-incidence emissivity is
//! `ε = 1 − |(n̂ − 1)/(n̂ + 1)|²`. Axes mix convexly with weights `α`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::spectral::dual::{Dual, Real};
use crate::spectral::{AxisParams, DispersionParams, ParamLayout, Spectrum, WavenumberGrid};

/// Lower bound applied to the real refractive index to keep `k = φ/n` finite.
pub const N_FLOOR: f64 = 1e-8;

/// Complex refractive index `n̂ = n − i·k` sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexIndexCurve {
    pub grid: WavenumberGrid,
    pub n: Vec<f64>,
    pub k: Vec<f64>,
    /// Samples where the `n` floor replaced the exact value.
    pub floored: Vec<bool>,
}

impl ComplexIndexCurve {
    pub fn floor_hits(&self) -> usize {
        self.floored.iter().filter(|f| **f).count()
    }
}

/// Derivative of a rendered spectrum with respect to every free parameter.
///
/// Rows are grid samples; columns follow [`ParamLayout`] flat order.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub layout: ParamLayout,
    /// Number of (sample, axis) evaluations where the `n` floor was active.
    pub floor_hits: usize,
}

#[inline]
fn band_term<T: Real>(omega0: T, gamma: T, rho: T, omega: f64) -> (T, T) {
    let w = T::cst(omega);
    let w0sq = omega0 * omega0;
    let d = w0sq - w * w;
    let den = d * d + gamma * gamma * w0sq * w * w;
    let strength = rho * w0sq / den;
    (
        T::cst(4.0 * PI) * strength * d,
        T::cst(2.0 * PI) * strength * gamma * omega0 * w,
    )
}

struct Optical<T> {
    n: T,
    k: T,
    emissivity: T,
    floored: bool,
}

#[inline]
fn optical<T: Real>(theta: T, phi: T) -> Optical<T> {
    let b = (theta * theta + T::cst(4.0) * phi * phi).sqrt();
    // (θ + b)/2, rewritten as 2φ²/(b − θ) when θ < 0 to avoid cancellation.
    let mut n_sq = if theta.re() >= 0.0 {
        (theta + b) / T::cst(2.0)
    } else {
        T::cst(2.0) * phi * phi / (b - theta)
    };
    let floor_sq = N_FLOOR * N_FLOOR;
    let floored = !(n_sq.re() >= floor_sq);
    if floored {
        n_sq = T::cst(floor_sq);
    }
    let n = n_sq.sqrt();
    let k = phi / n;
    let one = T::cst(1.0);
    let np1 = n + one;
    // 1 − R = 4n / ((n + 1)² + k²), free of cancellation when R ≈ 1.
    let emissivity = T::cst(4.0) * n / (np1 * np1 + k * k);
    Optical {
        n,
        k,
        emissivity,
        floored,
    }
}

/// `(θ, φ)` of one axis at one wavenumber.
pub fn eval_theta_phi(axis: &AxisParams, omega: f64) -> (f64, f64) {
    axis.bands()
        .iter()
        .fold((axis.eps_r(), 0.0), |(theta, phi), b| {
            let (t, p) = band_term(b.omega0, b.gamma, b.rho, omega);
            (theta + t, phi + p)
        })
}

pub fn refractive_index(axis: &AxisParams, grid: &WavenumberGrid) -> ComplexIndexCurve {
    let len = grid.len();
    let (mut n, mut k, mut floored) = (
        Vec::with_capacity(len),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
    );
    for &omega in grid.values() {
        let (theta, phi) = eval_theta_phi(axis, omega);
        let o = optical(theta, phi);
        n.push(o.n);
        k.push(o.k);
        floored.push(o.floored);
    }
    ComplexIndexCurve {
        grid: grid.clone(),
        n,
        k,
        floored,
    }
}

fn axis_emissivity(axis: &AxisParams, omega: f64) -> f64 {
    let (theta, phi) = eval_theta_phi(axis, omega);
    optical(theta, phi).emissivity
}

pub fn emissivity_single_axis(axis: &AxisParams, grid: &WavenumberGrid) -> Spectrum {
    let values = grid
        .values()
        .iter()
        .map(|&w| axis_emissivity(axis, w))
        .collect();
    Spectrum::new(grid.clone(), values).expect("emissivity lies in (0, 1]")
}

/// Writes the mixed-axis emissivity into `out` (length = grid length).
pub fn render_into(params: &DispersionParams, grid: &WavenumberGrid, out: &mut [f64]) {
    assert_eq!(out.len(), grid.len());
    out.fill(0.0);
    for (axis, &alpha) in params.axes().iter().zip(params.alpha()) {
        for (o, &w) in out.iter_mut().zip(grid.values()) {
            *o += alpha * axis_emissivity(axis, w);
        }
    }
    // Convex combination may round a hair above 1 when every axis is at 1.
    for o in out.iter_mut() {
        *o = o.min(1.0);
    }
}

pub fn render(params: &DispersionParams, grid: &WavenumberGrid) -> Spectrum {
    let mut values = vec![0.0; grid.len()];
    render_into(params, grid, &mut values);
    Spectrum::new(grid.clone(), values).expect("rendered emissivity lies in (0, 1]")
}

/// Renders and differentiates with respect to all free parameters.
///
/// Derivatives are exact forward-mode: for each sample the optical tail
/// `(θ, φ) ↦ ε` is pushed through two dual passes to get `∂ε/∂θ, ∂ε/∂φ`, and
/// each band parameter is seeded in its own dual pass through that band's
/// `(θ, φ)` contribution.
pub fn render_with_gradient(
    params: &DispersionParams,
    grid: &WavenumberGrid,
) -> (Spectrum, Jacobian) {
    let layout = params.layout();
    let rows = grid.len();
    let mut values = vec![0.0; rows];
    let mut jac = DMatrix::zeros(rows, layout.len());
    let mut floor_hits = 0;
    let alpha_off = layout.alpha_offset();

    for (m, (axis, &alpha)) in params.axes().iter().zip(params.alpha()).enumerate() {
        let base = layout.axis_offset(m);
        let eps_col = layout.eps_index(m);
        for (i, &omega) in grid.values().iter().enumerate() {
            let (theta, phi) = eval_theta_phi(axis, omega);
            let d_theta = optical(Dual::var(theta), Dual::cst(phi));
            let d_phi = optical(Dual::cst(theta), Dual::var(phi));
            let e = d_theta.emissivity.re;
            let (e_t, e_p) = (d_theta.emissivity.du, d_phi.emissivity.du);
            floor_hits += usize::from(d_theta.floored);

            values[i] += alpha * e;
            jac[(i, eps_col)] = alpha * e_t;
            jac[(i, alpha_off + m)] = e;

            for (kb, b) in axis.bands().iter().enumerate() {
                let col = base + 3 * kb;
                let seeds = [
                    (Dual::cst(b.omega0), Dual::cst(b.gamma), Dual::var(b.rho)),
                    (Dual::var(b.omega0), Dual::cst(b.gamma), Dual::cst(b.rho)),
                    (Dual::cst(b.omega0), Dual::var(b.gamma), Dual::cst(b.rho)),
                ];
                for (j, (w0, g, r)) in seeds.into_iter().enumerate() {
                    let (t, p) = band_term(w0, g, r, omega);
                    jac[(i, col + j)] = alpha * (e_t * t.du + e_p * p.du);
                }
            }
        }
    }
    for v in values.iter_mut() {
        *v = v.min(1.0);
    }
    let spectrum = Spectrum::new(grid.clone(), values).expect("rendered emissivity lies in (0, 1]");
    (
        spectrum,
        Jacobian {
            matrix: jac,
            layout,
            floor_hits,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Band;

    fn grid() -> WavenumberGrid {
        WavenumberGrid::range(200.0, 1400.0, 10.0).unwrap()
    }

    fn single_band() -> AxisParams {
        AxisParams::from_bands(2.356, vec![Band::new(1161.0, 0.1, 0.67)]).unwrap()
    }

    #[test]
    fn bare_dielectric() {
        let vac = AxisParams::dielectric(1.0).unwrap();
        assert_eq!(eval_theta_phi(&vac, 500.0), (1.0, 0.0));
        let glassy = AxisParams::dielectric(4.0).unwrap();
        assert_eq!(eval_theta_phi(&glassy, 900.0), (4.0, 0.0));

        let curve = refractive_index(&glassy, &grid());
        assert!(curve.n.iter().all(|n| (n - 2.0).abs() < 1e-15));
        assert!(curve.k.iter().all(|k| *k == 0.0));
        let curve = refractive_index(&vac, &grid());
        assert!(curve.n.iter().all(|n| (n - 1.0).abs() < 1e-15));

        let s = emissivity_single_axis(&vac, &grid());
        assert!(s.values().iter().all(|e| (e - 1.0).abs() < 1e-15));
        let s = emissivity_single_axis(&glassy, &grid());
        assert!(s.values().iter().all(|e| (e - 8.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn degenerate_axis_mixtures() {
        let a = single_band();
        let single = emissivity_single_axis(&a, &grid());
        let one = render(&DispersionParams::single(a.clone()), &grid());
        assert_eq!(one.values(), single.values());
        let two = render(
            &DispersionParams::new(vec![a.clone(), a], vec![0.5, 0.5]).unwrap(),
            &grid(),
        );
        for (x, y) in two.values().iter().zip(single.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn n_k_identities() {
        let a = single_band();
        let curve = refractive_index(&a, &grid());
        assert_eq!(curve.floor_hits(), 0);
        for (i, &w) in grid().values().iter().enumerate() {
            let (theta, phi) = eval_theta_phi(&a, w);
            let (n, k) = (curve.n[i], curve.k[i]);
            let scale = theta.abs().max(phi.abs()).max(1.0);
            assert!((n * n - k * k - theta).abs() <= 1e-12 * scale);
            assert!((n * k - phi).abs() <= 1e-12 * scale);
            assert!(phi >= 0.0 && k >= 0.0);
        }
    }

    #[test]
    fn dielectric_gradient_closed_form() {
        let p = DispersionParams::single(AxisParams::dielectric(4.0).unwrap());
        let (s, j) = render_with_gradient(&p, &grid());
        assert!(s.values().iter().all(|e| (e - 8.0 / 9.0).abs() < 1e-15));
        // ε = 4n/(n+1)², n = √ε_r  ⇒  ∂ε/∂ε_r = −2(n−1)/(n(n+1)³) = −1/27 at ε_r = 4
        let h = 1e-6;
        let e = |er: f64| {
            emissivity_single_axis(&AxisParams::dielectric(er).unwrap(), &grid()).values()[0]
        };
        let fd = (e(4.0 + h) - e(4.0 - h)) / (2.0 * h);
        assert!((fd + 1.0 / 27.0).abs() < 1e-9);
        for i in 0..grid().len() {
            assert!((j.matrix[(i, 0)] + 1.0 / 27.0).abs() < 1e-15);
            // ∂ε_model/∂α = ε of the axis.
            assert!((j.matrix[(i, 1)] - 8.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dead_band_has_zero_gamma_column() {
        let axis = AxisParams::from_bands(
            1.8,
            vec![Band::new(600.0, 0.05, 0.2), Band::new(900.0, 0.08, 0.0)],
        )
        .unwrap();
        let (_, j) = render_with_gradient(&DispersionParams::single(axis), &grid());
        // band 1 occupies columns 3..6: rho, omega0, gamma
        for i in 0..grid().len() {
            assert_eq!(j.matrix[(i, 4)], 0.0);
            assert_eq!(j.matrix[(i, 5)], 0.0);
            assert!(j.matrix[(i, 3)] != 0.0);
        }
    }

    #[test]
    fn floor_engages_on_negative_theta_without_loss() {
        // θ < 0 with φ = 0 exactly makes n² = 0.
        let o = optical(-2.0f64, 0.0);
        assert!(o.floored);
        assert_eq!(o.n, N_FLOOR);
        assert!(o.emissivity > 0.0 && o.emissivity <= 1.0);
    }
}
