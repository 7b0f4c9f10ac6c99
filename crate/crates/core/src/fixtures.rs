//! Bundled dispersion parameters for three minerals (olivine Fo10, biotite,
//! hematite), fitted against laboratory emissivity spectra.
//!
//! Axis weights are not part of the published tables; fixtures default to
//! uniform weights.

use crate::error::{Error, Result};
use crate::spectral::{AxisParams, Band, DispersionParams};

pub const FIXTURE_NAMES: [&str; 3] = ["olivine_fo10", "biotite", "hematite"];

/// Olivine Fo10: `(axis, omega0, gamma, rho, eps_r)`.
#[rustfmt::skip]
const OLIVINE_FO10: &[(usize, f64, f64, f64, f64)] = &[
    (0, 258.45, 0.018, 0.022, 1.07),
    (0, 272.71, 0.038, 0.070, 1.07),
    (0, 285.33, 0.027, 0.035, 1.07),
    (0, 340.81, 0.021, 0.015, 1.07),
    (0, 361.06, 0.067, 0.187, 1.07),
    (0, 467.03, 0.060, 0.091, 1.07),
    (0, 589.36, 0.032, 0.043, 1.07),
    (0, 826.60, 0.011, 0.015, 1.07),
    (0, 863.05, 0.030, 0.083, 1.07),
    (0, 934.94, 0.018, 0.038, 1.07),
    (0, 1068.56, 0.009, 0.001, 1.07),
    (0, 1349.50, 0.043, 0.009, 1.07),
    (0, 1400.46, 0.057, 0.026, 1.07),
    (0, 1452.82, 0.064, 0.020, 1.07),
    (0, 1518.96, 0.079, 0.025, 1.07),
    (0, 1597.62, 0.018, 0.001, 1.07),
    (0, 1694.56, 0.043, 0.007, 1.07),
    (0, 1794.69, 0.032, 0.002, 1.07),
    (0, 1837.96, 0.009, 0.001, 1.07),
    (0, 1934.50, 0.056, 0.020, 1.07),
    (1, 293.77, 0.042, 0.240, 1.99),
    (1, 303.28, 0.058, 0.263, 1.99),
    (1, 317.16, 0.137, 0.356, 1.99),
    (1, 473.47, 0.006, 0.002, 1.99),
    (1, 496.39, 0.029, 0.030, 1.99),
    (1, 504.45, 0.062, 0.302, 1.99),
    (1, 562.92, 0.055, 0.057, 1.99),
    (1, 577.32, 0.027, 0.008, 1.99),
    (1, 891.85, 0.023, 0.189, 1.99),
    (1, 990.28, 0.047, 0.086, 1.99),
    (1, 1108.25, 0.023, 0.006, 1.99),
];

/// Biotite: `(axis, omega0, gamma, rho, eps_r)`.
#[rustfmt::skip]
const BIOTITE: &[(usize, f64, f64, f64, f64)] = &[
    (0, 235.91, 0.066, 0.2343, 1.31),
    (0, 432.39, 0.056, 0.4040, 1.31),
    (0, 439.80, 0.039, 0.4131, 1.31),
    (0, 446.34, 0.014, 0.0385, 1.31),
    (0, 451.92, 0.042, 0.4797, 1.31),
    (0, 594.57, 0.073, 0.0147, 1.31),
    (0, 954.50, 0.036, 0.2510, 1.31),
    (0, 1008.94, 0.014, 0.0578, 1.31),
    (0, 1013.39, 0.017, 0.0184, 1.31),
    (0, 1041.20, 0.048, 0.0178, 1.31),
    (0, 1075.68, 0.025, 0.0198, 1.31),
    (0, 1116.66, 0.007, 0.0003, 1.31),
    (0, 1152.61, 0.019, 0.0012, 1.31),
    (0, 1390.98, 0.044, 0.0177, 1.31),
    (0, 1460.91, 0.061, 0.0280, 1.31),
    (0, 1524.44, 0.065, 0.0676, 1.31),
    (0, 1629.72, 0.025, 0.0271, 1.31),
    (0, 1661.44, 0.007, 0.0034, 1.31),
    (0, 1687.84, 0.068, 0.0723, 1.31),
    (0, 1772.30, 0.074, 0.0877, 1.31),
    (0, 1813.27, 0.006, 0.0009, 1.31),
    (0, 1865.48, 0.064, 0.0731, 1.31),
    (0, 1964.44, 0.055, 0.0131, 1.31),
    (1, 268.77, 0.073, 0.4634, 2.61),
    (1, 294.51, 0.045, 0.1965, 2.61),
    (1, 313.92, 0.064, 0.3242, 2.61),
    (1, 337.12, 0.093, 0.4930, 2.61),
    (1, 362.24, 0.062, 0.1954, 2.61),
    (1, 400.00, 0.209, 0.5174, 2.61),
    (1, 462.66, 0.065, 0.4399, 2.61),
    (1, 492.95, 0.080, 0.3498, 2.61),
    (1, 510.47, 0.061, 0.0664, 2.61),
    (1, 653.21, 0.078, 0.0611, 2.61),
    (1, 718.49, 0.040, 0.0331, 2.61),
    (1, 873.68, 0.115, 0.3343, 2.61),
    (1, 928.32, 0.048, 0.0488, 2.61),
    (1, 991.97, 0.015, 0.3550, 2.61),
    (1, 1588.86, 0.040, 0.0607, 2.61),
    (1, 1963.15, 0.004, 0.0023, 2.61),
    (1, 1989.53, 0.001, 0.0002, 2.61),
];

/// Hematite: `(axis, omega0, gamma, rho, eps_r)`.
#[rustfmt::skip]
const HEMATITE: &[(usize, f64, f64, f64, f64)] = &[
    (0, 258.29, 0.11, 0.110, 1.27),
    (0, 279.35, 0.13, 0.141, 1.27),
    (0, 294.73, 0.11, 0.149, 1.27),
    (0, 335.86, 0.08, 0.130, 1.27),
    (0, 471.32, 0.07, 0.098, 1.27),
    (0, 526.58, 0.05, 0.029, 1.27),
    (0, 543.94, 0.07, 0.062, 1.27),
    (0, 563.14, 0.08, 0.067, 1.27),
    (0, 609.37, 0.04, 0.041, 1.27),
    (0, 619.61, 0.04, 0.041, 1.27),
    (0, 632.43, 0.07, 0.067, 1.27),
    (0, 654.46, 0.09, 0.054, 1.27),
    (0, 686.74, 0.12, 0.038, 1.27),
    (0, 798.98, 0.04, 0.011, 1.27),
    (0, 890.21, 0.03, 0.009, 1.27),
    (0, 916.82, 0.02, 0.005, 1.27),
    (0, 958.26, 0.04, 0.014, 1.27),
    (0, 1002.55, 0.04, 0.010, 1.27),
    (0, 1100.72, 0.03, 0.022, 1.27),
    (0, 1167.07, 0.02, 0.010, 1.27),
    (0, 1238.37, 0.01, 0.005, 1.27),
    (0, 1282.36, 0.03, 0.019, 1.27),
    (1, 234.31, 0.02, 0.007, 1.25),
    (1, 238.56, 0.06, 0.031, 1.25),
    (1, 312.13, 0.09, 0.255, 1.25),
    (1, 356.47, 0.04, 0.032, 1.25),
    (1, 430.53, 0.09, 0.085, 1.25),
    (1, 444.75, 0.06, 0.032, 1.25),
    (1, 457.95, 0.04, 0.011, 1.25),
    (1, 486.07, 0.03, 0.019, 1.25),
    (1, 577.56, 0.08, 0.160, 1.25),
    (1, 727.69, 0.06, 0.049, 1.25),
    (1, 748.13, 0.07, 0.040, 1.25),
    (1, 773.90, 0.06, 0.013, 1.25),
    (1, 1049.92, 0.10, 0.058, 1.25),
    (1, 1069.60, 0.01, 0.003, 1.25),
    (1, 1140.36, 0.02, 0.012, 1.25),
    (1, 1197.28, 0.04, 0.022, 1.25),
    (1, 1256.54, 0.02, 0.010, 1.25),
];

fn rows(name: &str) -> Option<&'static [(usize, f64, f64, f64, f64)]> {
    match name {
        "olivine_fo10" => Some(OLIVINE_FO10),
        "biotite" => Some(BIOTITE),
        "hematite" => Some(HEMATITE),
        _ => None,
    }
}

/// Raw table rows `(axis, ω₀, γ, ρ, ε_r)` of a fixture, in table order.
pub fn fixture_rows(name: &str) -> Result<&'static [(usize, f64, f64, f64, f64)]> {
    rows(name).ok_or_else(|| Error::UnknownFixture(name.to_string()))
}

pub fn load_fixture_params(name: &str) -> Result<DispersionParams> {
    let rows = fixture_rows(name)?;
    let axis_count = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
    let axes = (0..axis_count)
        .map(|axis| {
            let mine: Vec<_> = rows.iter().filter(|r| r.0 == axis).collect();
            let eps_r = mine[0].4;
            let bands = mine.iter().map(|r| Band::new(r.1, r.2, r.3)).collect();
            AxisParams::from_bands(eps_r, bands)
        })
        .collect::<Result<Vec<_>>>()?;
    DispersionParams::uniform(axes)
}
