use crate::error::{Error, Result};
use crate::spectral::WavenumberGrid;

/// Emissivity samples on a wavenumber grid.
///
/// Rendered spectra are held to `0 ≤ ε ≤ 1`. Spectra marked `measured` (read
/// from disk, or with simulated noise added) only need finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: WavenumberGrid,
    emissivity: Vec<f64>,
    measured: bool,
}

impl Spectrum {
    pub fn new(grid: WavenumberGrid, emissivity: Vec<f64>) -> Result<Self> {
        Self::check_len(&grid, &emissivity)?;
        if let Some(i) = emissivity.iter().position(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidSpectrum(format!(
                "emissivity {} at sample {i} outside [0, 1]",
                emissivity[i]
            )));
        }
        Ok(Self {
            grid,
            emissivity,
            measured: false,
        })
    }

    pub fn measured(grid: WavenumberGrid, emissivity: Vec<f64>) -> Result<Self> {
        Self::check_len(&grid, &emissivity)?;
        if let Some(i) = emissivity.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidSpectrum(format!(
                "non-finite emissivity at sample {i}"
            )));
        }
        Ok(Self {
            grid,
            emissivity,
            measured: true,
        })
    }

    fn check_len(grid: &WavenumberGrid, emissivity: &[f64]) -> Result<()> {
        if grid.len() != emissivity.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} emissivity samples for a grid of {}",
                emissivity.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.emissivity
    }

    pub fn is_measured(&self) -> bool {
        self.measured
    }

    pub fn len(&self) -> usize {
        self.emissivity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissivity.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.emissivity
    }

    /// Mean squared difference against another spectrum on the same grid.
    pub fn mse(&self, other: &Spectrum) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("spectra on different grids".into()));
        }
        Ok(self
            .emissivity
            .iter()
            .zip(&other.emissivity)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / self.len() as f64)
    }
}
