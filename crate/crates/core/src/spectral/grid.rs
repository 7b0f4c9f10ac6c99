use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, positive wavenumber samples in cm⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavenumberGrid {
    values: Vec<f64>,
}

impl WavenumberGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "sample {i} = {} is not a positive finite wavenumber",
                values[i]
            )));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "not strictly increasing at sample {}: {} then {}",
                i + 1,
                values[i],
                values[i + 1]
            )));
        }
        Ok(Self { values })
    }

    /// Evenly spaced grid `start, start+step, ...` up to and including `stop`
    /// (within a 1e-9·step slack).
    pub fn range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !(stop > start) {
            return Err(Error::InvalidGrid(format!(
                "bad range {start}:{stop}:{step}"
            )));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Self::new((0..count).map(|i| start + i as f64 * step).collect())
    }

    /// Parses the `start:stop:step` flag syntax.
    pub fn parse_range(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidGrid(format!(
                "expected start:stop:step, got `{spec}`"
            )));
        }
        let mut nums = [0.0; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| Error::InvalidGrid(format!("`{part}` is not a number")))?;
        }
        Self::range(nums[0], nums[1], nums[2])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Index of the sample nearest to `omega`.
    pub fn nearest_index(&self, omega: f64) -> usize {
        match self.values.binary_search_by(|v| v.total_cmp(&omega)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.values.len() => i - 1,
            Err(i) => {
                if omega - self.values[i - 1] <= self.values[i] - omega {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

impl TryFrom<Vec<f64>> for WavenumberGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<WavenumberGrid> for Vec<f64> {
    fn from(grid: WavenumberGrid) -> Self {
        grid.values
    }
}
