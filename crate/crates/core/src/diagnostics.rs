//! Rank, conditioning and spectrum of the endmember matrix.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::synth::{perturb_params, PerturbSpec};
use crate::unmix::{build_a_from, EndmemberLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// `σ_max / σ_min`; `+∞` when the matrix is rank-deficient.
    pub condition_number: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Eigenvalues of `AᵀA`, computed separately from the SVD, descending.
    pub eig_normal: Vec<f64>,
    /// `‖A − UΣVᵀ‖_F / ‖A‖_F`.
    pub reconstruction_error: f64,
}

/// Default numerical-rank threshold `max(rows, cols)·ε·σ_max`, returned as
/// the relative factor `max(rows, cols)·ε`.
pub fn default_rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Singular-value analysis of `a`. `rank_tolerance` is relative to σ_max;
/// `None` selects [`default_rank_tolerance`].
pub fn analyze_a(a: &DMatrix<f64>, rank_tolerance: Option<f64>) -> Result<MatrixReport> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::ShapeMismatch(
            "cannot analyse an empty matrix".into(),
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "matrix entry",
            iteration: 0,
        });
    }
    let m = faer::Mat::from_fn(rows, cols, |i, j| a[(i, j)]);
    let svd = m.thin_svd().map_err(|_| Error::NonFinite {
        what: "singular value decomposition",
        iteration: 0,
    })?;
    let s = svd.S().column_vector();
    let residual = &m - svd.U() * s.as_diagonal() * svd.V().transpose();
    let norm = a.norm();
    let residual = residual.norm_l2();
    let reconstruction_error = if norm > 0.0 {
        residual / norm
    } else {
        residual
    };

    let mut singular_values: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    singular_values.sort_by(|x, y| y.total_cmp(x));
    let smax = singular_values[0];
    let tol = rank_tolerance.unwrap_or_else(|| default_rank_tolerance(rows, cols)) * smax;
    let rank = singular_values.iter().filter(|s| **s > tol).count();
    let condition_number = if rank < cols || rank == 0 {
        f64::INFINITY
    } else {
        smax / singular_values[singular_values.len() - 1]
    };
    let mut eig_normal: Vec<f64> = SymmetricEigen::new(a.transpose() * a)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig_normal.sort_by(|x, y| y.total_cmp(x));
    Ok(MatrixReport {
        rows,
        cols,
        rank,
        condition_number,
        singular_values,
        eig_normal,
        reconstruction_error,
    })
}

/// Perturbs every library entry (run `i` uses seeds derived from
/// `(seed, i)`), rebuilds `A` and analyses it.
pub fn condition_sweep(
    library: &EndmemberLibrary,
    perturb: &PerturbSpec,
    runs: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<MatrixReport>> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    perturb.validate()?;
    execution
        .map_indexed(runs, |run| {
            let run_seed = derive_seed(seed, run as u64);
            let params = library
                .entries()
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    perturb_params(
                        &e.params,
                        &perturb.with_seed(derive_seed(run_seed, j as u64)),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            analyze_a(&build_a_from(&params, library.grid()), None)
        })
        .into_iter()
        .collect()
}

/// `run,rank,condition,min_eig,max_eig`, one row per report.
pub fn sweep_csv(reports: &[MatrixReport]) -> String {
    let mut out = String::from("run,rank,condition,min_eig,max_eig\n");
    for (i, r) in reports.iter().enumerate() {
        let min = r.eig_normal.last().copied().unwrap_or(0.0);
        let max = r.eig_normal.first().copied().unwrap_or(0.0);
        writeln!(
            out,
            "{i},{},{:e},{:e},{:e}",
            r.rank, r.condition_number, min, max
        )
        .unwrap();
    }
    out
}
