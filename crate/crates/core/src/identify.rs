//! Numerical completeness probe for `p(y0 | x, z = 1)`.
//!
//! The conditional family is discretized on an `x × y0` grid and the rank of
//! the resulting kernel matrix is inspected by SVD. A full column rank is only
//! evidence on a finite grid; completeness itself cannot be tested from data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::model::GaussianModelParams;
use crate::numeric::{log_sigmoid, normal_log_density};

pub const MIN_GRID: usize = 5;

pub const CAVEAT: &str = "heuristic finite-grid surrogate: full numerical rank is consistent with, \
but does not establish, completeness of p(y0 | x, z=1)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    CompleteAtTolerance,
    Deficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletenessReport {
    pub numerical_rank: usize,
    pub condition_number: f64,
    pub smallest_singular_value: f64,
    pub singular_values: Vec<f64>,
    pub grid_sizes: (usize, usize),
    pub tolerance: f64,
    pub verdict: Verdict,
    pub caveat: String,
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.len() < MIN_GRID {
        return Err(HteError::Config(format!("{name} grid has {} points; at least {MIN_GRID} required", g.len())));
    }
    if g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HteError::Config(format!("{name} grid must be finite and strictly increasing")));
    }
    Ok(())
}

/// Trapezoid cell widths of a grid.
pub fn trapezoid_widths(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|j| {
            let left = if j > 0 { g[j] - g[j - 1] } else { 0.0 };
            let right = if j + 1 < n { g[j + 1] - g[j] } else { 0.0 };
            (left + right) / 2.0
        })
        .collect()
}

/// Row-normalized discretized kernel `M[i,j] ∝ p(y0_j | x_i, z=1) Δy0_j`.
pub fn kernel_matrix(psi: &GaussianModelParams, x_grid: &[f64], y0_grid: &[f64]) -> DMatrix<f64> {
    let dy = trapezoid_widths(y0_grid);
    let mut m = DMatrix::zeros(x_grid.len(), y0_grid.len());
    for (i, &x) in x_grid.iter().enumerate() {
        let logs: Vec<f64> = y0_grid
            .iter()
            .map(|&y| normal_log_density(y, psi.mu0(x), psi.sigma0) + log_sigmoid(psi.propensity_index(y, x)))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row: Vec<f64> = logs.iter().zip(&dy).map(|(l, d)| (l - max).exp() * d).collect();
        let s: f64 = row.iter().sum();
        for j in 0..row.len() {
            m[(i, j)] = if s > 0.0 { row[j] / s } else { 0.0 };
        }
    }
    m
}

/// Rank report of an arbitrary kernel matrix; `n_y0` is its column count.
pub fn rank_report(m: &DMatrix<f64>, tol: f64) -> Result<CompletenessReport> {
    if !(tol > 0.0) {
        return Err(HteError::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let largest = sv.first().copied().unwrap_or(0.0);
    let smallest = sv.last().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > tol * largest).count();
    let n_y0 = m.ncols();
    Ok(CompletenessReport {
        numerical_rank: rank,
        condition_number: if smallest > 0.0 { largest / smallest } else { f64::INFINITY },
        smallest_singular_value: smallest,
        singular_values: sv,
        grid_sizes: (m.nrows(), n_y0),
        tolerance: tol,
        verdict: if rank < n_y0 { Verdict::Deficient } else { Verdict::CompleteAtTolerance },
        caveat: CAVEAT.to_string(),
    })
}

pub fn completeness_diagnostic(psi: &GaussianModelParams, x_grid: &[f64], y0_grid: &[f64], tol: f64) -> Result<CompletenessReport> {
    check_grid("x", x_grid)?;
    check_grid("y0", y0_grid)?;
    psi.validate()?;
    rank_report(&kernel_matrix(psi, x_grid, y0_grid), tol)
}

/// `n` equally spaced points covering `center ± half_width`.
pub fn span_grid(center: f64, half_width: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| center - half_width + 2.0 * half_width * k as f64 / (n - 1) as f64).collect()
}
