//! Missing-at-random noise model.
//!
//! Cells of the design are missing independently with probability `π`
//! (observed with probability `1 − π`). With missing cells stored as zero in
//! `z̃`, the rescaled design `z̃ / (1 − π)` is an unbiased, additively noisy
//! version of `x` whose diagonal noise covariance is estimable from `z̃`.
//! The variability of `π̂` contributes an `O_P(p^{-1/2})` term that is not
//! corrected for.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MarEstimate {
    pub pi_hat: f64,
    pub gamma_hat: Vec<f64>,
    /// Per-observation linear-representation terms of `Γ̂`, n × p.
    pub phi: DMatrix<f64>,
    pub z_rescaled: DMatrix<f64>,
}

/// Fraction of missing cells.
pub fn estimate_pi(mask: &DMatrix<bool>) -> Result<f64> {
    let total = mask.len();
    if total == 0 {
        return Err(Error::input("mask is empty"));
    }
    let missing = mask.iter().filter(|&&o| !o).count();
    if missing == total {
        return Err(Error::DegenerateData(
            "every design cell is missing; the missingness rate is 1".into(),
        ));
    }
    Ok(missing as f64 / total as f64)
}

fn check_pi(pi_hat: f64) -> Result<()> {
    if !(0.0..1.0).contains(&pi_hat) {
        return Err(Error::input(format!(
            "missingness rate must lie in [0, 1), got {pi_hat}"
        )));
    }
    Ok(())
}

/// `z̃ / (1 − π̂)`; missing cells stay zero.
pub fn rescale_design(z_tilde: &DMatrix<f64>, pi_hat: f64) -> Result<DMatrix<f64>> {
    check_pi(pi_hat)?;
    let keep = 1.0 - pi_hat;
    Ok(z_tilde.map(|v| v / keep))
}

fn inflation(pi_hat: f64) -> f64 {
    pi_hat / ((1.0 - pi_hat) * (1.0 - pi_hat))
}

/// `Γ̂_jj = (1/n) Σ_i z̃_ij² · π̂ / (1 − π̂)²`.
pub fn gamma_hat(z_tilde: &DMatrix<f64>, pi_hat: f64) -> Result<Vec<f64>> {
    check_pi(pi_hat)?;
    let n = z_tilde.nrows() as f64;
    let factor = inflation(pi_hat);
    Ok(z_tilde
        .column_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n * factor)
        .collect())
}

/// `φ̂_j(z̃_i) = {z̃_ij² − (1/n) Σ_i z̃_ij²} · π̂ / (1 − π̂)²`.
pub fn phi_scores(z_tilde: &DMatrix<f64>, pi_hat: f64) -> Result<DMatrix<f64>> {
    check_pi(pi_hat)?;
    let (n, p) = z_tilde.shape();
    let factor = inflation(pi_hat);
    let mut phi = DMatrix::zeros(n, p);
    for (c, col) in z_tilde.column_iter().enumerate() {
        let mean_sq = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        for (r, v) in col.iter().enumerate() {
            phi[(r, c)] = (v * v - mean_sq) * factor;
        }
    }
    Ok(phi)
}

/// Full missing-at-random estimate from a masked dataset.
pub fn estimate(data: &Dataset) -> Result<MarEstimate> {
    let mask = data
        .mask()
        .ok_or_else(|| Error::input("missing-at-random mode requires an observation mask"))?;
    let pi_hat = estimate_pi(mask)?;
    let z = data.z();
    Ok(MarEstimate {
        pi_hat,
        gamma_hat: gamma_hat(z, pi_hat)?,
        phi: phi_scores(z, pi_hat)?,
        z_rescaled: rescale_design(z, pi_hat)?,
    })
}
