//! Gaussian multiplier bootstrap for simultaneous bands.
//!
//! For draw `b` the multipliers `g_1..g_n` are standard normals read from the
//! counter stream `(seed, BOOTSTRAP, [b, 0])`, so each draw is reproducible
//! on its own and the maxima do not depend on the thread schedule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::debias::{check_alpha, DebiasTable};
use crate::error::{Error, Result};
use crate::rng::{domain, Stream};

pub const DEFAULT_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierDraws {
    /// `max_j |Ĝ_j|` for each draw, in draw order.
    pub maxima: Vec<f64>,
    pub seed: u64,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    pub alpha: f64,
    pub targets: Vec<usize>,
    pub c_star: f64,
    /// `β̌_j ∓ c* σ̂_j / √n`, aligned with `targets`.
    pub intervals: Vec<(f64, f64)>,
    pub n_draws: usize,
    pub seed: u64,
}

/// Draw `max_j |n^{-1/2} Σ_i g_i ψ̂_ij|` for `n_draws` multiplier vectors.
/// `scores` is n × |S|, one column per target.
pub fn multiplier_maxima(
    scores: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<MultiplierDraws> {
    if n_draws == 0 {
        return Err(Error::input("number of bootstrap draws must be at least 1"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "bootstrap scores contain non-finite values",
        ));
    }
    let n = scores.nrows();
    let root_n = (n as f64).sqrt();
    let maxima = (0..n_draws as u64)
        .into_par_iter()
        .map(|b| {
            let mut stream = Stream::new(seed, domain::BOOTSTRAP, [b, 0]);
            let mut g = DVector::zeros(n);
            stream.fill_normal(g.as_mut_slice());
            scores
                .column_iter()
                .map(|col| (col.dot(&g) / root_n).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(MultiplierDraws {
        maxima,
        seed,
        n_draws,
    })
}

/// Rank `⌈(1 − α) B⌉` (1-based) among the ascending maxima.
pub fn quantile_rank(alpha: f64, n_draws: usize) -> usize {
    let target = (1.0 - alpha) * n_draws as f64;
    // Absorb representation error such as 0.95 * 200000 = 190000.00000000003.
    let k = (target - 1e-9 * target.max(1.0)).ceil() as usize;
    k.clamp(1, n_draws)
}

/// The `⌈(1 − α) B⌉`-th ascending order statistic of the maxima.
pub fn critical_value(draws: &MultiplierDraws, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if draws.maxima.is_empty() {
        return Err(Error::input("no bootstrap draws"));
    }
    let mut sorted = draws.maxima.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(alpha, sorted.len()) - 1])
}

/// Standardized scores of a table as an n × |S| matrix.
pub fn score_matrix(table: &DebiasTable) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = table.cells.iter().map(|c| c.scores.clone()).collect();
    DMatrix::from_columns(&cols)
}

/// Add the first-order effect of estimating `Γ` to each score column:
/// `ψ̂_ij − σ̂_j⁻¹ Σ̂_j⁻¹ Σ_k (e^j − μ̂^j)_k φ̂_k(z̃_i) β̂_k`, with the correction
/// centred to mean zero per column.
///
/// `targets[c]` is the coordinate of score column `c`; `mus[c]` its direction.
pub fn adjust_scores_for_estimated_gamma(
    scores: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    targets: &[usize],
    mus: &[DVector<f64>],
    beta_hat: &DVector<f64>,
    cap_sigmas: &[f64],
    sd_hats: &[f64],
) -> Result<DMatrix<f64>> {
    let (n, m) = scores.shape();
    let p = beta_hat.len();
    if phi.shape() != (n, p)
        || targets.len() != m
        || mus.len() != m
        || cap_sigmas.len() != m
        || sd_hats.len() != m
        || mus.iter().any(|mu| mu.len() != p)
        || targets.iter().any(|&j| j >= p)
    {
        return Err(Error::input("dimension mismatch in score adjustment"));
    }
    let mut out = scores.clone();
    for c in 0..m {
        let j = targets[c];
        // Weights (e^j − μ̂^j)_k β̂_k.
        let weights: Vec<(usize, f64)> = (0..p)
            .filter_map(|k| {
                let e = if k == j { 1.0 } else { 0.0 };
                let w = (e - mus[c][k]) * beta_hat[k];
                (w != 0.0).then_some((k, w))
            })
            .collect();
        if weights.is_empty() {
            continue;
        }
        let factor = 1.0 / (sd_hats[c] * cap_sigmas[c]);
        let mut corr = DVector::<f64>::zeros(n);
        for &(k, w) in &weights {
            corr.axpy(w * factor, &phi.column(k), 1.0);
        }
        let mean = corr.sum() / n as f64;
        for i in 0..n {
            out[(i, c)] -= corr[i] - mean;
        }
    }
    Ok(out)
}

/// Bands `center_c ∓ c* sd_c / √n` from an explicit score matrix.
#[allow(clippy::too_many_arguments)]
pub fn bands_from_scores(
    scores: &DMatrix<f64>,
    targets: Vec<usize>,
    centers: &[f64],
    sds: &[f64],
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> Result<(BandResult, MultiplierDraws)> {
    check_alpha(alpha)?;
    let m = scores.ncols();
    if centers.len() != m || sds.len() != m || targets.len() != m {
        return Err(Error::input("band inputs have inconsistent lengths"));
    }
    let draws = multiplier_maxima(scores, n_draws, seed)?;
    let c_star = critical_value(&draws, alpha)?;
    let root_n = (scores.nrows() as f64).sqrt();
    let intervals = centers
        .iter()
        .zip(sds)
        .map(|(&c, &s)| {
            let half = c_star * s / root_n;
            (c - half, c + half)
        })
        .collect();
    Ok((
        BandResult {
            alpha,
            targets,
            c_star,
            intervals,
            n_draws,
            seed,
        },
        draws,
    ))
}

/// Scores entering the bootstrap for a table, adjusted when `Γ` was
/// estimated from a missingness pattern.
pub fn bootstrap_scores(table: &DebiasTable) -> Result<DMatrix<f64>> {
    let scores = score_matrix(table);
    match &table.mar {
        None => Ok(scores),
        Some(mar) => {
            let mus: Vec<DVector<f64>> = table.cells.iter().map(|c| c.mu.clone()).collect();
            let caps: Vec<f64> = table.cells.iter().map(|c| c.sigma_hat_cap).collect();
            let sds: Vec<f64> = table.cells.iter().map(|c| c.sd_hat).collect();
            adjust_scores_for_estimated_gamma(
                &scores,
                &mar.phi,
                &table.targets(),
                &mus,
                &table.pilot.beta,
                &caps,
                &sds,
            )
        }
    }
}

/// Simultaneous bands over every target of `table` at the table's `α`.
pub fn simultaneous_bands(table: &DebiasTable, n_draws: usize, seed: u64) -> Result<BandResult> {
    if table.cells.is_empty() {
        return Err(Error::input("table has no targets"));
    }
    let scores = bootstrap_scores(table)?;
    let centers: Vec<f64> = table.cells.iter().map(|c| c.beta_check).collect();
    let sds: Vec<f64> = table.cells.iter().map(|c| c.sd_hat).collect();
    let (band, _) = bands_from_scores(
        &scores,
        table.targets(),
        &centers,
        &sds,
        table.alpha,
        n_draws,
        seed,
    )?;
    Ok(band)
}
