//! Debiased estimates, plug-in variances and pointwise intervals.
//!
//! For target `j` the orthogonal score evaluated at `θ` is
//!
//! ```text
//! ψ_j(θ)_i = a_i (r_i − z_ij θ) + γ_j θ − Σ_{k≠j} μ_k γ_k β̂_k
//! a_i = z_ij − z_{i,-j}ᵀ μ,   r_i = y_i − z_{i,-j}ᵀ β̂_{-j}
//! ```
//!
//! It is affine in `θ`, so its empirical mean has the closed-form root
//! `β̌_j = Σ̂_j⁻¹ [ mean(a r) − μᵀ Γ_{-j,-j} β̂_{-j} ]` with
//! `Σ̂_j = mean(a z_j) − γ_j`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{validate_gamma, Dataset, NoiseKind, NoiseSpec};
use crate::eiv_lasso::{cross_moment, FitResult, Tuning};
use crate::error::{Error, Result};
use crate::gamma_mar::{self, MarEstimate};
use crate::nodewise::{fit_nodewise_tuned, raw_gram};
use crate::normal::two_sided_quantile;

/// Below this `|Σ̂_j|` the corrected design is treated as singular at `j`.
pub const MIN_CAPITAL_SIGMA: f64 = 1e-10;

/// Where the squared scores entering `σ̂_j²` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceAt {
    /// At the debiased estimate `β̌_j`; standardized scores then have unit
    /// empirical second moment.
    #[default]
    Debiased,
    /// At the pilot coefficient `β̂_j`.
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub tuning: Tuning,
    pub variance_at: VarianceAt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasCell {
    pub j: usize,
    pub beta_check: f64,
    pub sigma_hat_cap: f64,
    pub sd_hat: f64,
    /// Standardized scores `−ψ_j(β̌_j) / (σ̂_j Σ̂_j)`, one per observation.
    pub scores: DVector<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mu: DVector<f64>,
    pub nodewise: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasTable {
    pub cells: Vec<DebiasCell>,
    pub alpha: f64,
    /// Noise description actually used; in missing-at-random mode `gamma`
    /// holds the estimate.
    pub noise_used: NoiseSpec,
    pub mar: Option<MarEstimate>,
    pub pilot: FitResult,
    pub n: usize,
    pub p: usize,
    pub variance_at: VarianceAt,
}

impl DebiasTable {
    pub fn gamma(&self) -> &[f64] {
        self.noise_used.gamma.as_deref().unwrap_or(&[])
    }

    pub fn targets(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.j).collect()
    }
}

fn check_dims(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma: &[f64],
    vec_len: usize,
    j: usize,
) -> Result<()> {
    let (n, p) = z.shape();
    if y.len() != n {
        return Err(Error::input("response length differs from design rows"));
    }
    if gamma.len() != p || vec_len != p {
        return Err(Error::input(
            "coefficient or gamma length differs from design columns",
        ));
    }
    if j >= p {
        return Err(Error::input(format!(
            "target index {} out of range 1..={p}",
            j + 1
        )));
    }
    Ok(())
}

/// `a_i = z_ij − z_{i,-j}ᵀ μ` (requires `mu[j] == 0`).
fn orthogonalized(z: &DMatrix<f64>, mu: &DVector<f64>, j: usize) -> DVector<f64> {
    let mut a = z.column(j).clone_owned();
    for (k, &m) in mu.iter().enumerate() {
        if k != j && m != 0.0 {
            a.axpy(-m, &z.column(k), 1.0);
        }
    }
    a
}

/// `r_i = y_i − z_{i,-j}ᵀ β̂_{-j}`.
fn nuisance_residual(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    j: usize,
) -> DVector<f64> {
    let mut r = y.clone();
    for (k, &b) in beta_hat.iter().enumerate() {
        if k != j && b != 0.0 {
            r.axpy(-b, &z.column(k), 1.0);
        }
    }
    r
}

/// `μᵀ Γ_{-j,-j} β̂_{-j}`.
fn gamma_cross_term(gamma: &[f64], mu: &DVector<f64>, beta_hat: &DVector<f64>, j: usize) -> f64 {
    (0..gamma.len())
        .filter(|&k| k != j)
        .map(|k| mu[k] * gamma[k] * beta_hat[k])
        .sum()
}

fn mean_product(a: &DVector<f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// `Σ̂_j = (1/n) Σ_i (z_ij − z_{i,-j}ᵀ μ) z_ij − γ_j`.
pub fn capital_sigma_hat(
    z: &DMatrix<f64>,
    gamma: &[f64],
    mu: &DVector<f64>,
    j: usize,
) -> Result<f64> {
    let p = z.ncols();
    if gamma.len() != p || mu.len() != p || j >= p {
        return Err(Error::input("dimension mismatch in capital_sigma_hat"));
    }
    let a = orthogonalized(z, mu, j);
    Ok(mean_product(&a, z.column(j).iter().copied()) - gamma[j])
}

/// Closed-form root of the empirical orthogonal score in `θ`.
pub fn debias_coordinate(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma: &[f64],
    beta_hat: &DVector<f64>,
    mu: &DVector<f64>,
    j: usize,
) -> Result<f64> {
    check_dims(y, z, gamma, beta_hat.len(), j)?;
    let cap = capital_sigma_hat(z, gamma, mu, j)?;
    if !(cap.abs() >= MIN_CAPITAL_SIGMA) {
        return Err(Error::degenerate(
            j,
            format!("corrected denominator Σ̂ = {cap:e} is numerically zero"),
        ));
    }
    let a = orthogonalized(z, mu, j);
    let r = nuisance_residual(y, z, beta_hat, j);
    Ok((mean_product(&a, r.iter().copied()) - gamma_cross_term(gamma, mu, beta_hat, j)) / cap)
}

/// Per-observation orthogonal score `ψ_j(y_i, z_i, θ, η̂^j)`.
pub fn score_values(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma: &[f64],
    beta_hat: &DVector<f64>,
    mu: &DVector<f64>,
    j: usize,
    theta: f64,
) -> Result<DVector<f64>> {
    check_dims(y, z, gamma, beta_hat.len(), j)?;
    let a = orthogonalized(z, mu, j);
    let r = nuisance_residual(y, z, beta_hat, j);
    let shift = gamma[j] * theta - gamma_cross_term(gamma, mu, beta_hat, j);
    Ok(DVector::from_fn(y.len(), |i, _| {
        a[i] * (r[i] - z[(i, j)] * theta) + shift
    }))
}

/// `σ̂_j² = Σ̂_j⁻² (1/n) Σ_i ψ_j²(y_i, z_i, center, η̂^j)`.
#[allow(clippy::too_many_arguments)]
pub fn variance_hat(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma: &[f64],
    center: f64,
    beta_hat: &DVector<f64>,
    mu: &DVector<f64>,
    j: usize,
    cap_sigma: f64,
) -> Result<f64> {
    if cap_sigma == 0.0 {
        return Err(Error::degenerate(j, "corrected denominator Σ̂ is zero"));
    }
    let psi = score_values(y, z, gamma, beta_hat, mu, j, center)?;
    variance_from_scores(&psi, cap_sigma).map_err(|e| e.at_coordinate(j))
}

pub(crate) fn variance_from_scores(psi: &DVector<f64>, cap_sigma: f64) -> Result<f64> {
    let mean_sq = psi.norm_squared() / psi.len() as f64;
    let v = mean_sq / (cap_sigma * cap_sigma);
    if !(v > 0.0) {
        return Err(Error::DegenerateData(
            "all scores are zero; the plug-in variance vanishes".into(),
        ));
    }
    if !v.is_finite() {
        return Err(Error::numerical("plug-in variance is not finite"));
    }
    Ok(v)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `β̌ ∓ Φ⁻¹(1 − α/2) σ̂ / √n`.
pub fn pointwise_ci(beta_check: f64, sd_hat: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if !(sd_hat > 0.0) {
        return Err(Error::input(format!(
            "standard deviation must be positive, got {sd_hat}"
        )));
    }
    if n == 0 {
        return Err(Error::input("sample size must be at least 1"));
    }
    let half = two_sided_quantile(alpha) * sd_hat / (n as f64).sqrt();
    Ok((beta_check - half, beta_check + half))
}

fn validate_targets(targets: &[usize], p: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::input("target set is empty"));
    }
    let mut seen = vec![false; p];
    for &j in targets {
        if j >= p {
            return Err(Error::input(format!(
                "target index {} out of range 1..={p}",
                j + 1
            )));
        }
        if seen[j] {
            return Err(Error::input(format!("target {} listed twice", j + 1)));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Full pipeline: resolve the noise covariance, fit the pilot once, then
/// a nodewise fit and debiased cell for every target.
pub fn run_inference(
    data: &Dataset,
    noise: &NoiseSpec,
    targets: &[usize],
    alpha: f64,
    opts: &InferenceOptions,
) -> Result<DebiasTable> {
    noise.validate(data.p())?;
    match noise.kind {
        NoiseKind::KnownDiagonal => {
            if data.missing_cells() > 0 {
                return Err(Error::input(
                    "dataset has missing cells; use missing-at-random mode",
                ));
            }
            let gamma = noise.gamma.clone().unwrap_or_default();
            infer_resolved(
                data.y(),
                data.z(),
                gamma,
                None,
                noise.kind,
                targets,
                alpha,
                opts,
            )
        }
        NoiseKind::MissingAtRandom => {
            let mar = gamma_mar::estimate(data)?;
            let gamma = mar.gamma_hat.clone();
            let z = mar.z_rescaled.clone();
            infer_resolved(
                data.y(),
                &z,
                gamma,
                Some(mar),
                noise.kind,
                targets,
                alpha,
                opts,
            )
        }
    }
}

/// Pipeline with the noise covariance already resolved. `z` is the design
/// the estimators see (rescaled in missing-at-random mode).
#[allow(clippy::too_many_arguments)]
pub fn infer_resolved(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    gamma: Vec<f64>,
    mar: Option<MarEstimate>,
    kind: NoiseKind,
    targets: &[usize],
    alpha: f64,
    opts: &InferenceOptions,
) -> Result<DebiasTable> {
    let (n, p) = z.shape();
    check_alpha(alpha)?;
    opts.tuning.validate()?;
    validate_gamma(&gamma, p)?;
    validate_targets(targets, p)?;
    if y.len() != n {
        return Err(Error::input("response length differs from design rows"));
    }

    let raw = raw_gram(z);
    let mut g = raw.clone();
    for (k, gk) in gamma.iter().enumerate() {
        g[(k, k)] -= gk;
    }
    let b = cross_moment(z, y);
    let lambda = opts.tuning.lambda(n, p);
    let pilot = opts.tuning.fit(z, y, &gamma, &g, &b, lambda)?;

    let results: Vec<Result<DebiasCell>> = targets
        .par_iter()
        .map(|&j| {
            build_cell(y, z, &raw, &gamma, &pilot.beta, lambda, j, alpha, opts)
                .map_err(|e| e.at_coordinate(j))
        })
        .collect();
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(DebiasTable {
        cells,
        alpha,
        noise_used: NoiseSpec {
            kind,
            gamma: Some(gamma),
        },
        mar,
        pilot,
        n,
        p,
        variance_at: opts.variance_at,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_cell(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    raw: &DMatrix<f64>,
    gamma: &[f64],
    beta_hat: &DVector<f64>,
    lambda: f64,
    j: usize,
    alpha: f64,
    opts: &InferenceOptions,
) -> Result<DebiasCell> {
    let node = fit_nodewise_tuned(z, raw, gamma, j, lambda, &opts.tuning)?;
    let mu = node.mu;

    let cap = capital_sigma_hat(z, gamma, &mu, j)?;
    let beta_check = debias_coordinate(y, z, gamma, beta_hat, &mu, j)?;
    let at_check = score_values(y, z, gamma, beta_hat, &mu, j, beta_check)?;
    let var = match opts.variance_at {
        VarianceAt::Debiased => variance_from_scores(&at_check, cap)?,
        VarianceAt::Pilot => variance_hat(y, z, gamma, beta_hat[j], beta_hat, &mu, j, cap)?,
    };
    let sd_hat = var.sqrt();
    let scale = -1.0 / (sd_hat * cap);
    let scores = at_check * scale;
    let (ci_low, ci_high) = pointwise_ci(beta_check, sd_hat, y.len(), alpha)?;
    Ok(DebiasCell {
        j,
        beta_check,
        sigma_hat_cap: cap,
        sd_hat,
        scores,
        ci_low,
        ci_high,
        mu,
        nodewise: node.fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (DVector<f64>, DMatrix<f64>) {
        let z = DMatrix::from_row_slice(
            5,
            2,
            &[
                0.3, 1.1, //
                -1.2, 0.4, //
                0.8, -0.6, //
                1.5, 0.9, //
                -0.4, -1.3,
            ],
        );
        let y = DVector::from_vec(vec![0.5, -1.0, 0.7, 2.1, -0.9]);
        (y, z)
    }

    /// Direct transcription of the score as `(e^j − μ)ᵀ{z_i(y_i − z_ij θ − z_{i,-j}ᵀβ̂_{-j}) + Γ(θe^j + β̂_{-j})}`.
    fn score_oracle(
        y: &DVector<f64>,
        z: &DMatrix<f64>,
        gamma: &[f64],
        beta_hat: &DVector<f64>,
        mu: &DVector<f64>,
        j: usize,
        theta: f64,
    ) -> Vec<f64> {
        let (n, p) = z.shape();
        (0..n)
            .map(|i| {
                let mut fit = 0.0;
                for k in 0..p {
                    if k != j {
                        fit += z[(i, k)] * beta_hat[k];
                    }
                }
                let resid = y[i] - z[(i, j)] * theta - fit;
                let mut total = 0.0;
                for k in 0..p {
                    let w = if k == j { 1.0 } else { -mu[k] };
                    let coef = if k == j { theta } else { beta_hat[k] };
                    total += w * (z[(i, k)] * resid + gamma[k] * coef);
                }
                total
            })
            .collect()
    }

    #[test]
    fn capital_sigma_examples() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let mu = DVector::from_vec(vec![0.0, 3.0]);
        assert!((capital_sigma_hat(&z, &[0.25, 0.0], &mu, 0).unwrap() - 0.75).abs() < 1e-15);
        let (_, z) = tiny();
        let ms = (0..5).map(|i| z[(i, 1)] * z[(i, 1)]).sum::<f64>() / 5.0;
        let zero = capital_sigma_hat(&z, &[0.0, ms], &DVector::zeros(2), 1).unwrap();
        assert!(zero.abs() < 1e-15);
    }

    #[test]
    fn capital_sigma_matches_loop() {
        let (_, z) = tiny();
        let mu = DVector::from_vec(vec![0.0, -0.35]);
        let gamma = [0.2, 0.1];
        let mut s = 0.0;
        for i in 0..5 {
            s += (z[(i, 0)] - z[(i, 1)] * mu[1]) * z[(i, 0)];
        }
        let oracle = s / 5.0 - gamma[0];
        assert!((capital_sigma_hat(&z, &gamma, &mu, 0).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn simple_regression_slope_when_nuisance_vanishes() {
        let (y, z) = tiny();
        let est = debias_coordinate(
            &y,
            &z,
            &[0.0, 0.0],
            &DVector::zeros(2),
            &DVector::zeros(2),
            1,
        )
        .unwrap();
        let num: f64 = (0..5).map(|i| z[(i, 1)] * y[i]).sum();
        let den: f64 = (0..5).map(|i| z[(i, 1)] * z[(i, 1)]).sum();
        assert!((est - num / den).abs() < 1e-14);
    }

    #[test]
    fn zero_response_zero_estimate() {
        let (_, z) = tiny();
        let est = debias_coordinate(
            &DVector::zeros(5),
            &z,
            &[0.1, 0.2],
            &DVector::zeros(2),
            &DVector::from_vec(vec![0.0, 0.4]),
            0,
        )
        .unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn closed_form_zeroes_score() {
        let (y, z) = tiny();
        let gamma = [0.15, 0.3];
        let beta_hat = DVector::from_vec(vec![0.7, -0.45]);
        let mu = DVector::from_vec(vec![0.0, 0.2]);
        let theta = debias_coordinate(&y, &z, &gamma, &beta_hat, &mu, 0).unwrap();
        let psi = score_oracle(&y, &z, &gamma, &beta_hat, &mu, 0, theta);
        let mean: f64 = psi.iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-10, "mean score {mean}");
        let ours = score_values(&y, &z, &gamma, &beta_hat, &mu, 0, theta).unwrap();
        for i in 0..5 {
            assert!((ours[i] - psi[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_matches_loop() {
        let (y, z) = tiny();
        let gamma = [0.15, 0.3];
        let beta_hat = DVector::from_vec(vec![0.7, -0.45]);
        let mu = DVector::from_vec(vec![0.2, 0.0]);
        let cap = capital_sigma_hat(&z, &gamma, &mu, 1).unwrap();
        let v = variance_hat(&y, &z, &gamma, 0.3, &beta_hat, &mu, 1, cap).unwrap();
        let psi = score_oracle(&y, &z, &gamma, &beta_hat, &mu, 1, 0.3);
        let oracle = psi.iter().map(|v| v * v).sum::<f64>() / 5.0 / (cap * cap);
        assert!((v - oracle).abs() < 1e-10);
    }

    #[test]
    fn variance_constant_and_scaling() {
        let c = 0.7;
        let psi = DVector::from_element(10, c);
        assert!((variance_from_scores(&psi, 1.0).unwrap() - c * c).abs() < 1e-15);
        let v1 = variance_from_scores(&DVector::from_vec(vec![0.3, -1.0, 0.2]), 0.8).unwrap();
        let v2 = variance_from_scores(&DVector::from_vec(vec![0.6, -2.0, 0.4]), 0.8).unwrap();
        assert!((v2 - 4.0 * v1).abs() < 1e-14);
        assert!(matches!(
            variance_from_scores(&DVector::zeros(4), 1.0),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn pointwise_interval() {
        let (lo, hi) = pointwise_ci(1.0, 2.0, 100, 0.05).unwrap();
        assert!((lo - (1.0 - 1.959_963_984_540_054 * 0.2)).abs() < 1e-9);
        assert!((hi - (1.0 + 1.959_963_984_540_054 * 0.2)).abs() < 1e-9);
        assert!((lo - 0.6080).abs() < 1e-4 && (hi - 1.3920).abs() < 1e-4);
        let w05 = pointwise_ci(0.0, 1.0, 50, 0.05).unwrap();
        let w32 = pointwise_ci(0.0, 1.0, 50, 0.32).unwrap();
        assert!(w32.1 - w32.0 < w05.1 - w05.0);
        assert!(pointwise_ci(1.0, 0.0, 10, 0.05).is_err());
        let (a, b) = pointwise_ci(1.0, 1e-300, 10, 0.05).unwrap();
        assert_eq!((a, b), (1.0, 1.0));
        assert!(matches!(
            pointwise_ci(1.0, 1.0, 10, 1.5),
            Err(Error::Input(_))
        ));
        assert!(pointwise_ci(1.0, 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn degenerate_denominator_detected() {
        // Column 0 orthogonal to column 1 and γ_0 equal to its mean square.
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 2.0, -1.0]);
        let data = Dataset::new(y, z, None).unwrap();
        let err = run_inference(
            &data,
            &NoiseSpec::known(vec![1.0, 0.0]),
            &[0],
            0.05,
            &InferenceOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Degenerate { coordinate: 0, .. }),
            "{err:?}"
        );
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn target_validation() {
        let (y, z) = tiny();
        let data = Dataset::new(y, z, None).unwrap();
        let opts = InferenceOptions::default();
        let noise = NoiseSpec::zero(2);
        assert!(run_inference(&data, &noise, &[], 0.05, &opts).is_err());
        assert!(run_inference(&data, &noise, &[2], 0.05, &opts).is_err());
        assert!(run_inference(&data, &noise, &[1, 1], 0.05, &opts).is_err());
        assert!(run_inference(&data, &noise, &[0], 1.5, &opts).is_err());
    }
}
