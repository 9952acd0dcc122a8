//! ℓ1-penalised corrected least squares.
//!
//! Minimises `½ βᵀGβ − bᵀβ + λ‖β‖₁` subject to `‖β‖₁ ≤ R`, where `G` is the
//! noise-corrected Gram matrix `ZᵀZ/n − diag(γ)`. `G` is indefinite whenever
//! the noise correction exceeds the smallest sample eigenvalue, so the side
//! constraint keeps the feasible set compact.
//!
//! The solver is proximal gradient with backtracking: a gradient step on the
//! quadratic, soft-thresholding at `tλ`, then Euclidean projection onto the
//! ℓ1 ball. Soft-thresholding followed by projection is the exact proximal
//! map of `λ‖·‖₁ + ι{‖·‖₁ ≤ R}` because the projection is itself a
//! soft-threshold.

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User-facing solver settings from which per-problem [`SolverConfig`]s
/// are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Multiplier on [`default_lambda`].
    pub lambda_scale: f64,
    /// Fixed ℓ1-ball radius; `None` uses [`default_radius`] per problem.
    pub radius: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub truncation: f64,
    /// Optional extra hard-thresholding level applied to fitted vectors.
    pub hard_threshold: Option<f64>,
    #[serde(default)]
    pub penalty: PenaltyRule,
}

/// How the penalty level of a tuned fit is resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    /// `λ = c·λ₀`.
    Fixed,
    /// `λ = c·λ₀·ŝ(β̂)` at a fixed point of `β̂ ↦ ŝ(β̂)`, with `ŝ` from
    /// [`gradient_scale`]. Starts at `β = 0` and refits until `λ` moves by
    /// less than [`SCORE_SCALE_RTOL`] relative, at most
    /// [`SCORE_SCALE_MAX_ROUNDS`] times.
    #[default]
    ScoreScaled,
}

pub const SCORE_SCALE_RTOL: f64 = 1e-3;
pub const SCORE_SCALE_MAX_ROUNDS: usize = 20;

impl Default for Tuning {
    fn default() -> Self {
        Self {
            lambda_scale: 1.0,
            radius: None,
            tol: SolverConfig::DEFAULT_TOL,
            max_iter: SolverConfig::DEFAULT_MAX_ITER,
            truncation: SolverConfig::DEFAULT_TRUNCATION,
            hard_threshold: None,
            penalty: PenaltyRule::default(),
        }
    }
}

impl Tuning {
    pub fn lambda(&self, n: usize, p: usize) -> f64 {
        self.lambda_scale * default_lambda(n, p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_scale.is_finite() && self.lambda_scale >= 0.0) {
            return Err(Error::input(format!(
                "lambda scale must be finite and >= 0, got {}",
                self.lambda_scale
            )));
        }
        if let Some(t) = self.hard_threshold {
            if !(t >= 0.0) {
                return Err(Error::input("hard threshold must be >= 0"));
            }
        }
        SolverConfig {
            lambda: 0.0,
            radius: self.radius.unwrap_or(1.0),
            tol: self.tol,
            max_iter: self.max_iter,
            truncation: self.truncation,
        }
        .validate()
    }

    /// Solver configuration for the problem `(g, b)` at penalty `lambda`.
    pub fn solver_config(&self, lambda: f64, g: &DMatrix<f64>, b: &DVector<f64>) -> SolverConfig {
        SolverConfig {
            lambda,
            radius: self.radius.unwrap_or_else(|| default_radius(g, b)),
            tol: self.tol,
            max_iter: self.max_iter,
            truncation: self.truncation,
        }
    }

    pub(crate) fn post_process(&self, mut fit: FitResult) -> FitResult {
        if let Some(t) = self.hard_threshold {
            fit.beta = hard_threshold(&fit.beta, t);
        }
        fit
    }

    /// Fit the corrected regression of `y` on `z` whose moments are `(g, b)`,
    /// resolving the penalty from `lambda0` by [`Tuning::penalty`].
    pub fn fit(
        &self,
        z: &DMatrix<f64>,
        y: &DVector<f64>,
        gamma: &[f64],
        g: &DMatrix<f64>,
        b: &DVector<f64>,
        lambda0: f64,
    ) -> Result<FitResult> {
        let cols: Vec<usize> = (0..z.ncols()).collect();
        self.fit_on(z, y.as_view(), &cols, gamma, g, b, lambda0)
    }

    /// As [`Tuning::fit`] with the design restricted to `cols` of `z`;
    /// `gamma` is indexed like the columns of `z`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fit_on(
        &self,
        z: &DMatrix<f64>,
        y: DVectorView<f64>,
        cols: &[usize],
        gamma: &[f64],
        g: &DMatrix<f64>,
        b: &DVector<f64>,
        lambda0: f64,
    ) -> Result<FitResult> {
        let mut cfg = self.solver_config(lambda0, g, b);
        let fit = match self.penalty {
            PenaltyRule::Fixed => fit_corrected_lasso(b, g, &cfg)?,
            PenaltyRule::ScoreScaled => {
                let scale = |beta: &DVector<f64>| lambda0 * scale_on(z, y, cols, gamma, beta);
                cfg.lambda = scale(&DVector::zeros(cols.len()));
                let mut fit = fit_corrected_lasso(b, g, &cfg)?;
                for _ in 1..SCORE_SCALE_MAX_ROUNDS {
                    let next = scale(&fit.beta);
                    if !next.is_finite() {
                        return Err(Error::numerical("non-finite penalty scale"));
                    }
                    if (next - cfg.lambda).abs() <= SCORE_SCALE_RTOL * cfg.lambda {
                        break;
                    }
                    cfg.lambda = next;
                    fit = fit_corrected_lasso(b, g, &cfg)?;
                }
                fit
            }
        };
        Ok(self.post_process(fit))
    }
}

/// `max_k √((1/n) Σ_i (z_ik r_i + γ_k β_k)²)` with `r = y − Zβ`: the largest
/// per-coordinate root mean square of the per-observation gradient of the
/// corrected loss.
pub fn gradient_scale(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma: &[f64],
    beta: &DVector<f64>,
) -> f64 {
    let cols: Vec<usize> = (0..z.ncols()).collect();
    scale_on(z, y.as_view(), &cols, gamma, beta)
}

fn scale_on(
    z: &DMatrix<f64>,
    y: DVectorView<f64>,
    cols: &[usize],
    gamma: &[f64],
    beta: &DVector<f64>,
) -> f64 {
    let n = z.nrows();
    let mut r = y.clone_owned();
    for (&k, &bk) in cols.iter().zip(beta.iter()) {
        if bk != 0.0 {
            r.axpy(-bk, &z.column(k), 1.0);
        }
    }
    let mut worst = 0.0f64;
    for (&k, &bk) in cols.iter().zip(beta.iter()) {
        let shift = gamma[k] * bk;
        let ms = z
            .column(k)
            .iter()
            .zip(r.iter())
            .map(|(zk, ri)| {
                let v = zk * ri + shift;
                v * v
            })
            .sum::<f64>()
            / n as f64;
        worst = worst.max(ms);
    }
    worst.sqrt()
}

/// Tuning of a single corrected-lasso fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// ℓ1-ball radius; `f64::INFINITY` disables the constraint.
    pub radius: f64,
    /// Stationarity tolerance, relative to `max(‖b‖∞, λ)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients with magnitude at or below this are zeroed on exit.
    pub truncation: f64,
}

impl SolverConfig {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITER: usize = 50_000;
    pub const DEFAULT_TRUNCATION: f64 = 1e-7;

    pub fn new(lambda: f64, radius: f64) -> Self {
        Self {
            lambda,
            radius,
            tol: Self::DEFAULT_TOL,
            max_iter: Self::DEFAULT_MAX_ITER,
            truncation: Self::DEFAULT_TRUNCATION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::input(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::input(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::input(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::input("max_iter must be at least 1"));
        }
        if !(self.truncation >= 0.0) {
            return Err(Error::input(format!(
                "truncation must be >= 0, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative stationarity residual at the returned point.
    pub kkt_residual: f64,
    pub lambda: f64,
    pub radius: f64,
}

/// `ZᵀZ/n − diag(γ)`, symmetrised exactly.
pub fn corrected_gram(z: &DMatrix<f64>, gamma: &[f64]) -> Result<DMatrix<f64>> {
    let (n, p) = z.shape();
    if gamma.len() != p {
        return Err(Error::input(format!(
            "gamma has length {} but design has {p} columns",
            gamma.len()
        )));
    }
    if n == 0 {
        return Err(Error::input("design has no rows"));
    }
    if gamma.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::input("gamma entries must be nonnegative"));
    }
    let mut g = z.tr_mul(z) / n as f64;
    symmetrize(&mut g);
    for (k, gk) in gamma.iter().enumerate() {
        g[(k, k)] -= gk;
    }
    Ok(g)
}

pub(crate) fn symmetrize(g: &mut DMatrix<f64>) {
    let p = g.nrows();
    for c in 0..p {
        for r in (c + 1)..p {
            let avg = 0.5 * (g[(r, c)] + g[(c, r)]);
            g[(r, c)] = avg;
            g[(c, r)] = avg;
        }
    }
}

/// `Zᵀy/n`.
pub fn cross_moment(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    z.tr_mul(y) / z.nrows() as f64
}

/// `√(log(p / 0.05) / n)`.
pub fn default_lambda(n: usize, p: usize) -> f64 {
    ((p as f64 / 0.05).ln() / n as f64).sqrt()
}

/// Twice the ℓ1 norm of the ridge pilot `(G₊ + I)⁻¹ b`, where `G₊` floors the
/// negative eigenvalues of `G` at zero.
pub fn default_radius(g: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    if g.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(g.clone());
    let coords = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, ev)| c / (ev.max(0.0) + 1.0)),
    );
    let ridge = &eig.eigenvectors * scaled;
    let r = 2.0 * ridge.lp_norm(1);
    if r > 0.0 && r.is_finite() {
        r
    } else {
        f64::MIN_POSITIVE
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Entry `k` is kept when `|beta_k| > t` and zeroed otherwise.
pub fn hard_threshold(beta: &DVector<f64>, t: f64) -> DVector<f64> {
    beta.map(|b| if b.abs() > t { b } else { 0.0 })
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}` by the sorting method.
/// Ties in magnitude are ordered by coordinate index.
pub fn project_l1_ball(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    if !radius.is_finite() || v.lp_norm(1) <= radius {
        return v.clone();
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        let u = v[k].abs();
        cumsum += u;
        let candidate = (cumsum - radius) / (rank + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    v.map(|x| soft_threshold(x, theta))
}

fn prox(v: &DVector<f64>, thresh: f64, radius: f64) -> DVector<f64> {
    let shrunk = v.map(|x| soft_threshold(x, thresh));
    project_l1_ball(&shrunk, radius)
}

/// Largest absolute eigenvalue estimate from 20 power steps started at the
/// all-ones vector, falling back to the Frobenius norm when the start is
/// (nearly) orthogonal to the dominant eigenspace.
fn lipschitz_estimate(g: &DMatrix<f64>) -> f64 {
    let p = g.nrows();
    let fro = g.norm();
    if fro == 0.0 {
        return 1.0;
    }
    let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..20 {
        let w = g * &v;
        est = w.norm();
        if est == 0.0 {
            break;
        }
        v = w / est;
    }
    if est < 1e-8 * fro {
        fro
    } else {
        est
    }
}

/// Dense `G·β` restricted to the nonzero coordinates of `β`.
fn sparse_matvec(g: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(g.nrows());
    for (k, &bk) in beta.iter().enumerate() {
        if bk != 0.0 {
            out.axpy(bk, &g.column(k), 1.0);
        }
    }
    out
}

fn objective_value(beta: &DVector<f64>, grad: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    // grad = Gβ − b, so ½βᵀGβ − bᵀβ = ½βᵀ(grad − b).
    0.5 * beta.dot(&(grad - b)) + lambda * beta.lp_norm(1)
}

fn residual_scale(b: &DVector<f64>, lambda: f64) -> f64 {
    let s = b.amax().max(lambda);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Absolute stationarity residual: the ℓ∞ norm of the minimum-norm element
/// of `Gβ − b + (λ + ν)∂‖β‖₁`, with `ν ≥ 0` the ball multiplier fitted on the
/// support when the constraint is active (`ν = 0` otherwise).
pub fn stationarity_residual(
    grad: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
    radius: f64,
) -> f64 {
    let l1 = beta.lp_norm(1);
    let active = radius.is_finite() && l1 >= radius * (1.0 - 1e-10);
    let mut nu = 0.0;
    if active {
        let (sum, count) = beta
            .iter()
            .zip(grad.iter())
            .filter(|(b, _)| **b != 0.0)
            .fold((0.0, 0usize), |(s, c), (b, g)| (s - g * b.signum(), c + 1));
        if count > 0 {
            nu = (sum / count as f64 - lambda).max(0.0);
        } else {
            nu = f64::INFINITY;
        }
    }
    let eff = lambda + nu;
    beta.iter()
        .zip(grad.iter())
        .map(|(&b, &g)| {
            if b != 0.0 {
                (g + eff * b.signum()).abs()
            } else {
                (g.abs() - eff).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimise `½βᵀGβ − bᵀβ + λ‖β‖₁` over `‖β‖₁ ≤ R`, starting from zero.
pub fn fit_corrected_lasso(
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    solve(b, g, cfg, None)
}

/// As [`fit_corrected_lasso`], also returning the objective at every
/// accepted iterate (starting with the objective at zero).
pub fn fit_corrected_lasso_traced(
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<(FitResult, Vec<f64>)> {
    let mut trace = Vec::new();
    let fit = solve(b, g, cfg, Some(&mut trace))?;
    Ok((fit, trace))
}

fn solve(
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<FitResult> {
    cfg.validate()?;
    let p = b.len();
    if g.shape() != (p, p) {
        return Err(Error::input(format!(
            "gram is {}x{} but linear term has length {p}",
            g.nrows(),
            g.ncols()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "non-finite entries in corrected-lasso inputs",
        ));
    }
    let lambda = cfg.lambda;
    if p == 0 {
        return Ok(FitResult {
            beta: DVector::zeros(0),
            objective: 0.0,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            lambda,
            radius: cfg.radius,
        });
    }
    let scale = residual_scale(b, lambda);

    let mut beta = DVector::zeros(p);
    let mut grad = -b;
    let mut obj = 0.0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(obj);
    }
    let mut residual = stationarity_residual(&grad, &beta, lambda, cfg.radius) / scale;
    let mut converged = residual <= cfg.tol;
    let mut iterations = 0;
    let mut step = 1.0 / lipschitz_estimate(g);

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let mut halvings = 0;
        let (cand, cand_grad) = loop {
            let cand = prox(&(&beta - &grad * step), step * lambda, cfg.radius);
            let d = &cand - &beta;
            let dd = d.norm_squared();
            let cand_grad = sparse_matvec(g, &cand) - b;
            if dd == 0.0 {
                break (cand, cand_grad);
            }
            let d_gd = d.dot(&(&cand_grad - &grad));
            if step * d_gd <= dd * (1.0 + 1e-12) {
                break (cand, cand_grad);
            }
            step *= 0.5;
            halvings += 1;
            if halvings > 100 {
                return Err(Error::numerical(
                    "backtracking failed to find a descent step",
                ));
            }
        };
        let stalled = cand == beta;
        beta = cand;
        grad = cand_grad;
        obj = objective_value(&beta, &grad, b, lambda);
        if !obj.is_finite() {
            return Err(Error::numerical("objective became non-finite"));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj);
        }
        residual = stationarity_residual(&grad, &beta, lambda, cfg.radius) / scale;
        converged = residual <= cfg.tol;
        if stalled {
            break;
        }
    }

    if cfg.truncation > 0.0 && beta.iter().any(|v| *v != 0.0 && v.abs() <= cfg.truncation) {
        beta = hard_threshold(&beta, cfg.truncation);
        grad = sparse_matvec(g, &beta) - b;
        obj = objective_value(&beta, &grad, b, lambda);
        residual = stationarity_residual(&grad, &beta, lambda, cfg.radius) / scale;
        converged = converged && residual <= cfg.tol;
    }

    Ok(FitResult {
        beta,
        objective: obj,
        iterations,
        converged,
        kkt_residual: residual,
        lambda,
        radius: cfg.radius,
    })
}
