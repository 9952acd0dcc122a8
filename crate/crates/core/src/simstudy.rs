//! Monte Carlo size and family-wise error studies.
//!
//! Data follow `y = xᵀβ₀ + ξ`, `z = x + w` with `x ~ N(0, Ω)`,
//! `Ω_ij = ρ^|i−j|`, `w ~ N(0, σ_w² I)` and `ξ ~ N(0, σ_ξ²)`. In
//! missing-at-random mode `w` is replaced by masking each cell of `x`
//! independently with probability `π`.
//!
//! Every replication draws from its own counter streams keyed by
//! `(seed, rep)`, so a study gives the same report for any worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::simultaneous_bands;
use crate::data::{Dataset, NoiseSpec};
use crate::debias::{check_alpha, run_inference, DebiasTable, InferenceOptions};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, domain, Stream};

/// Replications are allowed to fail up to this fraction.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Noise-corrected estimation with the true (or estimated) `Γ`.
    Eiv,
    /// Ordinary lasso steps and `Γ = 0` throughout.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseMode {
    KnownGamma,
    Mar { pi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub sigma_w: f64,
    pub sigma_xi: f64,
    pub omega_rho: f64,
    pub beta0: Vec<f64>,
    /// Tested coordinates (0-based) and their null values.
    pub targets: Vec<usize>,
    pub nulls: Vec<f64>,
    pub replications: usize,
    pub method: Method,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    pub alpha: f64,
    pub boot: usize,
    pub options: InferenceOptions,
}

pub const DESK_N: usize = 200;
pub const DESK_P: usize = 120;
pub const DESK_REPLICATIONS: usize = 250;
pub const DESK_BOOT: usize = 500;
pub const FULL_N: usize = 350;
pub const FULL_P: usize = 300;
pub const FULL_REPLICATIONS: usize = 500;

impl SimConfig {
    fn base(n: usize, p: usize, sigma_w: f64, method: Method, replications: usize) -> Self {
        Self {
            n,
            p,
            sigma_w,
            sigma_xi: 1.0,
            omega_rho: 0.5,
            beta0: vec![0.0; p],
            targets: vec![],
            nulls: vec![],
            replications,
            method,
            noise_mode: NoiseMode::KnownGamma,
            seed: 0,
            alpha: 0.05,
            boot: DESK_BOOT,
            options: InferenceOptions::default(),
        }
    }

    /// Target `β₀₁ = target_value` tested at its true value, with nuisance
    /// ones at coordinates 6..=10.
    pub fn single_target(
        n: usize,
        p: usize,
        sigma_w: f64,
        target_value: f64,
        method: Method,
        replications: usize,
    ) -> Self {
        let mut cfg = Self::base(n, p, sigma_w, method, replications);
        cfg.beta0[0] = target_value;
        for k in 5..10.min(p) {
            cfg.beta0[k] = 1.0;
        }
        cfg.targets = vec![0];
        cfg.nulls = vec![target_value];
        cfg
    }

    /// Joint null `β₀k = 0` for k = 1..=10 with signal ones at 16..=20.
    pub fn multi_target(
        n: usize,
        p: usize,
        sigma_w: f64,
        method: Method,
        replications: usize,
    ) -> Self {
        let mut cfg = Self::base(n, p, sigma_w, method, replications);
        for k in 15..20.min(p) {
            cfg.beta0[k] = 1.0;
        }
        cfg.targets = (0..10.min(p)).collect();
        cfg.nulls = vec![0.0; cfg.targets.len()];
        cfg
    }

    pub fn desk_single(target_value: f64, method: Method) -> Self {
        Self::single_target(DESK_N, DESK_P, 1.0, target_value, method, DESK_REPLICATIONS)
    }

    pub fn desk_multi(method: Method) -> Self {
        Self::multi_target(DESK_N, DESK_P, 1.0, method, DESK_REPLICATIONS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::input("replications must be at least 1"));
        }
        if self.n < 2 || self.p < 2 {
            return Err(Error::input("simulation needs n >= 2 and p >= 2"));
        }
        if !(self.sigma_xi > 0.0) {
            return Err(Error::input("sigma_xi must be positive"));
        }
        if !(self.sigma_w >= 0.0) {
            return Err(Error::input("sigma_w must be nonnegative"));
        }
        if !(self.omega_rho > -1.0 && self.omega_rho < 1.0) {
            return Err(Error::input("omega_rho must lie in (-1, 1)"));
        }
        if self.beta0.len() != self.p {
            return Err(Error::input("beta0 length differs from p"));
        }
        if self.targets.is_empty() || self.targets.len() != self.nulls.len() {
            return Err(Error::input(
                "targets and nulls must be nonempty and of equal length",
            ));
        }
        if self.targets.iter().any(|&j| j >= self.p) {
            return Err(Error::input("target index out of range"));
        }
        if let NoiseMode::Mar { pi } = self.noise_mode {
            if !(0.0..1.0).contains(&pi) {
                return Err(Error::input("missingness probability must lie in [0, 1)"));
            }
        }
        if self.boot == 0 {
            return Err(Error::input("bootstrap draws must be at least 1"));
        }
        check_alpha(self.alpha)?;
        self.options.tuning.validate()
    }

    /// `Γ_jj` implied by the design.
    pub fn true_gamma(&self) -> f64 {
        match self.noise_mode {
            NoiseMode::KnownGamma => self.sigma_w * self.sigma_w,
            NoiseMode::Mar { pi } => pi / (1.0 - pi),
        }
    }
}

/// Unobserved quantities of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub x: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub beta0: Vec<f64>,
}

/// Lower Cholesky factor of `Ω_ij = ρ^|i−j|`.
pub fn toeplitz_cholesky(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let omega = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    omega.cholesky().map(|c| c.l()).ok_or_else(|| {
        Error::numerical(format!(
            "Toeplitz covariance with rho = {rho} is not positive definite"
        ))
    })
}

/// Draws replications of one configuration; holds the Cholesky factor.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    chol: DMatrix<f64>,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            chol: toeplitz_cholesky(cfg.p, cfg.omega_rho)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn generate(&self, rep: usize) -> Result<(Dataset, SimTruth)> {
        let cfg = &self.cfg;
        let (n, p) = (cfg.n, cfg.p);
        let rep = rep as u64;
        let mut x = DMatrix::zeros(n, p);
        let mut e = DVector::zeros(p);
        for i in 0..n {
            Stream::new(cfg.seed, domain::SIM_DESIGN, [rep, i as u64])
                .fill_normal(e.as_mut_slice());
            let row = &self.chol * &e;
            x.set_row(i, &row.transpose());
        }
        let mut xi = DVector::zeros(n);
        Stream::new(cfg.seed, domain::SIM_RESPONSE, [rep, 0]).fill_normal(xi.as_mut_slice());
        xi *= cfg.sigma_xi;
        let beta0 = DVector::from_column_slice(&cfg.beta0);
        let y = &x * &beta0 + &xi;

        let (z, mask) = match cfg.noise_mode {
            NoiseMode::KnownGamma => {
                let mut z = x.clone();
                if cfg.sigma_w > 0.0 {
                    for i in 0..n {
                        let mut s = Stream::new(cfg.seed, domain::SIM_NOISE, [rep, i as u64]);
                        for k in 0..p {
                            z[(i, k)] += cfg.sigma_w * s.normal();
                        }
                    }
                }
                (z, None)
            }
            NoiseMode::Mar { pi } => {
                let mut z = x.clone();
                let mut mask = DMatrix::from_element(n, p, true);
                for i in 0..n {
                    let mut s = Stream::new(cfg.seed, domain::SIM_MASK, [rep, i as u64]);
                    for k in 0..p {
                        if s.uniform() < pi {
                            mask[(i, k)] = false;
                            z[(i, k)] = 0.0;
                        }
                    }
                }
                (z, Some(mask))
            }
        };
        let data = Dataset::new(y, z, mask)?;
        Ok((
            data,
            SimTruth {
                x,
                xi,
                beta0: cfg.beta0.clone(),
            },
        ))
    }
}

/// One replication of `cfg`, fully determined by `(cfg.seed, rep)`.
pub fn generate(cfg: &SimConfig, rep: usize) -> Result<(Dataset, SimTruth)> {
    Simulator::new(cfg)?.generate(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub reject: bool,
    pub estimates: Vec<f64>,
    /// `β̌_j − β₀j` at each target.
    pub errors: Vec<f64>,
    pub sd_hats: Vec<f64>,
    /// `√n (β̌_j − null_j) / σ̂_j`.
    pub t_stats: Vec<f64>,
    /// Bootstrap critical value, multi-target studies only.
    pub c_star: Option<f64>,
    /// `max_j |Γ̂_jj − Γ_jj|`, estimated-noise studies only.
    pub gamma_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Rejection rate: size for one target, FWER for several.
    pub size_or_fwer: f64,
    pub mean_bias: f64,
    pub replications_completed: usize,
    pub std_error: f64,
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
}

/// Run inference for one generated dataset and evaluate the configured test.
pub fn run_replication(sim: &Simulator, rep: usize) -> Result<RepRecord> {
    let cfg = sim.config();
    let (data, truth) = sim.generate(rep)?;
    let table = infer_for(cfg, &data)?;
    let root_n = (cfg.n as f64).sqrt();

    let estimates: Vec<f64> = table.cells.iter().map(|c| c.beta_check).collect();
    let sd_hats: Vec<f64> = table.cells.iter().map(|c| c.sd_hat).collect();
    let errors = cfg
        .targets
        .iter()
        .zip(&estimates)
        .map(|(&j, b)| b - truth.beta0[j])
        .collect();
    let t_stats = estimates
        .iter()
        .zip(&sd_hats)
        .zip(&cfg.nulls)
        .map(|((b, s), null)| root_n * (b - null) / s)
        .collect();

    let (reject, c_star) = if cfg.targets.len() == 1 {
        let cell = &table.cells[0];
        let null = cfg.nulls[0];
        (!(cell.ci_low <= null && null <= cell.ci_high), None)
    } else {
        let seed = derive_seed(cfg.seed, domain::SIM_SEEDS, rep as u64);
        let band = simultaneous_bands(&table, cfg.boot, seed)?;
        let outside = band
            .intervals
            .iter()
            .zip(&cfg.nulls)
            .any(|(&(lo, hi), &null)| !(lo <= null && null <= hi));
        (outside, Some(band.c_star))
    };

    let gamma_error = match (cfg.noise_mode, cfg.method) {
        (NoiseMode::Mar { .. }, Method::Eiv) => {
            let truth_gamma = cfg.true_gamma();
            Some(
                table
                    .gamma()
                    .iter()
                    .map(|g| (g - truth_gamma).abs())
                    .fold(0.0, f64::max),
            )
        }
        _ => None,
    };

    Ok(RepRecord {
        rep,
        reject,
        estimates,
        errors,
        sd_hats,
        t_stats,
        c_star,
        gamma_error,
    })
}

fn infer_for(cfg: &SimConfig, data: &Dataset) -> Result<DebiasTable> {
    let noise = match (cfg.method, cfg.noise_mode) {
        (Method::Naive, _) => NoiseSpec::zero(cfg.p),
        (Method::Eiv, NoiseMode::KnownGamma) => {
            NoiseSpec::known(vec![cfg.sigma_w * cfg.sigma_w; cfg.p])
        }
        (Method::Eiv, NoiseMode::Mar { .. }) => NoiseSpec::missing_at_random(),
    };
    let data = match cfg.method {
        Method::Naive => data.clone().without_mask(),
        Method::Eiv => data.clone(),
    };
    run_inference(&data, &noise, &cfg.targets, cfg.alpha, &cfg.options)
}

/// Run all replications and aggregate.
pub fn run_study(cfg: &SimConfig) -> Result<SimReport> {
    let sim = Simulator::new(cfg)?;
    let outcomes: Vec<Result<RepRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(&sim, rep))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(RepFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * cfg.replications as f64 {
        return Err(Error::numerical(format!(
            "{} of {} replications failed (first: replication {}: {})",
            failures.len(),
            cfg.replications,
            failures[0].rep,
            failures[0].message
        )));
    }
    Ok(summarize(records, failures))
}

pub fn summarize(records: Vec<RepRecord>, failures: Vec<RepFailure>) -> SimReport {
    let completed = records.len();
    let rejections = records.iter().filter(|r| r.reject).count();
    let rate = if completed > 0 {
        rejections as f64 / completed as f64
    } else {
        f64::NAN
    };
    let (bias_sum, bias_count) = records
        .iter()
        .flat_map(|r| r.errors.iter())
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    SimReport {
        size_or_fwer: rate,
        mean_bias: bias_sum / bias_count as f64,
        replications_completed: completed,
        std_error: (rate * (1.0 - rate) / completed as f64).sqrt(),
        records,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let s = SimConfig::desk_single(1.0, Method::Eiv);
        assert_eq!((s.n, s.p, s.replications), (200, 120, 250));
        assert_eq!(s.beta0[0], 1.0);
        assert_eq!(s.beta0[5..10], [1.0; 5]);
        assert_eq!(s.beta0.iter().filter(|b| **b != 0.0).count(), 6);
        let m = SimConfig::desk_multi(Method::Eiv);
        assert_eq!(m.targets, (0..10).collect::<Vec<_>>());
        assert_eq!(m.beta0[15..20], [1.0; 5]);
        assert_eq!(m.beta0.iter().filter(|b| **b != 0.0).count(), 5);
    }

    #[test]
    fn zero_replications_rejected() {
        let mut cfg = SimConfig::single_target(20, 5, 0.5, 1.0, Method::Eiv, 1);
        cfg.replications = 0;
        assert!(matches!(run_study(&cfg), Err(Error::Input(_))));
    }

    #[test]
    fn no_measurement_error_means_z_equals_x() {
        let cfg = SimConfig::single_target(30, 6, 0.0, 1.0, Method::Eiv, 1);
        let (data, truth) = generate(&cfg, 3).unwrap();
        assert_eq!(data.z(), &truth.x);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig::single_target(25, 8, 0.5, 0.5, Method::Eiv, 1);
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn cholesky_failure_is_numerical() {
        assert!(matches!(
            toeplitz_cholesky(200, 1.0 - 1e-17),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn summary_arithmetic() {
        let rec = |reject, e: f64| RepRecord {
            rep: 0,
            reject,
            estimates: vec![e],
            errors: vec![e],
            sd_hats: vec![1.0],
            t_stats: vec![0.0],
            c_star: None,
            gamma_error: None,
        };
        let report = summarize(
            vec![
                rec(true, 0.5),
                rec(false, -0.1),
                rec(false, 0.2),
                rec(false, 0.0),
            ],
            vec![],
        );
        assert_eq!(report.size_or_fwer, 0.25);
        assert!((report.mean_bias - 0.15).abs() < 1e-15);
        assert!((report.std_error - (0.25f64 * 0.75 / 4.0).sqrt()).abs() < 1e-15);
    }
}
