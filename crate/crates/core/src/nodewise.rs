//! Orthogonalisation directions from nodewise corrected regressions.
//!
//! For target `j`, `μ^j` solves the errors-in-variables regression of `z_j`
//! on `z_{-j}`. Because the noise covariance is diagonal, only `Γ_{-j,-j}`
//! enters the correction; the target's own `γ_j` does not.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::eiv_lasso::{fit_corrected_lasso, symmetrize, FitResult, SolverConfig, Tuning};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NodewiseResult {
    pub j: usize,
    /// Direction embedded in all `p` coordinates, with `mu[j] == 0`.
    pub mu: DVector<f64>,
    pub fit: FitResult,
}

/// Uncorrected second-moment matrix `ZᵀZ/n`, exactly symmetric.
pub fn raw_gram(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = z.tr_mul(z) / z.nrows() as f64;
    symmetrize(&mut g);
    g
}

/// Corrected Gram and linear term of the nodewise problem for `j`:
/// `G = C_{-j,-j} − diag(γ_{-j})`, `b = C_{-j,j}` with `C = ZᵀZ/n`.
pub fn nodewise_problem(
    raw: &DMatrix<f64>,
    gamma: &[f64],
    j: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = raw.nrows();
    if j >= p {
        return Err(Error::input(format!(
            "target index {} out of range 1..={p}",
            j + 1
        )));
    }
    if gamma.len() != p {
        return Err(Error::input(format!(
            "gamma has length {} but there are {p} covariates",
            gamma.len()
        )));
    }
    let keep: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let m = keep.len();
    let mut g = DMatrix::from_fn(m, m, |r, c| raw[(keep[r], keep[c])]);
    for (r, &k) in keep.iter().enumerate() {
        g[(r, r)] -= gamma[k];
    }
    let b = DVector::from_fn(m, |r, _| raw[(keep[r], j)]);
    Ok((g, b))
}

fn embed(sub: &DVector<f64>, j: usize) -> DVector<f64> {
    let p = sub.len() + 1;
    DVector::from_fn(p, |k, _| match k.cmp(&j) {
        std::cmp::Ordering::Less => sub[k],
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Greater => sub[k - 1],
    })
}

/// Nodewise fit for coordinate `j` (0-based) with a fixed solver config.
pub fn fit_nodewise(
    data: &Dataset,
    gamma: &[f64],
    j: usize,
    cfg: &SolverConfig,
) -> Result<NodewiseResult> {
    let raw = raw_gram(data.z());
    fit_nodewise_from_gram(&raw, gamma, j, cfg)
}

/// As [`fit_nodewise`], reusing a precomputed `ZᵀZ/n`.
pub fn fit_nodewise_from_gram(
    raw: &DMatrix<f64>,
    gamma: &[f64],
    j: usize,
    cfg: &SolverConfig,
) -> Result<NodewiseResult> {
    let (g, b) = nodewise_problem(raw, gamma, j)?;
    let fit = fit_corrected_lasso(&b, &g, cfg)?;
    Ok(NodewiseResult {
        j,
        mu: embed(&fit.beta, j),
        fit,
    })
}

/// Nodewise fit for `j` with the penalty resolved by `tuning` from `lambda0`.
pub fn fit_nodewise_tuned(
    z: &DMatrix<f64>,
    raw: &DMatrix<f64>,
    gamma: &[f64],
    j: usize,
    lambda0: f64,
    tuning: &Tuning,
) -> Result<NodewiseResult> {
    let (g, b) = nodewise_problem(raw, gamma, j)?;
    let cols: Vec<usize> = (0..z.ncols()).filter(|&k| k != j).collect();
    let fit = tuning.fit_on(z, z.column(j), &cols, gamma, &g, &b, lambda0)?;
    Ok(NodewiseResult {
        j,
        mu: embed(&fit.beta, j),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(z: DMatrix<f64>) -> Dataset {
        let n = z.nrows();
        Dataset::new(DVector::zeros(n), z, None).unwrap()
    }

    fn unpenalised() -> SolverConfig {
        let mut cfg = SolverConfig::new(0.0, f64::INFINITY);
        cfg.tol = 1e-13;
        cfg
    }

    #[test]
    fn two_covariates_closed_form() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, -0.4, 2.0, 0.9]);
        let gamma = [0.3, 0.1];
        let res = fit_nodewise(&data(z.clone()), &gamma, 0, &unpenalised()).unwrap();
        let n = 4.0;
        let (mut s12, mut s22) = (0.0, 0.0);
        for i in 0..4 {
            s12 += z[(i, 0)] * z[(i, 1)];
            s22 += z[(i, 1)] * z[(i, 1)];
        }
        let expected = (s12 / n) / (s22 / n - gamma[1]);
        assert_eq!(res.mu[0], 0.0);
        assert!((res.mu[1] - expected).abs() < 1e-10);
    }

    #[test]
    fn duplicated_column_reproduced() {
        let col = [1.0, -2.0, 0.5, 3.0];
        let z = DMatrix::from_fn(4, 2, |i, _| col[i]);
        let res = fit_nodewise(&data(z), &[0.0, 0.0], 1, &unpenalised()).unwrap();
        assert!((res.mu[0] - 1.0).abs() < 1e-10);
        assert_eq!(res.mu[1], 0.0);
    }

    #[test]
    fn orthogonal_columns_give_zero() {
        let z = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 1.0, //
                -1.0, 1.0, -1.0, //
                1.0, -1.0, -1.0, //
                -1.0, -1.0, 1.0,
            ],
        );
        let res = fit_nodewise(&data(z), &[0.0; 3], 2, &SolverConfig::new(1.0, 10.0)).unwrap();
        assert!(res.mu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_covariate_has_empty_direction() {
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let res = fit_nodewise(&data(z), &[0.0], 0, &SolverConfig::new(0.1, 1.0)).unwrap();
        assert_eq!(res.mu.len(), 1);
        assert_eq!(res.mu[0], 0.0);
    }

    #[test]
    fn invalid_index() {
        let z = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            fit_nodewise(&data(z), &[0.0, 0.0], 2, &SolverConfig::new(0.1, 1.0)),
            Err(Error::Input(_))
        ));
    }
}
