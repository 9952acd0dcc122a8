//! Observed data and measurement-noise descriptions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response `y` and observed design `Z` (n × p), with an optional
/// observation mask (`true` = observed) for the missing-at-random model.
///
/// Missing cells are stored as `0.0` in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    z: DMatrix<f64>,
    mask: Option<DMatrix<bool>>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DMatrix<f64>, mask: Option<DMatrix<bool>>) -> Result<Self> {
        let (n, p) = z.shape();
        if y.len() != n {
            return Err(Error::input(format!(
                "response has {} rows but design has {n}",
                y.len()
            )));
        }
        if n < 2 {
            return Err(Error::input(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if p < 1 {
            return Err(Error::input("design has no covariates"));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!(
                "response row {} is not finite ({v})",
                i + 1
            )));
        }
        if let Some(m) = &mask {
            if m.shape() != (n, p) {
                return Err(Error::input("mask shape differs from design shape"));
            }
        }
        let mut z = z;
        for c in 0..p {
            for r in 0..n {
                let observed = mask.as_ref().map_or(true, |m| m[(r, c)]);
                if observed {
                    if !z[(r, c)].is_finite() {
                        return Err(Error::input(format!(
                            "design cell (row {}, covariate {}) is not finite",
                            r + 1,
                            c + 1
                        )));
                    }
                } else {
                    z[(r, c)] = 0.0;
                }
            }
        }
        Ok(Self { y, z, mask })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn mask(&self) -> Option<&DMatrix<bool>> {
        self.mask.as_ref()
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn missing_cells(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&o| !o).count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    KnownDiagonal,
    MissingAtRandom,
}

/// Diagonal measurement-noise covariance: either known, or estimated from
/// the missingness pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub gamma: Option<Vec<f64>>,
}

impl NoiseSpec {
    pub fn known(gamma: Vec<f64>) -> Self {
        Self {
            kind: NoiseKind::KnownDiagonal,
            gamma: Some(gamma),
        }
    }

    pub fn zero(p: usize) -> Self {
        Self::known(vec![0.0; p])
    }

    pub fn missing_at_random() -> Self {
        Self {
            kind: NoiseKind::MissingAtRandom,
            gamma: None,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match (self.kind, &self.gamma) {
            (NoiseKind::KnownDiagonal, Some(g)) => validate_gamma(g, p),
            (NoiseKind::KnownDiagonal, None) => {
                Err(Error::input("known-diagonal noise requires a gamma vector"))
            }
            (NoiseKind::MissingAtRandom, None) => Ok(()),
            (NoiseKind::MissingAtRandom, Some(_)) => Err(Error::input(
                "missing-at-random noise is estimated; gamma must not be supplied",
            )),
        }
    }
}

pub(crate) fn validate_gamma(gamma: &[f64], p: usize) -> Result<()> {
    if gamma.len() != p {
        return Err(Error::input(format!(
            "gamma has length {} but there are {p} covariates",
            gamma.len()
        )));
    }
    if let Some((k, g)) = gamma
        .iter()
        .enumerate()
        .find(|(_, g)| !(g.is_finite() && **g >= 0.0))
    {
        return Err(Error::input(format!(
            "gamma entry {} must be finite and nonnegative, got {g}",
            k + 1
        )));
    }
    Ok(())
}
