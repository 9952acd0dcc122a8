//! Edge inference for Gaussian graphical models observed with noise.
//!
//! Node `j` is regressed on all other nodes with the errors-in-variables
//! pipeline; coefficient `k` of that regression is the directed edge
//! `(j, k)`. A zero coefficient corresponds to conditional independence of
//! the pair. Bands are simultaneous over every reported edge, using one
//! bootstrap over the stacked standardized scores of all node regressions.

use nalgebra::{DMatrix, DVector};

use crate::bootstrap::{bands_from_scores, bootstrap_scores, BandResult};
use crate::data::{validate_gamma, NoiseKind, NoiseSpec};
use crate::debias::{infer_resolved, DebiasTable, InferenceOptions};
use crate::error::{Error, Result};
use crate::gamma_mar::{self, MarEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Regressed node (0-based).
    pub from: usize,
    /// Covariate node (0-based).
    pub to: usize,
    pub estimate: f64,
    pub sd_hat: f64,
    pub ci: (f64, f64),
    pub band: (f64, f64),
    pub zero_in_band: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphResult {
    pub edges: Vec<Edge>,
    pub band: BandResult,
    pub tables: Vec<DebiasTable>,
    pub gamma: Vec<f64>,
    pub pi_hat: Option<f64>,
}

fn drop_column(m: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    m.clone().remove_column(j)
}

fn drop_entry(v: &[f64], j: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, x)| *x)
        .collect()
}

/// Regress every node in `nodes` on the rest and band all resulting edges.
#[allow(clippy::too_many_arguments)]
pub fn run_graph(
    z: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
    noise: &NoiseSpec,
    nodes: &[usize],
    alpha: f64,
    opts: &InferenceOptions,
    n_draws: usize,
    seed: u64,
) -> Result<GraphResult> {
    let (n, p) = z.shape();
    if p < 2 {
        return Err(Error::input("graph mode needs at least 2 nodes"));
    }
    if nodes.is_empty() {
        return Err(Error::input("node set is empty"));
    }
    let mut seen = vec![false; p];
    for &j in nodes {
        if j >= p || seen[j] {
            return Err(Error::input(format!("invalid or repeated node {}", j + 1)));
        }
        seen[j] = true;
    }
    noise.validate(p)?;

    let (design, gamma, mar): (DMatrix<f64>, Vec<f64>, Option<MarEstimate>) = match noise.kind {
        NoiseKind::KnownDiagonal => {
            if mask.is_some_and(|m| m.iter().any(|o| !o)) {
                return Err(Error::input(
                    "dataset has missing cells; use missing-at-random mode",
                ));
            }
            let g = noise.gamma.clone().unwrap_or_default();
            validate_gamma(&g, p)?;
            (z.clone(), g, None)
        }
        NoiseKind::MissingAtRandom => {
            let mask =
                mask.ok_or_else(|| Error::input("missing-at-random mode requires a mask"))?;
            let pi_hat = gamma_mar::estimate_pi(mask)?;
            let est = MarEstimate {
                pi_hat,
                gamma_hat: gamma_mar::gamma_hat(z, pi_hat)?,
                phi: gamma_mar::phi_scores(z, pi_hat)?,
                z_rescaled: gamma_mar::rescale_design(z, pi_hat)?,
            };
            (est.z_rescaled.clone(), est.gamma_hat.clone(), Some(est))
        }
    };

    let mut tables = Vec::with_capacity(nodes.len());
    for &j in nodes {
        let y: DVector<f64> = design.column(j).clone_owned();
        let zj = drop_column(&design, j);
        let gj = drop_entry(&gamma, j);
        let mar_j = mar.as_ref().map(|m| MarEstimate {
            pi_hat: m.pi_hat,
            gamma_hat: gj.clone(),
            phi: drop_column(&m.phi, j),
            z_rescaled: zj.clone(),
        });
        let targets: Vec<usize> = (0..p - 1).collect();
        let table =
            infer_resolved(&y, &zj, gj, mar_j, noise.kind, &targets, alpha, opts).map_err(|e| {
                match e {
                    Error::Degenerate { coordinate, reason } => Error::Degenerate {
                        coordinate: j,
                        reason: format!(
                            "regressing node {} on node {}: {reason}",
                            j + 1,
                            coordinate + 1 + usize::from(coordinate >= j)
                        ),
                    },
                    other => other,
                }
            })?;
        tables.push(table);
    }

    let mut columns = Vec::new();
    let mut centers = Vec::new();
    let mut sds = Vec::new();
    let mut pairs = Vec::new();
    for (table, &j) in tables.iter().zip(nodes) {
        let scores = bootstrap_scores(table)?;
        for (c, cell) in table.cells.iter().enumerate() {
            columns.push(scores.column(c).clone_owned());
            centers.push(cell.beta_check);
            sds.push(cell.sd_hat);
            let to = if cell.j < j { cell.j } else { cell.j + 1 };
            pairs.push((j, to, cell.ci_low, cell.ci_high));
        }
    }
    let score_mat = DMatrix::from_columns(&columns);
    debug_assert_eq!(score_mat.nrows(), n);
    let edge_ids: Vec<usize> = (0..pairs.len()).collect();
    let (band, _) = bands_from_scores(&score_mat, edge_ids, &centers, &sds, alpha, n_draws, seed)?;

    let edges = pairs
        .iter()
        .enumerate()
        .map(|(e, &(from, to, lo, hi))| {
            let (blo, bhi) = band.intervals[e];
            Edge {
                from,
                to,
                estimate: centers[e],
                sd_hat: sds[e],
                ci: (lo, hi),
                band: (blo, bhi),
                zero_in_band: blo <= 0.0 && 0.0 <= bhi,
            }
        })
        .collect();

    Ok(GraphResult {
        edges,
        band,
        tables,
        gamma,
        pi_hat: mar.map(|m| m.pi_hat),
    })
}
