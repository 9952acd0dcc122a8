use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "eivci",
    version,
    about = "Inference for high-dimensional regressions with noisy covariates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the noise-corrected lasso pilot and report its coefficients.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Debiased estimates and pointwise intervals; bands when |S| >= 2.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Also compute the simultaneous band for a single target.
        #[arg(long)]
        bands: bool,
    },
    /// Simultaneous confidence bands over the target set.
    Bands {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Edge inference for a graphical model; every column is a node.
    Graph {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo size and family-wise error study.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
#[group(id = "noise", required = false, multiple = false)]
pub struct NoiseSource {
    /// File with one noise variance per covariate, one per line.
    #[arg(long, value_name = "FILE", group = "noise")]
    pub gamma: Option<PathBuf>,
    /// Treat empty or NA cells as missing at random and estimate the noise.
    #[arg(long, group = "noise")]
    pub mar: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV dataset with a header row.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[command(flatten)]
    pub noise: NoiseSource,
    /// Comma-separated 1-based targets (ranges like 3-7 allowed) or "all".
    #[arg(long, value_name = "LIST|all")]
    pub targets: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Significance level in (0, 1) [default: 0.05].
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<f64>,
    /// Multiplier bootstrap draws [default: 1000; simulation presets use 500].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub boot: Option<u64>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplier on the default penalty level.
    #[arg(long, default_value_t = 1.0, value_parser = parse_nonneg)]
    pub lambda_scale: f64,
    #[arg(long, value_enum, default_value_t = PenaltyArg::ScoreScaled)]
    pub penalty: PenaltyArg,
    #[arg(long, value_enum, default_value_t = VarianceAtArg::Debiased)]
    pub variance_at: VarianceAtArg,
    /// Relative stationarity tolerance of the solver.
    #[arg(long, value_parser = parse_positive)]
    pub tol: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: Option<u64>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// TOML study file; keys override the preset.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// True (and tested) value of the single target.
    #[arg(long)]
    pub target_value: Option<f64>,
    #[arg(long)]
    pub sigma_w: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Missing-at-random design with this missingness probability.
    #[arg(long, value_name = "PI")]
    pub mar_pi: Option<f64>,
    /// Full-size designs (n = 350, p = 300, 500 replications).
    #[arg(long)]
    pub full: bool,
    /// Write every generated dataset as CSV into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceAtArg {
    Debiased,
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    ScoreScaled,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetArg {
    Single,
    Multi,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Eiv,
    Naive,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("alpha must lie strictly between 0 and 1, got {v}"))
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("expected a finite value >= 0, got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("expected a finite value > 0, got {v}"))
    }
}

/// Resolve a `--targets` value to sorted, distinct 0-based indices.
pub fn parse_targets(spec: Option<&str>, p: usize) -> eiv_core::Result<Vec<usize>> {
    use eiv_core::Error;
    let spec = match spec {
        None => return Ok((0..p).collect()),
        Some(s) => s.trim(),
    };
    if spec.eq_ignore_ascii_case("all") {
        return Ok((0..p).collect());
    }
    let index = |tok: &str| -> eiv_core::Result<usize> {
        let k: usize = tok
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("--targets: '{tok}' is not a positive integer")))?;
        if k == 0 || k > p {
            return Err(Error::input(format!("--targets: {k} is outside 1..={p}")));
        }
        Ok(k - 1)
    };
    let mut out = Vec::new();
    for part in spec.split(',') {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (index(a)?, index(b)?);
                if a > b {
                    return Err(Error::input(format!("--targets: empty range '{part}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(index(part)?),
        }
    }
    let before = out.len();
    out.sort_unstable();
    out.dedup();
    if out.len() != before {
        return Err(Error::input("--targets: repeated target"));
    }
    if out.is_empty() {
        return Err(Error::input("--targets: empty target set"));
    }
    Ok(out)
}
