use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use eiv_core::bootstrap::{simultaneous_bands, DEFAULT_DRAWS};
use eiv_core::data::NoiseKind;
use eiv_core::debias::{DebiasTable, InferenceOptions, VarianceAt};
use eiv_core::eiv_lasso::{corrected_gram, cross_moment, FitResult, PenaltyRule, Tuning};
use eiv_core::gamma_mar;
use eiv_core::graph::run_graph;
use eiv_core::simstudy::{
    run_study, Method, NoiseMode, SimConfig, Simulator, DESK_N, DESK_P, DESK_REPLICATIONS, FULL_N,
    FULL_P, FULL_REPLICATIONS,
};
use eiv_core::{run_inference, BandResult, Error, NoiseSpec, Result};
use serde::Deserialize;

use crate::args::{
    parse_targets, Cli, Command, DataArgs, Format, MethodArg, PenaltyArg, PresetArg, RunArgs,
    SimArgs, VarianceAtArg,
};
use crate::ingest::{ingest_csv, read_gamma, write_csv, CsvData, Layout};
use crate::report::*;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 0;

/// Run a parsed command line and write its report.
pub fn run(cli: &Cli) -> Result<()> {
    let run_args = match &cli.command {
        Command::Fit { run, .. }
        | Command::Infer { run, .. }
        | Command::Bands { run, .. }
        | Command::Graph { run, .. }
        | Command::Simulate { run, .. } => run,
    };
    let report = with_threads(run_args.threads, || execute(&cli.command))?;
    let text = match run_args.format {
        Format::Records => report.records(),
        Format::Table => report.table_text().to_string(),
    };
    match &run_args.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_threads<T: Send>(threads: Option<u64>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build()
            .map_err(|e| Error::numerical(format!("cannot start worker pool: {e}")))?
            .install(f),
    }
}

/// Produce the report of `command` without writing it anywhere.
pub fn execute(command: &Command) -> Result<Report> {
    match command {
        Command::Fit { data, run } => cmd_fit(data, run),
        Command::Infer { data, run, bands } => cmd_infer(data, run, *bands, "infer"),
        Command::Bands { data, run } => cmd_infer(data, run, true, "bands"),
        Command::Graph { data, run } => cmd_graph(data, run),
        Command::Simulate { sim, run } => cmd_simulate(sim, run),
    }
}

pub fn options(run: &RunArgs) -> InferenceOptions {
    let mut tuning = Tuning {
        lambda_scale: run.lambda_scale,
        penalty: match run.penalty {
            PenaltyArg::ScoreScaled => PenaltyRule::ScoreScaled,
            PenaltyArg::Fixed => PenaltyRule::Fixed,
        },
        ..Tuning::default()
    };
    if let Some(tol) = run.tol {
        tuning.tol = tol;
    }
    if let Some(m) = run.max_iter {
        tuning.max_iter = m as usize;
    }
    InferenceOptions {
        tuning,
        variance_at: match run.variance_at {
            VarianceAtArg::Debiased => VarianceAt::Debiased,
            VarianceAtArg::Pilot => VarianceAt::Pilot,
        },
    }
}

fn load(data: &DataArgs, layout: Layout) -> Result<(CsvData, NoiseSpec)> {
    let mar = data.noise.mar;
    if data.noise.gamma.is_none() && !mar {
        return Err(Error::input("choose a noise source: --gamma FILE or --mar"));
    }
    let csv = ingest_csv(&data.input, layout, mar)?;
    let noise = match &data.noise.gamma {
        Some(path) => NoiseSpec::known(read_gamma(path, csv.p())?),
        None => NoiseSpec::missing_at_random(),
    };
    Ok((csv, noise))
}

fn penalty_name(rule: PenaltyRule) -> &'static str {
    match rule {
        PenaltyRule::ScoreScaled => "score_scaled",
        PenaltyRule::Fixed => "fixed",
    }
}

fn noise_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::KnownDiagonal => "known_diagonal",
        NoiseKind::MissingAtRandom => "missing_at_random",
    }
}

fn variance_name(v: VarianceAt) -> &'static str {
    match v {
        VarianceAt::Debiased => "debiased",
        VarianceAt::Pilot => "pilot",
    }
}

#[allow(clippy::too_many_arguments)]
fn run_record(
    command: &'static str,
    n: usize,
    p: usize,
    alpha: f64,
    kind: NoiseKind,
    pi_hat: Option<f64>,
    opts: &InferenceOptions,
    pilot: Option<&FitResult>,
    band: Option<&BandResult>,
) -> RunRecord {
    RunRecord {
        schema_version: SCHEMA_VERSION,
        record: "run",
        command,
        n,
        p,
        alpha,
        noise: noise_name(kind),
        pi_hat,
        penalty: penalty_name(opts.tuning.penalty),
        lambda_scale: opts.tuning.lambda_scale,
        lambda: pilot.map(|f| f.lambda),
        radius: pilot.and_then(|f| finite(f.radius)),
        pilot_iterations: pilot.map(|f| f.iterations),
        pilot_converged: pilot.map(|f| f.converged),
        tol: opts.tuning.tol,
        max_iter: opts.tuning.max_iter,
        truncation: opts.tuning.truncation,
        variance_at: variance_name(opts.variance_at),
        boot: band.map(|b| b.n_draws),
        seed: band.map(|b| b.seed),
        c_star: band.map(|b| b.c_star),
    }
}

fn cmd_fit(data: &DataArgs, run: &RunArgs) -> Result<Report> {
    let (csv, noise) = load(data, Layout::Regression)?;
    let names = csv.names.clone();
    let dataset = csv.into_dataset()?;
    let opts = options(run);
    opts.tuning.validate()?;
    let (z, gamma, pi_hat) = match noise.kind {
        NoiseKind::KnownDiagonal => (
            dataset.z().clone(),
            noise.gamma.clone().unwrap_or_default(),
            None,
        ),
        NoiseKind::MissingAtRandom => {
            let mar = gamma_mar::estimate(&dataset)?;
            (mar.z_rescaled, mar.gamma_hat, Some(mar.pi_hat))
        }
    };
    let (n, p) = z.shape();
    let g = corrected_gram(&z, &gamma)?;
    let b = cross_moment(&z, dataset.y());
    let fit = opts
        .tuning
        .fit(&z, dataset.y(), &gamma, &g, &b, opts.tuning.lambda(n, p))?;

    let alpha = run.alpha.unwrap_or(DEFAULT_ALPHA);
    let header = run_record(
        "fit",
        n,
        p,
        alpha,
        noise.kind,
        pi_hat,
        &opts,
        Some(&fit),
        None,
    );
    let mut report = Report::default();
    report.push(&header);
    header_lines(report.table(), &header);
    let _ = writeln!(
        report.table(),
        "{:>5}  {:<12} {:>14}",
        "j",
        "name",
        "beta_hat"
    );
    for (k, name) in names.iter().enumerate() {
        let rec = PilotRecord {
            schema_version: SCHEMA_VERSION,
            record: "pilot",
            j: k + 1,
            name: name.clone(),
            beta_hat: fit.beta[k],
        };
        report.push(&rec);
        let _ = writeln!(
            report.table(),
            "{:>5}  {:<12} {:>14.6}",
            k + 1,
            name,
            fit.beta[k]
        );
    }
    let _ = writeln!(
        report.table(),
        "\nobjective {:.6e}, stationarity residual {:.3e}",
        fit.objective,
        fit.kkt_residual
    );
    Ok(report)
}

fn cmd_infer(
    data: &DataArgs,
    run: &RunArgs,
    force_bands: bool,
    command: &'static str,
) -> Result<Report> {
    let (csv, noise) = load(data, Layout::Regression)?;
    let names = csv.names.clone();
    let targets = parse_targets(data.targets.as_deref(), csv.p())?;
    let dataset = csv.into_dataset()?;
    let opts = options(run);
    let alpha = run.alpha.unwrap_or(DEFAULT_ALPHA);
    let table = run_inference(&dataset, &noise, &targets, alpha, &opts)?;
    let band = if force_bands || targets.len() >= 2 {
        let draws = run.boot.map_or(DEFAULT_DRAWS, |b| b as usize);
        Some(simultaneous_bands(
            &table,
            draws,
            run.seed.unwrap_or(DEFAULT_SEED),
        )?)
    } else {
        None
    };
    Ok(inference_report(
        command,
        &table,
        band.as_ref(),
        &names,
        &opts,
    ))
}

/// Report for a finished inference run; shared with the acceptance suite.
pub fn inference_report(
    command: &'static str,
    table: &DebiasTable,
    band: Option<&BandResult>,
    names: &[String],
    opts: &InferenceOptions,
) -> Report {
    let header = run_record(
        command,
        table.n,
        table.p,
        table.alpha,
        table.noise_used.kind,
        table.mar.as_ref().map(|m| m.pi_hat),
        opts,
        Some(&table.pilot),
        band,
    );
    let mut report = Report::default();
    report.push(&header);
    header_lines(report.table(), &header);
    let _ = writeln!(
        report.table(),
        "{:>5}  {:<12} {:>12} {:>10} {:>12} {:>12} {:>12} {:>12}",
        "j",
        "name",
        "estimate",
        "sd",
        "ci_low",
        "ci_high",
        "band_low",
        "band_high"
    );
    for (c, cell) in table.cells.iter().enumerate() {
        let interval = band.map(|b| b.intervals[c]);
        let rec = CoefRecord {
            schema_version: SCHEMA_VERSION,
            record: "coefficient",
            j: cell.j + 1,
            name: names[cell.j].clone(),
            beta_check: cell.beta_check,
            sd_hat: cell.sd_hat,
            sigma_hat_cap: cell.sigma_hat_cap,
            ci_low: cell.ci_low,
            ci_high: cell.ci_high,
            band_low: interval.map(|i| i.0),
            band_high: interval.map(|i| i.1),
            nodewise_lambda: cell.nodewise.lambda,
            nodewise_radius: finite(cell.nodewise.radius),
            nodewise_converged: cell.nodewise.converged,
        };
        report.push(&rec);
        let _ = writeln!(
            report.table(),
            "{:>5}  {:<12} {:>12.6} {:>10.6} {:>12.6} {:>12.6} {:>12} {:>12}",
            rec.j,
            rec.name,
            rec.beta_check,
            rec.sd_hat,
            rec.ci_low,
            rec.ci_high,
            fmt_opt(rec.band_low),
            fmt_opt(rec.band_high)
        );
    }
    report
}

fn cmd_graph(data: &DataArgs, run: &RunArgs) -> Result<Report> {
    let (csv, noise) = load(data, Layout::Graph)?;
    let nodes = parse_targets(data.targets.as_deref(), csv.p())?;
    let opts = options(run);
    let alpha = run.alpha.unwrap_or(DEFAULT_ALPHA);
    let draws = run.boot.map_or(DEFAULT_DRAWS, |b| b as usize);
    let seed = run.seed.unwrap_or(DEFAULT_SEED);
    let result = run_graph(
        &csv.z,
        csv.mask.as_ref(),
        &noise,
        &nodes,
        alpha,
        &opts,
        draws,
        seed,
    )?;

    let header = run_record(
        "graph",
        csv.n(),
        csv.p(),
        alpha,
        noise.kind,
        result.pi_hat,
        &opts,
        None,
        Some(&result.band),
    );
    let mut report = Report::default();
    report.push(&header);
    header_lines(report.table(), &header);
    let _ = writeln!(
        report.table(),
        "{:>5} {:>5}  {:>12} {:>10} {:>12} {:>12} {:>12} {:>12}  zero_in_band",
        "from",
        "to",
        "estimate",
        "sd",
        "ci_low",
        "ci_high",
        "band_low",
        "band_high"
    );
    for e in &result.edges {
        let rec = EdgeRecord {
            schema_version: SCHEMA_VERSION,
            record: "edge",
            from: e.from + 1,
            to: e.to + 1,
            from_name: csv.names[e.from].clone(),
            to_name: csv.names[e.to].clone(),
            estimate: e.estimate,
            sd_hat: e.sd_hat,
            ci_low: e.ci.0,
            ci_high: e.ci.1,
            band_low: e.band.0,
            band_high: e.band.1,
            zero_in_band: e.zero_in_band,
        };
        report.push(&rec);
        let _ = writeln!(
            report.table(),
            "{:>5} {:>5}  {:>12.6} {:>10.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}  {}",
            rec.from,
            rec.to,
            rec.estimate,
            rec.sd_hat,
            rec.ci_low,
            rec.ci_high,
            rec.band_low,
            rec.band_high,
            rec.zero_in_band
        );
    }
    Ok(report)
}

/// Keys of a TOML study file; each overrides the preset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub preset: Option<PresetArg>,
    pub method: Option<Method>,
    pub target_value: Option<f64>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub sigma_w: Option<f64>,
    pub sigma_xi: Option<f64>,
    pub omega_rho: Option<f64>,
    pub beta0: Option<Vec<f64>>,
    /// 1-based.
    pub targets: Option<Vec<usize>>,
    pub nulls: Option<Vec<f64>>,
    pub replications: Option<usize>,
    pub mar_pi: Option<f64>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub boot: Option<usize>,
}

/// Resolve preset, study file and flags into a study configuration.
pub fn study_config(sim: &SimArgs, run: &RunArgs) -> Result<SimConfig> {
    let file: StudyFile = match &sim.config {
        None => StudyFile::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?
        }
    };
    let preset = sim.preset.or(file.preset).unwrap_or(PresetArg::Single);
    let method = sim
        .method
        .map(|m| match m {
            MethodArg::Eiv => Method::Eiv,
            MethodArg::Naive => Method::Naive,
        })
        .or(file.method)
        .unwrap_or(Method::Eiv);
    let (n0, p0, reps0) = if sim.full {
        (FULL_N, FULL_P, FULL_REPLICATIONS)
    } else {
        (DESK_N, DESK_P, DESK_REPLICATIONS)
    };
    let n = file.n.unwrap_or(n0);
    let p = file.p.unwrap_or(p0);
    let reps = sim.replications.or(file.replications).unwrap_or(reps0);
    let sigma_w = sim.sigma_w.or(file.sigma_w).unwrap_or(1.0);
    let target_value = sim.target_value.or(file.target_value).unwrap_or(1.0);

    let mut cfg = match preset {
        PresetArg::Single | PresetArg::Custom => {
            SimConfig::single_target(n, p, sigma_w, target_value, method, reps)
        }
        PresetArg::Multi => SimConfig::multi_target(n, p, sigma_w, method, reps),
    };
    if preset == PresetArg::Custom {
        let (Some(beta0), Some(targets), Some(nulls)) = (file.beta0, file.targets, file.nulls)
        else {
            return Err(Error::input("custom preset needs beta0, targets and nulls"));
        };
        if targets.contains(&0) {
            return Err(Error::input("study targets are 1-based"));
        }
        cfg.beta0 = beta0;
        cfg.targets = targets.iter().map(|t| t - 1).collect();
        cfg.nulls = nulls;
    }
    if let Some(v) = file.sigma_xi {
        cfg.sigma_xi = v;
    }
    if let Some(v) = file.omega_rho {
        cfg.omega_rho = v;
    }
    if let Some(pi) = sim.mar_pi.or(file.mar_pi) {
        cfg.noise_mode = NoiseMode::Mar { pi };
    }
    cfg.seed = run.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    cfg.alpha = run.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
    if let Some(b) = run.boot.map(|b| b as usize).or(file.boot) {
        cfg.boot = b;
    }
    cfg.options = options(run);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(sim: &SimArgs, run: &RunArgs) -> Result<Report> {
    let cfg = study_config(sim, run)?;
    if let Some(dir) = &sim.emit_data {
        emit_datasets(&cfg, dir)?;
    }
    let result = run_study(&cfg)?;
    Ok(study_report(&cfg, &result))
}

fn emit_datasets(cfg: &SimConfig, dir: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::input(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let sim = Simulator::new(cfg)?;
    for rep in 0..cfg.replications {
        let (data, _) = sim.generate(rep)?;
        let file = fs::File::create(dir.join(format!("rep_{rep:04}.csv"))).map_err(io)?;
        write_csv(std::io::BufWriter::new(file), &data)?;
    }
    if cfg.noise_mode == NoiseMode::KnownGamma {
        let line = format!("{}\n", cfg.sigma_w * cfg.sigma_w);
        fs::write(dir.join("gamma.txt"), line.repeat(cfg.p)).map_err(io)?;
    }
    Ok(())
}

pub fn study_report(cfg: &SimConfig, result: &eiv_core::SimReport) -> Report {
    let (noise_mode, mar_pi) = match cfg.noise_mode {
        NoiseMode::KnownGamma => ("known_gamma", None),
        NoiseMode::Mar { pi } => ("missing_at_random", Some(pi)),
    };
    let header = StudyRecord {
        schema_version: SCHEMA_VERSION,
        record: "study",
        n: cfg.n,
        p: cfg.p,
        sigma_w: cfg.sigma_w,
        sigma_xi: cfg.sigma_xi,
        omega_rho: cfg.omega_rho,
        method: match cfg.method {
            Method::Eiv => "eiv",
            Method::Naive => "naive",
        },
        noise_mode,
        mar_pi,
        targets: cfg.targets.iter().map(|t| t + 1).collect(),
        nulls: cfg.nulls.clone(),
        replications: cfg.replications,
        replications_completed: result.replications_completed,
        failures: result.failures.len(),
        seed: cfg.seed,
        alpha: cfg.alpha,
        boot: cfg.boot,
        penalty: penalty_name(cfg.options.tuning.penalty),
        lambda_scale: cfg.options.tuning.lambda_scale,
        size_or_fwer: result.size_or_fwer,
        std_error: result.std_error,
        mean_bias: result.mean_bias,
    };
    let mut report = Report::default();
    report.push(&header);
    for r in &result.records {
        report.push(&ReplicationRecord {
            schema_version: SCHEMA_VERSION,
            record: "replication",
            rep: r.rep,
            reject: r.reject,
            estimates: r.estimates.clone(),
            errors: r.errors.clone(),
            sd_hats: r.sd_hats.clone(),
            t_stats: r.t_stats.clone(),
            c_star: r.c_star,
            gamma_error: r.gamma_error,
        });
    }
    for f in &result.failures {
        report.push(&FailureRecord {
            schema_version: SCHEMA_VERSION,
            record: "failure",
            rep: f.rep,
            message: f.message.clone(),
        });
    }
    let t = report.table();
    let what = if cfg.targets.len() == 1 {
        "size"
    } else {
        "FWER"
    };
    let _ = writeln!(
        t,
        "design       n = {}, p = {}, sigma_w = {}, sigma_xi = {}, rho = {}",
        cfg.n, cfg.p, cfg.sigma_w, cfg.sigma_xi, cfg.omega_rho
    );
    let _ = writeln!(t, "method       {} ({noise_mode})", header.method);
    let _ = writeln!(
        t,
        "targets      {:?} with nulls {:?}",
        header.targets, header.nulls
    );
    let _ = writeln!(
        t,
        "seed         {}, alpha {}, B = {}",
        cfg.seed, cfg.alpha, cfg.boot
    );
    let _ = writeln!(
        t,
        "replications {} completed, {} failed",
        result.replications_completed,
        result.failures.len()
    );
    let _ = writeln!(
        t,
        "{what:<12} {:.4} (se {:.4})",
        result.size_or_fwer, result.std_error
    );
    let _ = writeln!(t, "mean bias    {:.4}", result.mean_bias);
    report
}
