//! Report records and their two renderings.
//!
//! The machine format is one JSON object per line. Every object carries
//! `schema_version` and a `record` tag; the first line of a report is the
//! run header with all resolved settings.

use std::fmt::Write as _;

use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub command: &'static str,
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub noise: &'static str,
    pub pi_hat: Option<f64>,
    pub penalty: &'static str,
    pub lambda_scale: f64,
    /// Resolved pilot penalty and radius.
    pub lambda: Option<f64>,
    pub radius: Option<f64>,
    pub pilot_iterations: Option<usize>,
    pub pilot_converged: Option<bool>,
    pub tol: f64,
    pub max_iter: usize,
    pub truncation: f64,
    pub variance_at: &'static str,
    pub boot: Option<usize>,
    pub seed: Option<u64>,
    pub c_star: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PilotRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub j: usize,
    pub name: String,
    pub beta_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub j: usize,
    pub name: String,
    pub beta_check: f64,
    pub sd_hat: f64,
    pub sigma_hat_cap: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub band_low: Option<f64>,
    pub band_high: Option<f64>,
    pub nodewise_lambda: f64,
    pub nodewise_radius: Option<f64>,
    pub nodewise_converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub from: usize,
    pub to: usize,
    pub from_name: String,
    pub to_name: String,
    pub estimate: f64,
    pub sd_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub zero_in_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub n: usize,
    pub p: usize,
    pub sigma_w: f64,
    pub sigma_xi: f64,
    pub omega_rho: f64,
    pub method: &'static str,
    pub noise_mode: &'static str,
    pub mar_pi: Option<f64>,
    /// 1-based targets and their null values.
    pub targets: Vec<usize>,
    pub nulls: Vec<f64>,
    pub replications: usize,
    pub replications_completed: usize,
    pub failures: usize,
    pub seed: u64,
    pub alpha: f64,
    pub boot: usize,
    pub penalty: &'static str,
    pub lambda_scale: f64,
    pub size_or_fwer: f64,
    pub std_error: f64,
    pub mean_bias: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub rep: usize,
    pub reject: bool,
    pub estimates: Vec<f64>,
    pub errors: Vec<f64>,
    pub sd_hats: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub c_star: Option<f64>,
    pub gamma_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub schema_version: u32,
    pub record: &'static str,
    pub rep: usize,
    pub message: String,
}

/// `None` for infinities, which JSON cannot carry.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    lines: Vec<String>,
    table: String,
}

impl Report {
    pub fn push<T: Serialize>(&mut self, record: &T) {
        self.lines
            .push(serde_json::to_string(record).expect("report records serialize"));
    }

    pub fn table(&mut self) -> &mut String {
        &mut self.table
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn table_text(&self) -> &str {
        &self.table
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

pub fn header_lines(out: &mut String, run: &RunRecord) {
    let _ = writeln!(out, "command      {}", run.command);
    let _ = writeln!(out, "n, p         {}, {}", run.n, run.p);
    let _ = writeln!(out, "noise        {}", run.noise);
    if let Some(pi) = run.pi_hat {
        let _ = writeln!(out, "pi_hat       {pi:.6}");
    }
    let _ = writeln!(out, "alpha        {}", run.alpha);
    let _ = writeln!(
        out,
        "penalty      {} (scale {}), lambda {}, radius {}",
        run.penalty,
        run.lambda_scale,
        fmt_opt(run.lambda),
        fmt_opt(run.radius)
    );
    if let (Some(it), Some(conv)) = (run.pilot_iterations, run.pilot_converged) {
        let _ = writeln!(out, "pilot        {it} iterations, converged {conv}");
    }
    let _ = writeln!(
        out,
        "solver       tol {}, max_iter {}, truncation {}",
        run.tol, run.max_iter, run.truncation
    );
    let _ = writeln!(out, "variance at  {}", run.variance_at);
    if let (Some(b), Some(seed)) = (run.boot, run.seed) {
        let _ = writeln!(
            out,
            "bootstrap    B = {b}, seed {seed}, c* = {}",
            fmt_opt(run.c_star)
        );
    }
    out.push('\n');
}
