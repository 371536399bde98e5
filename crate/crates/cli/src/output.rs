//! Artifact formats: trajectory CSV, verdict tables and JSON reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use scns_core::solver::SampleRow;
use scns_core::stats::gamma0;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CSV_COLUMNS: [&str; 12] = [
    "t",
    "H",
    "E",
    "grad_u_sq",
    "grad_logrho_sq",
    "diss_u_cum",
    "diss_logrho_cum",
    "psi",
    "psi_sup",
    "mass",
    "min_rho",
    "max_rho",
];

/// Trajectory samples as CSV; 17 significant digits round-trip binary64.
pub fn trajectory_csv(config_hash: &str, rows: &[SampleRow]) -> String {
    let mut s = format!("# config_hash={config_hash}\n{}\n", CSV_COLUMNS.join(","));
    for r in rows {
        let values = [
            r.t,
            r.report.entropy,
            r.report.energy,
            r.report.grad_u_sq,
            r.report.grad_logrho_sq,
            r.diss_u,
            r.diss_logrho,
            r.psi,
            r.psi_sup,
            r.mass,
            r.report.min_rho,
            r.report.max_rho,
        ];
        let line: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// One inequality: `lhs <= rhs + slack` unless stated otherwise by `pass`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictRow {
    pub name: String,
    /// Which result of the theory the row checks.
    pub anchor: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl VerdictRow {
    /// Row that passes iff `lhs <= rhs + slack`.
    pub fn upper(name: impl Into<String>, anchor: &'static str, lhs: f64, rhs: f64, slack: f64) -> Self {
        VerdictRow {
            name: name.into(),
            anchor,
            lhs,
            rhs,
            slack,
            pass: lhs <= rhs + slack,
        }
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

pub fn verdict_table(config_hash: &str, rows: &[VerdictRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let anchor_w = rows.iter().map(|r| r.anchor.len()).max().unwrap_or(6).max(6);
    let mut s = format!("# config_hash={config_hash}\n");
    let _ = writeln!(
        s,
        "{:<name_w$}  {:<anchor_w$}  {:>14}  {:>14}  {:>14}  verdict",
        "name", "anchor", "lhs", "rhs", "slack"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<anchor_w$}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {}",
            r.name,
            r.anchor,
            r.lhs,
            r.rhs,
            r.slack,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    s
}

/// Run identification block embedded in every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportHeader {
    pub config_hash: String,
    pub seed: u64,
    pub sigma_sup_sq: f64,
    pub gamma0: Option<f64>,
    pub n_cells: usize,
    pub dt: f64,
    pub cfl_max: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: f64,
    pub sigma0: f64,
}

impl ReportHeader {
    pub fn new(cfg: &RunConfig) -> Self {
        let sigma_sup_sq = cfg.basis().sup_norm_sq();
        ReportHeader {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            sigma_sup_sq,
            gamma0: gamma0(cfg.A, sigma_sup_sq).ok(),
            n_cells: cfg.n_cells,
            dt: cfg.dt,
            cfl_max: cfg.cfl_max,
            a: cfg.A,
            k: cfg.K,
            p: cfg.p,
            sigma0: cfg.sigma0,
        }
    }
}

#[derive(Serialize)]
struct Report<'a, B: Serialize> {
    header: &'a ReportHeader,
    verdicts: &'a [VerdictRow],
    body: &'a B,
}

pub fn report_json<B: Serialize>(header: &ReportHeader, verdicts: &[VerdictRow], body: &B) -> Result<String, CliError> {
    let mut text =
        serde_json::to_string_pretty(&Report { header, verdicts, body }).map_err(|e| CliError::Runtime(e.into()))?;
    text.push('\n');
    Ok(text)
}

/// Creates the output directory if needed.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Writes `<stem>.json` and `<stem>.txt` for a verdict-bearing report.
pub fn write_report<B: Serialize>(
    dir: &Path,
    stem: &str,
    header: &ReportHeader,
    verdicts: &[VerdictRow],
    body: &B,
) -> Result<(), CliError> {
    write(dir, &format!("{stem}.json"), &report_json(header, verdicts, body)?)?;
    write(
        dir,
        &format!("{stem}.txt"),
        &verdict_table(&header.config_hash, verdicts),
    )?;
    Ok(())
}
