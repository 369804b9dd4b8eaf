//! Monte Carlo studies: simulate, fit each estimator, and aggregate bias, spread, variance
//! estimates, interval coverage and hazard error over replications.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use jointcox_core::simulate::replication_seed;
use jointcox_core::variance::ci;
use jointcox_core::{em_fit, gen_dataset, partial_lik_fit, FitConfig, SimConfig, VarianceReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{config_hash, write_json};

/// Points on `[0, τ]` where the cumulative hazard error is measured.
pub const LAMBDA_GRID_POINTS: usize = 50;
/// Share of failed replications above which a study is invalid.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Npml,
    Lvcf,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Npml => "npml",
            Estimator::Lvcf => "lvcf",
        })
    }
}

impl FromStr for Estimator {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npml" => Ok(Estimator::Npml),
            "lvcf" => Ok(Estimator::Lvcf),
            _ => Err(CliError::Usage(format!("unknown estimator {s:?}"))),
        }
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Npml, Estimator::Lvcf]
}

fn default_level() -> f64 {
    0.95
}

fn default_replications() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    /// Used when the command line gives no output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            fit: FitConfig::default(),
            replications: default_replications(),
            estimators: default_estimators(),
            ci_level: default_level(),
            output_dir: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.fit.validate()?;
        if self.replications < 1 {
            return Err(CliError::Validation(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CliError::Validation(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Validation("no estimators requested".into()));
        }
        Ok(())
    }

    /// Hash of everything that determines the results (the output directory excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.estimators.sort();
        c.estimators.dedup();
        config_hash(&c)
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimator: Estimator,
    pub ok: bool,
    pub converged: bool,
    pub beta_hat: Option<f64>,
    /// Estimated variance of `√n(β̂ − β₀)`; for the comparator the inverse partial-likelihood
    /// information per subject.
    pub var_simple: Option<f64>,
    pub var_full: Option<f64>,
    pub cover_simple: Option<bool>,
    pub cover_full: Option<bool>,
    pub lambda_sup_error: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failed(replication: usize, estimator: Estimator, error: String) -> Self {
        Self {
            replication,
            estimator,
            ok: false,
            converged: false,
            beta_hat: None,
            var_simple: None,
            var_full: None,
            cover_simple: None,
            cover_full: None,
            lambda_sup_error: None,
            iterations: None,
            error: Some(error),
        }
    }
}

/// Aggregate over the successful replications of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub config_hash: String,
    pub estimator: Estimator,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub mean_beta: f64,
    pub bias: f64,
    pub sd_beta: f64,
    pub rmse: f64,
    pub mean_var_simple: f64,
    pub mean_var_full: f64,
    pub empirical_var_root_n: f64,
    pub mean_se_simple: f64,
    pub mean_se_full: f64,
    pub coverage_simple: f64,
    pub coverage_full: f64,
    pub full_available: usize,
    pub mean_lambda_sup_error: f64,
    pub convergence_rate: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config_hash: String,
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
    pub valid: bool,
    pub wall_time_seconds: f64,
}

/// `sup_t |Λ̂(t) − Λ₀(t)|` over equally spaced points of `[0, τ]`.
pub fn lambda_sup_error(hazard: &jointcox_core::SieveHazard, sim: &SimConfig) -> f64 {
    (0..LAMBDA_GRID_POINTS)
        .map(|i| {
            let t = sim.tau * i as f64 / (LAMBDA_GRID_POINTS - 1) as f64;
            (hazard.eval(t) - sim.true_cumulative_hazard(t)).abs()
        })
        .fold(0.0, f64::max)
}

fn covers(beta: f64, var: Option<f64>, n: usize, level: f64, truth: f64) -> Option<bool> {
    let (lo, hi) = ci(beta, var?, n, level).ok()?;
    Some(lo <= truth && truth <= hi)
}

/// Runs every estimator on replication `r`.
pub fn run_replication(config: &StudyConfig, r: usize) -> Vec<ReplicationRecord> {
    let sim = SimConfig {
        seed: replication_seed(config.sim.seed, r as u64),
        ..config.sim.clone()
    };
    let n = sim.n;
    let level = config.ci_level;
    let beta0 = sim.beta0;
    let dataset = match gen_dataset(&sim) {
        Ok((d, _)) => d,
        Err(e) => {
            return config
                .estimators
                .iter()
                .map(|&est| ReplicationRecord::failed(r, est, format!("simulation: {e}")))
                .collect()
        }
    };
    config
        .estimators
        .iter()
        .map(|&est| match est {
            Estimator::Npml => match em_fit(&dataset, None, &config.fit) {
                Err(e) => ReplicationRecord::failed(r, est, e.to_string()),
                Ok(fit) => {
                    let beta = fit.theta_hat.beta;
                    let report = VarianceReport::compute(&dataset, &fit.theta_hat, &fit.atoms);
                    let (var_simple, var_full, error) = match report {
                        Ok(rep) => (Some(rep.var_beta_simple), rep.var_beta_full, None),
                        Err(e) => (None, None, Some(format!("variance: {e}"))),
                    };
                    ReplicationRecord {
                        replication: r,
                        estimator: est,
                        ok: fit.converged,
                        converged: fit.converged,
                        beta_hat: Some(beta),
                        var_simple,
                        var_full,
                        cover_simple: covers(beta, var_simple, n, level, beta0),
                        cover_full: covers(beta, var_full, n, level, beta0),
                        lambda_sup_error: Some(lambda_sup_error(&fit.theta_hat.hazard, &sim)),
                        iterations: Some(fit.iterations),
                        error: error.or_else(|| (!fit.converged).then(|| "not converged".into())),
                    }
                }
            },
            Estimator::Lvcf => match partial_lik_fit(&dataset) {
                Err(e) => ReplicationRecord::failed(r, est, e.to_string()),
                Ok(fit) => {
                    let var = (fit.information > 0.0).then(|| n as f64 / fit.information);
                    ReplicationRecord {
                        replication: r,
                        estimator: est,
                        ok: fit.converged,
                        converged: fit.converged,
                        beta_hat: Some(fit.beta_pl),
                        var_simple: var,
                        var_full: None,
                        cover_simple: covers(fit.beta_pl, var, n, level, beta0),
                        cover_full: None,
                        lambda_sup_error: Some(lambda_sup_error(&fit.breslow, &sim)),
                        iterations: Some(fit.iterations),
                        error: (!fit.converged).then(|| "not converged".into()),
                    }
                }
            },
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

fn rate(xs: impl Iterator<Item = bool>) -> f64 {
    mean(xs.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Aggregates one estimator's records.
pub fn aggregate(
    records: &[ReplicationRecord],
    estimator: Estimator,
    config: &StudyConfig,
    hash: &str,
) -> StudyRow {
    let mine: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.estimator == estimator)
        .collect();
    let good: Vec<&ReplicationRecord> = mine.iter().copied().filter(|r| r.ok).collect();
    let betas: Vec<f64> = good.iter().filter_map(|r| r.beta_hat).collect();
    let beta0 = config.sim.beta0;
    let n = config.sim.n as f64;
    let mean_beta = mean(betas.iter().copied());
    let sd_beta = if betas.len() > 1 {
        (betas.iter().map(|b| (b - mean_beta).powi(2)).sum::<f64>() / (betas.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let rmse = mean(betas.iter().map(|b| (b - beta0).powi(2))).sqrt();
    let failures = mine.len() - good.len();
    StudyRow {
        config_hash: hash.into(),
        estimator,
        n: config.sim.n,
        replications: mine.len(),
        failures,
        mean_beta,
        bias: mean_beta - beta0,
        sd_beta,
        rmse,
        mean_var_simple: mean(good.iter().filter_map(|r| r.var_simple)),
        mean_var_full: mean(good.iter().filter_map(|r| r.var_full)),
        empirical_var_root_n: n * sd_beta * sd_beta,
        mean_se_simple: mean(
            good.iter()
                .filter_map(|r| r.var_simple)
                .map(|v| (v / n).sqrt()),
        ),
        mean_se_full: mean(
            good.iter()
                .filter_map(|r| r.var_full)
                .map(|v| (v / n).sqrt()),
        ),
        coverage_simple: rate(good.iter().filter_map(|r| r.cover_simple)),
        coverage_full: rate(good.iter().filter_map(|r| r.cover_full)),
        full_available: good.iter().filter(|r| r.var_full.is_some()).count(),
        mean_lambda_sup_error: mean(good.iter().filter_map(|r| r.lambda_sup_error)),
        convergence_rate: rate(mine.iter().map(|r| r.converged)),
        valid: (failures as f64) <= MAX_FAILURE_RATE * mine.len() as f64,
    }
}

/// Study results with per-replication detail.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub report: StudyReport,
    pub records: Vec<ReplicationRecord>,
}

/// Runs all replications in parallel and aggregates them in replication order.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let mut estimators = config.estimators.clone();
    estimators.sort();
    estimators.dedup();
    let config = StudyConfig {
        estimators,
        ..config.clone()
    };
    let hash = config.hash();
    let start = Instant::now();
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .flat_map_iter(|r| run_replication(&config, r))
        .collect();
    for r in records.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "replication {} ({}): {}",
            r.replication,
            r.estimator,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let rows: Vec<StudyRow> = config
        .estimators
        .iter()
        .map(|&e| aggregate(&records, e, &config, &hash))
        .collect();
    let valid = rows.iter().all(|r| r.valid);
    if !valid {
        log::error!(
            "more than {:.0}% of replications failed",
            100.0 * MAX_FAILURE_RATE
        );
    }
    Ok(StudyOutcome {
        report: StudyReport {
            config_hash: hash,
            config,
            rows,
            valid,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        },
        records,
    })
}

/// Writes `report.csv`, `replications.csv` and `report.json` into `dir`. The CSV files depend
/// only on the configuration; wall time is kept to the JSON.
pub fn write_outcome(outcome: &StudyOutcome, dir: &Path) -> Result<()> {
    crate::io::create_dir(dir)?;
    let path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|source| CliError::Csv {
        path: path.clone(),
        source,
    })?;
    for row in &outcome.report.rows {
        w.serialize(row).map_err(|source| CliError::Csv {
            path: path.clone(),
            source,
        })?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("replications.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|source| CliError::Csv {
        path: path.clone(),
        source,
    })?;
    for rec in &outcome.records {
        w.serialize(RecordRow::new(rec, &outcome.report.config_hash))
            .map_err(|source| CliError::Csv {
                path: path.clone(),
                source,
            })?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    write_json(&dir.join("report.json"), &outcome.report)
}

/// Flat CSV form of a record.
#[derive(Serialize)]
struct RecordRow<'a> {
    config_hash: &'a str,
    replication: usize,
    estimator: Estimator,
    ok: bool,
    converged: bool,
    beta_hat: Option<f64>,
    var_simple: Option<f64>,
    var_full: Option<f64>,
    cover_simple: Option<bool>,
    cover_full: Option<bool>,
    lambda_sup_error: Option<f64>,
    iterations: Option<usize>,
    error: Option<&'a str>,
}

impl<'a> RecordRow<'a> {
    fn new(r: &'a ReplicationRecord, hash: &'a str) -> Self {
        Self {
            config_hash: hash,
            replication: r.replication,
            estimator: r.estimator,
            ok: r.ok,
            converged: r.converged,
            beta_hat: r.beta_hat,
            var_simple: r.var_simple,
            var_full: r.var_full,
            cover_simple: r.cover_simple,
            cover_full: r.cover_full,
            lambda_sup_error: r.lambda_sup_error,
            iterations: r.iterations,
            error: r.error.as_deref(),
        }
    }
}

/// Loads a `report.csv`, refusing files whose rows carry different configuration hashes.
pub fn read_report_csv(path: &Path) -> Result<Vec<StudyRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| CliError::Csv {
        path: path.into(),
        source,
    })?;
    let rows: Vec<StudyRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|source| CliError::Csv {
            path: path.into(),
            source,
        })?;
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.config_hash != first.config_hash) {
            return Err(CliError::Validation(format!(
                "{}: rows mix configuration hashes {} and {}",
                path.display(),
                first.config_hash,
                other.config_hash
            )));
        }
    }
    Ok(rows)
}

/// Side-by-side table of two reports.
pub fn compare(a: &[StudyRow], b: &[StudyRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let ha = a.first().map_or("-", |r| r.config_hash.as_str());
    let hb = b.first().map_or("-", |r| r.config_hash.as_str());
    let _ = writeln!(out, "a: {ha}\nb: {hb}");
    let _ = writeln!(
        out,
        "{:<6} {:>5} {:>11} {:>11} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "est", "n", "bias a", "bias b", "sd a", "sd b", "cov a", "cov b", "Λerr a", "Λerr b"
    );
    for ra in a {
        let rb = b.iter().find(|r| r.estimator == ra.estimator);
        let pick = |f: fn(&StudyRow) -> f64| rb.map_or(f64::NAN, f);
        let _ = writeln!(
            out,
            "{:<6} {:>5} {:>11.5} {:>11.5} {:>9.5} {:>9.5} {:>9.3} {:>9.3} {:>9.5} {:>9.5}",
            ra.estimator.to_string(),
            ra.n,
            ra.bias,
            pick(|r| r.bias),
            ra.sd_beta,
            pick(|r| r.sd_beta),
            ra.coverage_simple,
            pick(|r| r.coverage_simple),
            ra.mean_lambda_sup_error,
            pick(|r| r.mean_lambda_sup_error),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StudyConfig {
        StudyConfig {
            sim: SimConfig {
                n: 40,
                ..SimConfig::default()
            },
            replications: 1,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn single_replication_report_equals_the_fit() {
        let c = tiny();
        let out = run_study(&c).unwrap();
        let rec = out
            .records
            .iter()
            .find(|r| r.estimator == Estimator::Npml)
            .unwrap();
        let row = &out.report.rows[0];
        assert_eq!(row.estimator, Estimator::Npml);
        assert_eq!(row.mean_beta, rec.beta_hat.unwrap());
        assert_eq!(row.mean_var_simple, rec.var_simple.unwrap());
        assert_eq!(row.mean_lambda_sup_error, rec.lambda_sup_error.unwrap());
        assert_eq!(row.sd_beta, 0.0);
    }

    #[test]
    fn hash_ignores_output_dir_and_estimator_order() {
        let a = tiny();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        b.estimators.reverse();
        assert_eq!(a.hash(), b.hash());
    }
}
