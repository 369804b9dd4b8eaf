//! Subcommand implementations, kept free of argument parsing so tests can call them directly.

use std::path::{Path, PathBuf};

use jointcox_core::baseline::partial_lik_fit_with;
use jointcox_core::{
    em_fit, gen_dataset, CovariatePath, Dataset, FitConfig, MeasurementGrid, SimConfig,
    VarianceReport,
};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{
    config_hash, create_dir, read_dataset_csv, read_json, write_dataset_csv, write_json,
    write_truths_csv, FitOutput, Manifest,
};
use crate::study::{compare, read_report_csv, run_study, write_outcome, StudyConfig};

/// Writes `dataset.json`, `subjects.csv`, `measurements.csv`, `truths.csv` and
/// `manifest.json`.
pub fn simulate(config: &SimConfig, out: &Path) -> Result<Manifest> {
    let (dataset, truths) = gen_dataset(config)?;
    create_dir(out)?;
    write_json(&out.join("dataset.json"), &dataset)?;
    write_dataset_csv(
        &dataset,
        &out.join("subjects.csv"),
        &out.join("measurements.csv"),
    )?;
    write_truths_csv(&truths, &out.join("truths.csv"))?;
    let manifest = Manifest {
        seed: config.seed,
        config_hash: config_hash(config),
        n: dataset.n(),
        events: dataset.event_count(),
        files: [
            "dataset.json",
            "subjects.csv",
            "measurements.csv",
            "truths.csv",
        ]
        .map(String::from)
        .to_vec(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    log::info!(
        "simulated {} subjects with {} events into {}",
        dataset.n(),
        dataset.event_count(),
        out.display()
    );
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Npml,
    Lvcf,
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Json(PathBuf),
    /// Subjects and measurements CSV files plus the grid step and horizon they omit.
    Csv {
        subjects: PathBuf,
        measurements: PathBuf,
        grid_step: f64,
        tau: f64,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Json(p) => read_json(p),
            DataSource::Csv {
                subjects,
                measurements,
                grid_step,
                tau,
            } => {
                let grid = MeasurementGrid::regular(*grid_step, *tau)?;
                read_dataset_csv(subjects, measurements, grid, *tau)
            }
        }
    }
}

#[derive(Serialize)]
struct SubjectAtoms<'a> {
    id: u64,
    #[serde(flatten)]
    atoms: &'a jointcox_core::PosteriorAtoms,
}

/// Fits the dataset and writes `fit.json` (plus `variance.json` and optionally `atoms.json` for
/// NPML). A fit that stops without converging is still written and then reported as an error.
pub fn fit(
    source: &DataSource,
    method: Method,
    config: &FitConfig,
    out: &Path,
    dump_atoms: bool,
) -> Result<FitOutput> {
    if method == Method::Lvcf && config.beta_bound == 0.0 {
        return Err(CliError::Usage(
            "the lvcf comparator cannot run with beta frozen at 0 (beta_bound = 0)".into(),
        ));
    }
    if method == Method::Lvcf && dump_atoms {
        return Err(CliError::Usage("--dump-atoms applies to npml only".into()));
    }
    config.validate()?;
    let dataset = source.load()?;
    create_dir(out)?;
    let output = match method {
        Method::Npml => {
            let fit = em_fit(&dataset, None, config)?;
            let output = FitOutput::from_npml(&fit);
            write_json(&out.join("fit.json"), &output)?;
            if dump_atoms {
                let atoms: Vec<SubjectAtoms> = dataset
                    .subjects()
                    .iter()
                    .zip(&fit.atoms)
                    .map(|(s, atoms)| SubjectAtoms { id: s.id, atoms })
                    .collect();
                write_json(&out.join("atoms.json"), &atoms)?;
            }
            if fit.converged {
                let report = VarianceReport::compute(&dataset, &fit.theta_hat, &fit.atoms)?;
                for w in &report.warnings {
                    log::warn!("{w}");
                }
                write_json(&out.join("variance.json"), &report)?;
            }
            output
        }
        Method::Lvcf => {
            let fit = partial_lik_fit_with(&dataset, CovariatePath::Lvcf, config.beta_bound)?;
            let output = FitOutput::from_baseline(&fit);
            write_json(&out.join("fit.json"), &output)?;
            output
        }
    };
    for w in &output.warnings {
        log::warn!("{w}");
    }
    if !output.converged {
        return Err(CliError::NotConverged(format!(
            "{} stopped after {} iterations with score norm {:e}; partial output in {}",
            output.method,
            output.iterations,
            output.score_norm,
            out.display()
        )));
    }
    Ok(output)
}

/// Runs the study and writes its reports. An invalid study (too many failed replications) is
/// written and then reported as an error.
pub fn mc_study(config: &StudyConfig, out: &Path) -> Result<crate::study::StudyReport> {
    let outcome = run_study(config)?;
    write_outcome(&outcome, out)?;
    for row in &outcome.report.rows {
        log::info!(
            "{}: bias {:.5} sd {:.5} coverage {:.3}/{:.3} over {} replications",
            row.estimator,
            row.bias,
            row.sd_beta,
            row.coverage_simple,
            row.coverage_full,
            row.replications - row.failures
        );
    }
    if !outcome.report.valid {
        return Err(CliError::NotConverged(
            "more than 10% of replications failed; study marked invalid".into(),
        ));
    }
    Ok(outcome.report)
}

pub fn compare_reports(a: &Path, b: &Path) -> Result<String> {
    let ra = read_report_csv(a)?;
    let rb = read_report_csv(b)?;
    Ok(compare(&ra, &rb))
}
