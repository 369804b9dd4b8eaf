//! Dataset, truth, fit and variance file formats.
//!
//! JSON output uses shortest round-trip float formatting, so every value reloads bit for bit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use jointcox_core::fit::FitResult;
use jointcox_core::{
    BaselineFit, Dataset, MeasurementGrid, SieveHazard, SimTruth, Subject, TransitionParams,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.into(),
        source,
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|source| CliError::Csv {
        path: path.into(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.into(),
        source,
    }
}

fn flush<W: Write>(w: &mut csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SubjectRow {
    id: u64,
    x: f64,
    delta: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    id: u64,
    measure_index: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    id: u64,
    latent_z: f64,
    #[serde(rename = "T")]
    t: Option<f64>,
    #[serde(rename = "C")]
    c: f64,
}

/// `subjects.csv` (`id,x,delta`) and `measurements.csv` (`id,measure_index,value`).
pub fn write_dataset_csv(dataset: &Dataset, subjects: &Path, measurements: &Path) -> Result<()> {
    let mut w = csv_writer(subjects)?;
    for s in dataset.subjects() {
        w.serialize(SubjectRow {
            id: s.id,
            x: s.x,
            delta: u8::from(s.delta),
        })
        .map_err(csv_err(subjects))?;
    }
    flush(&mut w, subjects)?;
    let mut w = csv_writer(measurements)?;
    for s in dataset.subjects() {
        for (k, &value) in s.measurements.iter().enumerate() {
            w.serialize(MeasurementRow {
                id: s.id,
                measure_index: k,
                value,
            })
            .map_err(csv_err(measurements))?;
        }
    }
    flush(&mut w, measurements)
}

/// Reads the CSV pair back; the grid and horizon are not part of the CSV files.
pub fn read_dataset_csv(
    subjects: &Path,
    measurements: &Path,
    grid: MeasurementGrid,
    tau: f64,
) -> Result<Dataset> {
    let mut values: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for row in csv_reader(measurements)?.deserialize() {
        let row: MeasurementRow = row.map_err(csv_err(measurements))?;
        values
            .entry(row.id)
            .or_default()
            .push((row.measure_index, row.value));
    }
    let mut out = Vec::new();
    for row in csv_reader(subjects)?.deserialize() {
        let row: SubjectRow = row.map_err(csv_err(subjects))?;
        let delta = match row.delta {
            0 => false,
            1 => true,
            d => {
                return Err(CliError::Validation(format!(
                    "subject {}: delta must be 0 or 1, got {d}",
                    row.id
                )))
            }
        };
        let mut m = values.remove(&row.id).unwrap_or_default();
        m.sort_by_key(|p| p.0);
        if m.iter().enumerate().any(|(k, p)| p.0 != k) {
            return Err(CliError::Validation(format!(
                "subject {}: measure_index must run 0, 1, 2, ... without gaps",
                row.id
            )));
        }
        out.push(Subject::new(
            row.id,
            row.x,
            delta,
            m.into_iter().map(|p| p.1).collect(),
        ));
    }
    if let Some(id) = values.keys().next() {
        return Err(CliError::Validation(format!(
            "measurements for unknown subject {id}"
        )));
    }
    Ok(Dataset::new(grid, out, tau)?)
}

/// `truths.csv` (`id,latent_z,T,C`); `T` is empty when no event occurs before the horizon.
pub fn write_truths_csv(truths: &[SimTruth], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for t in truths {
        w.serialize(TruthRow {
            id: t.id,
            latent_z: t.latent_z,
            t: t.event_time,
            c: t.censor_time,
        })
        .map_err(csv_err(path))?;
    }
    flush(&mut w, path)
}

pub fn read_truths_csv(path: &Path) -> Result<Vec<SimTruth>> {
    csv_reader(path)?
        .deserialize()
        .map(|row| {
            let r: TruthRow = row.map_err(csv_err(path))?;
            Ok(SimTruth {
                id: r.id,
                latent_z: r.latent_z,
                event_time: r.t,
                censor_time: r.c,
            })
        })
        .collect()
}

/// Written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub n: usize,
    pub events: usize,
    pub files: Vec<String>,
}

/// Method tags in fit output.
pub const NPML_TAG: &str = "npml";
pub const LVCF_TAG: &str = "lvcf-cox";

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub method: String,
    /// Transition parameters; absent for the comparator, which does not model them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<TransitionParams>,
    pub beta: f64,
    pub hazard: SieveHazard,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub score_norm: f64,
    pub iterations: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitOutput {
    pub fn from_npml(fit: &FitResult) -> Self {
        Self {
            method: NPML_TAG.into(),
            alpha: Some(fit.theta_hat.alpha),
            beta: fit.theta_hat.beta,
            hazard: fit.theta_hat.hazard.clone(),
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            score_norm: fit.score_norm,
            iterations: fit.iterations,
            warnings: fit.warnings.iter().map(ToString::to_string).collect(),
        }
    }

    pub fn from_baseline(fit: &BaselineFit) -> Self {
        Self {
            method: LVCF_TAG.into(),
            alpha: None,
            beta: fit.beta_pl,
            hazard: fit.breslow.clone(),
            loglik_trace: vec![fit.loglik],
            converged: fit.converged,
            score_norm: fit.score.abs(),
            iterations: fit.iterations,
            warnings: fit.warnings.iter().map(ToString::to_string).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointcox_core::{gen_dataset, SimConfig};

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (d, truths) = gen_dataset(&SimConfig {
            n: 40,
            ..SimConfig::default()
        })
        .unwrap();
        let (s, m, t) = (
            dir.path().join("s.csv"),
            dir.path().join("m.csv"),
            dir.path().join("t.csv"),
        );
        write_dataset_csv(&d, &s, &m).unwrap();
        let back = read_dataset_csv(&s, &m, d.grid().clone(), d.tau()).unwrap();
        assert_eq!(back, d);
        write_truths_csv(&truths, &t).unwrap();
        assert_eq!(read_truths_csv(&t).unwrap(), truths);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (d, _) = gen_dataset(&SimConfig {
            n: 25,
            ..SimConfig::default()
        })
        .unwrap();
        let p = dir.path().join("d.json");
        write_json(&p, &d).unwrap();
        let back: Dataset = read_json(&p).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn hash_depends_on_content() {
        let a = SimConfig::default();
        let b = SimConfig {
            seed: 9,
            ..SimConfig::default()
        };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
