//! Classical comparator: Cox partial likelihood with a fully specified covariate path plus the
//! Breslow cumulative hazard. The default path imputes the missing terminal value by carrying
//! the last measurement forward.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{CovariateValue, Dataset, MeasurementGrid, SieveHazard, Subject};
use crate::Warning;

/// Score tolerance for partial-likelihood convergence.
pub const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;

/// How the comparator evaluates `Z_j(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariatePath {
    /// Last measured value at or before `u`.
    #[default]
    Lvcf,
    /// Next-value step path with the known terminal value in the latent window.
    FullInformation,
}

/// Last measurement at or before `u`, never latent.
pub fn lvcf_value(subject: &Subject, u: f64, grid: &MeasurementGrid) -> f64 {
    if u <= 0.0 {
        return subject.measurements[0];
    }
    let k = grid
        .last_index_unchecked(u)
        .min(subject.measurements.len() - 1);
    subject.measurements[k]
}

fn path_value(
    subject: &Subject,
    u: f64,
    grid: &MeasurementGrid,
    path: CovariatePath,
) -> Result<f64> {
    match path {
        CovariatePath::Lvcf => Ok(lvcf_value(subject, u, grid)),
        CovariatePath::FullInformation => match subject.covariate_at_unchecked(u, grid) {
            CovariateValue::Observed(v) => Ok(v),
            CovariateValue::Latent => subject.terminal.ok_or_else(|| Error::InvalidSubject {
                id: subject.id,
                reason: "full-information path needs the terminal value".into(),
            }),
        },
    }
}

/// Covariates of the risk set at each event time, `(failing subject's value, at-risk values)`.
struct RiskSets {
    times: Vec<f64>,
    failing: Vec<f64>,
    at_risk: Vec<Vec<f64>>,
}

impl RiskSets {
    fn build(dataset: &Dataset, path: CovariatePath) -> Result<Self> {
        let grid = dataset.grid();
        let times = dataset.event_times();
        let mut failing = Vec::with_capacity(times.len());
        let mut at_risk = Vec::with_capacity(times.len());
        for (&t, &i) in times.iter().zip(&dataset.event_subjects()) {
            failing.push(path_value(&dataset.subjects()[i], t, grid, path)?);
            let mut zs = Vec::new();
            for s in dataset.subjects().iter().filter(|s| s.x >= t) {
                zs.push(path_value(s, t, grid, path)?);
            }
            if zs.is_empty() {
                return Err(Error::EmptyRiskSet { time: t });
            }
            at_risk.push(zs);
        }
        Ok(Self {
            times,
            failing,
            at_risk,
        })
    }

    /// Log partial likelihood, score and information at `beta`.
    fn evaluate(&self, beta: f64) -> (f64, f64, f64) {
        let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
        for (zi, zs) in self.failing.iter().zip(&self.at_risk) {
            // centre at the risk-set mean for location invariance and overflow safety
            let centre = zs.iter().sum::<f64>() / zs.len() as f64;
            let top = zs
                .iter()
                .map(|z| beta * (z - centre))
                .fold(f64::NEG_INFINITY, f64::max);
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for z in zs {
                let c = z - centre;
                let e = (beta * c - top).exp();
                s0 += e;
                s1 += e * c;
                s2 += e * c * c;
            }
            let mean = s1 / s0;
            let ci = zi - centre;
            ll += beta * ci - top - s0.ln();
            score += ci - mean;
            info += (s2 / s0 - mean * mean).max(0.0);
        }
        (ll, score, info)
    }
}

/// Partial-likelihood fit with its Breslow hazard.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub beta_pl: f64,
    pub breslow: SieveHazard,
    pub iterations: usize,
    pub converged: bool,
    pub score: f64,
    pub information: f64,
    pub loglik: f64,
    pub warnings: Vec<Warning>,
}

/// Newton–Raphson on the log partial likelihood using LVCF covariates and `|β| <= 10`.
pub fn partial_lik_fit(dataset: &Dataset) -> Result<BaselineFit> {
    partial_lik_fit_with(dataset, CovariatePath::Lvcf, 10.0)
}

/// Newton–Raphson with step halving on `[-beta_bound, beta_bound]`. Reaching the boundary
/// (monotone likelihood) yields a flagged, non-converged fit rather than an error.
pub fn partial_lik_fit_with(
    dataset: &Dataset,
    path: CovariatePath,
    beta_bound: f64,
) -> Result<BaselineFit> {
    dataset.require_events()?;
    if !(beta_bound >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "beta bound must be >= 0, got {beta_bound}"
        )));
    }
    let sets = RiskSets::build(dataset, path)?;
    let mut warnings = Vec::new();
    let mut beta = 0.0_f64.max(-beta_bound).min(beta_bound);
    let (mut ll, mut score, mut info) = sets.evaluate(beta);
    let mut iterations = 0;
    let mut converged = false;
    let flat = info <= 1e-14 * sets.times.len() as f64;
    if flat {
        warnings.push(Warning::FlatLikelihood);
        converged = score.abs() <= SCORE_TOL;
    }
    while !flat && iterations < MAX_ITER {
        if score.abs() <= SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let target = beta + score / info;
        let mut step = target.max(-beta_bound).min(beta_bound) - beta;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = beta + step;
            let (l, s, i) = sets.evaluate(cand);
            debug_assert!(i >= 0.0, "partial likelihood must be concave");
            if l >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = l;
                score = s;
                info = i;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        let at_bound = beta.abs() >= beta_bound && score * beta > 0.0;
        if at_bound {
            warnings.push(Warning::BetaOnBoundary { beta });
            break;
        }
        if !accepted || info <= 0.0 {
            break;
        }
    }
    let breslow = breslow_with(dataset, beta, path)?;
    Ok(BaselineFit {
        beta_pl: beta,
        breslow,
        iterations,
        converged,
        score,
        information: info,
        loglik: ll,
        warnings,
    })
}

/// Breslow estimator with LVCF covariates.
pub fn breslow(dataset: &Dataset, beta: f64) -> Result<SieveHazard> {
    breslow_with(dataset, beta, CovariatePath::Lvcf)
}

/// Jump `1 / Σ_{j: x_j >= x_k} e^{β Z_j(x_k)}` at each event time.
pub fn breslow_with(dataset: &Dataset, beta: f64, path: CovariatePath) -> Result<SieveHazard> {
    if !beta.is_finite() {
        return Err(Error::Domain("beta must be finite".into()));
    }
    let grid = dataset.grid();
    let times = dataset.event_times();
    let mut jumps = Vec::with_capacity(times.len());
    for &t in &times {
        let mut denom = 0.0;
        let mut any = false;
        for s in dataset.subjects().iter().filter(|s| s.x >= t) {
            denom += (beta * path_value(s, t, grid, path)?).exp();
            any = true;
        }
        if !any {
            return Err(Error::EmptyRiskSet { time: t });
        }
        jumps.push(1.0 / denom);
    }
    SieveHazard::new(times, jumps)
}

/// `Σ_{x_k <= t} 1 / #{j : x_j >= x_k}`
pub fn nelson_aalen(dataset: &Dataset) -> Result<SieveHazard> {
    let times = dataset.event_times();
    let mut jumps = Vec::with_capacity(times.len());
    for &t in &times {
        let at_risk = dataset.subjects().iter().filter(|s| s.x >= t).count();
        if at_risk == 0 {
            return Err(Error::EmptyRiskSet { time: t });
        }
        jumps.push(1.0 / at_risk as f64);
    }
    SieveHazard::new(times, jumps)
}
