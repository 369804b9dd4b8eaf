//! ECM maximization of the sieve pseudo likelihood.
//!
//! Each outer iteration computes posterior atoms for every subject at the current parameter
//! (E-step), then updates `α` in closed form and alternates the closed-form hazard update
//! `ΔΛ_k = (1/n) / W_n(x_k)` with a step-halved Newton step for `β`. The observed log likelihood
//! is tracked and must not decrease; termination requires both a small parameter change and a
//! small empirical score over the canonical probe basis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::baseline::nelson_aalen;
use crate::covariate::{
    expected_score_hessian, log_joint_density, log_normal_pdf, observed_mle_alpha,
    weighted_mle_alpha, AlphaBox, TransitionParams, ALPHA_DIM,
};
use crate::error::{Error, Result};
use crate::model::{Dataset, SieveHazard, Subject, Theta};
use crate::posterior::{
    atoms_for_split, ExponentSplit, PosteriorAtoms, TiltedMoments, DEFAULT_ORDER,
};
use crate::quadrature::GaussHermite;
use crate::variance::Probe;
use crate::Warning;

/// Tolerated per-iteration decrease of the observed log likelihood.
pub const ASCENT_TOL: f64 = 1e-8;

/// Settings for [`em_fit`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitConfig {
    /// Gauss–Hermite order `Q`.
    pub quadrature_order: usize,
    pub max_iter: usize,
    pub tol_param: f64,
    pub tol_score: f64,
    pub inner_cycles: usize,
    /// `|β| <= beta_bound`; zero freezes `β` at 0.
    pub beta_bound: f64,
    pub alpha_box: AlphaBox,
    pub step_halving_max: usize,
    /// Keep `α` at its initial value.
    pub freeze_alpha: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            quadrature_order: DEFAULT_ORDER,
            max_iter: 2000,
            tol_param: 1e-9,
            tol_score: 1e-6,
            inner_cycles: 3,
            beta_bound: 10.0,
            alpha_box: AlphaBox::default(),
            step_halving_max: 30,
            freeze_alpha: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.quadrature_order < 2 {
            return bad("quadrature order must be at least 2");
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1");
        }
        if !(self.tol_param > 0.0 && self.tol_score > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.inner_cycles < 1 {
            return bad("inner_cycles must be at least 1");
        }
        if !(self.beta_bound >= 0.0 && self.beta_bound.is_finite()) {
            return bad("beta bound must be finite and nonnegative");
        }
        self.alpha_box.validate()
    }
}

/// Outcome of [`em_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Theta,
    /// Observed log likelihood at the start and after every outer iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Max over canonical probes of `|S_n(θ̂)(h)|`, free coordinates only.
    pub score_norm: f64,
    pub warnings: Vec<Warning>,
    /// Posterior atoms at `θ̂`.
    pub atoms: Vec<PosteriorAtoms>,
    /// Computed upper bound for `Λ̂(τ)` (infinite when nobody is at risk at `τ`).
    pub hazard_bound: f64,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self
            .loglik_trace
            .last()
            .expect("trace holds the initial value")
    }
}

/// Index structure relating subjects, grid intervals and event times.
///
/// Event `k` lies in grid interval `j(k) = a_{x_k}`, i.e. `x_k ∈ (t_j, t_{j+1}]`. A subject with
/// `a_x = a` sees the observed value `z_{j+1}` on interval `j < a` and its latent value on
/// interval `a` up to its own `x`.
pub(crate) struct Layout {
    n: usize,
    times: Vec<f64>,
    /// `interval_first[j]` = first event index with `j(k) >= j`; length `G + 1`.
    interval_first: Vec<usize>,
    last: Vec<usize>,
    /// Number of events with `x_k <= x_i`.
    end: Vec<usize>,
    own_event: Vec<Option<usize>>,
    /// Subjects whose latent window lies in interval `j`, by decreasing `x`.
    latent_by_interval: Vec<Vec<usize>>,
}

impl Layout {
    pub(crate) fn new(dataset: &Dataset) -> Self {
        let grid = dataset.grid();
        let g = grid.len();
        let times = dataset.event_times();
        let interval_of: Vec<usize> = times
            .iter()
            .map(|&t| grid.last_index_unchecked(t))
            .collect();
        let interval_first = (0..=g)
            .map(|j| interval_of.partition_point(|&jk| jk < j))
            .collect();
        let subjects = dataset.subjects();
        let last: Vec<usize> = subjects.iter().map(|s| s.measurements.len() - 1).collect();
        let end = subjects
            .iter()
            .map(|s| times.partition_point(|&t| t <= s.x))
            .collect();
        let mut own_event = vec![None; subjects.len()];
        for (k, &i) in dataset.event_subjects().iter().enumerate() {
            own_event[i] = Some(k);
        }
        let mut latent_by_interval = vec![Vec::new(); g];
        for (i, &a) in last.iter().enumerate() {
            latent_by_interval[a].push(i);
        }
        for group in &mut latent_by_interval {
            group.sort_by(|&p, &q| subjects[q].x.total_cmp(&subjects[p].x).then(p.cmp(&q)));
        }
        Self {
            n: subjects.len(),
            times,
            interval_first,
            last,
            end,
            own_event,
            latent_by_interval,
        }
    }

    fn check_hazard(&self, hazard: &SieveHazard) -> Result<()> {
        if hazard.times() != self.times.as_slice() {
            return Err(Error::Domain(
                "hazard jumps must sit at the dataset's event times".into(),
            ));
        }
        Ok(())
    }

    /// Hazard mass per grid interval.
    fn interval_mass(&self, jumps: &[f64]) -> Vec<f64> {
        self.interval_first
            .windows(2)
            .map(|w| jumps[w[0]..w[1]].iter().sum())
            .collect()
    }

    /// Hazard mass inside subject `i`'s latent window.
    fn latent_mass(&self, i: usize, jumps: &[f64]) -> f64 {
        jumps[self.interval_first[self.last[i]]..self.end[i]]
            .iter()
            .sum()
    }

    fn split(
        &self,
        i: usize,
        subject: &Subject,
        jumps: &[f64],
        mass: &[f64],
        beta: f64,
    ) -> ExponentSplit {
        let a_obs = (0..self.last[i])
            .map(|j| mass[j] * (beta * subject.measurements[j + 1]).exp())
            .sum();
        ExponentSplit {
            a_obs,
            a_lat: self.latent_mass(i, jumps),
            own_jump: self.own_event[i].map_or(0.0, |k| jumps[k]),
        }
    }

    /// `W_n(x_k)` for every event time.
    fn w_all(&self, subjects: &[Subject], beta: f64, moments: &[TiltedMoments]) -> Vec<f64> {
        let g = self.latent_by_interval.len();
        let mut observed = vec![0.0; g];
        for (i, s) in subjects.iter().enumerate() {
            for j in 0..self.last[i] {
                observed[j] += (beta * s.measurements[j + 1]).exp();
            }
        }
        let mut w = vec![0.0; self.times.len()];
        for j in 0..g {
            let group = &self.latent_by_interval[j];
            let mut cursor = 0;
            let mut latent = 0.0;
            for k in (self.interval_first[j]..self.interval_first[j + 1]).rev() {
                while cursor < group.len() && subjects[group[cursor]].x >= self.times[k] {
                    latent += moments[group[cursor]].e0;
                    cursor += 1;
                }
                w[k] = (observed[j] + latent) / self.n as f64;
            }
        }
        w
    }

    /// EM objective in `β` at fixed hazard and atoms, with its first two derivatives.
    fn beta_objective(
        &self,
        subjects: &[Subject],
        atoms: &[PosteriorAtoms],
        beta: f64,
        jumps: &[f64],
    ) -> BetaObjective {
        let mass = self.interval_mass(jumps);
        let mut out = BetaObjective::default();
        for (i, s) in subjects.iter().enumerate() {
            let m = atoms[i].tilted_moments(beta);
            let a_lat = self.latent_mass(i, jumps);
            if s.delta {
                out.value += beta * m.mean;
                out.score += m.mean;
            }
            for j in 0..self.last[i] {
                let z = s.measurements[j + 1];
                let e = mass[j] * (beta * z).exp();
                out.value -= e;
                out.score -= e * z;
                out.info += e * z * z;
            }
            out.value -= a_lat * m.e0;
            out.score -= a_lat * m.e1;
            out.info += a_lat * m.e2;
        }
        let n = self.n as f64;
        out.value /= n;
        out.score /= n;
        out.info /= n;
        out
    }

    fn lambda_update(
        &self,
        subjects: &[Subject],
        atoms: &[PosteriorAtoms],
        beta: f64,
    ) -> Result<SieveHazard> {
        let moments: Vec<TiltedMoments> = atoms.iter().map(|a| a.tilted_moments(beta)).collect();
        let w = self.w_all(subjects, beta, &moments);
        let inv_n = 1.0 / self.n as f64;
        let mut jumps = Vec::with_capacity(w.len());
        for (k, wk) in w.iter().enumerate() {
            let jump = inv_n / wk;
            if !(*wk > 0.0) || !jump.is_finite() {
                return Err(Error::DegenerateRiskSet {
                    time: self.times[k],
                });
            }
            jumps.push(jump);
        }
        SieveHazard::new(self.times.clone(), jumps)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BetaObjective {
    value: f64,
    score: f64,
    info: f64,
}

fn check_atoms(dataset: &Dataset, atoms: &[PosteriorAtoms]) -> Result<()> {
    if atoms.len() != dataset.n() {
        return Err(Error::Domain(format!(
            "expected {} atom sets, got {}",
            dataset.n(),
            atoms.len()
        )));
    }
    Ok(())
}

/// `W_n(u) = (1/n) Σ_i E[e^{βZ_i(u)} 1{u <= x_i} | y_i]` at an event time `u`.
pub fn w_n(u: f64, dataset: &Dataset, atoms: &[PosteriorAtoms], beta: f64) -> Result<f64> {
    check_atoms(dataset, atoms)?;
    let layout = Layout::new(dataset);
    let k = layout
        .times
        .iter()
        .position(|&t| t == u)
        .ok_or_else(|| Error::Domain(format!("{u} is not an event time")))?;
    let moments: Vec<TiltedMoments> = atoms.iter().map(|a| a.tilted_moments(beta)).collect();
    Ok(layout.w_all(dataset.subjects(), beta, &moments)[k])
}

/// Closed-form hazard update `ΔΛ_k = (1/n) / W_n(x_k)`.
pub fn lambda_update(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    beta: f64,
) -> Result<SieveHazard> {
    dataset.require_events()?;
    check_atoms(dataset, atoms)?;
    Layout::new(dataset).lambda_update(dataset.subjects(), atoms, beta)
}

/// Derivative in `β` of the EM objective (scaled by `1/n`) at fixed hazard and atoms.
pub fn score_beta(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    beta: f64,
    hazard: &SieveHazard,
) -> Result<f64> {
    check_atoms(dataset, atoms)?;
    let layout = Layout::new(dataset);
    layout.check_hazard(hazard)?;
    Ok(layout
        .beta_objective(dataset.subjects(), atoms, beta, hazard.jumps())
        .score)
}

/// Negative second derivative of the EM objective in `β`.
pub fn info_beta(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    beta: f64,
    hazard: &SieveHazard,
) -> Result<f64> {
    check_atoms(dataset, atoms)?;
    let layout = Layout::new(dataset);
    layout.check_hazard(hazard)?;
    Ok(layout
        .beta_objective(dataset.subjects(), atoms, beta, hazard.jumps())
        .info)
}

/// EM objective `(1/n) Σ_i E_θ̃[ln l(y_i, Z; θ) | y_i]` with `θ̃` encoded in `atoms`.
pub fn em_objective(dataset: &Dataset, atoms: &[PosteriorAtoms], theta: &Theta) -> Result<f64> {
    check_atoms(dataset, atoms)?;
    let layout = Layout::new(dataset);
    layout.check_hazard(&theta.hazard)?;
    let jumps = theta.hazard.jumps();
    let base = layout.beta_objective(dataset.subjects(), atoms, theta.beta, jumps);
    let mut rest = 0.0;
    for (i, s) in dataset.subjects().iter().enumerate() {
        if let Some(k) = layout.own_event[i] {
            rest += jumps[k].ln();
        }
        let observed = log_joint_density(&s.measurements, &theta.alpha)?;
        let (mean, var) = crate::covariate::cond_latent_params(&s.measurements, &theta.alpha);
        rest += observed + atoms[i].expect(|z| log_normal_pdf(z, mean, var));
    }
    Ok(base.value + rest / dataset.n() as f64)
}

/// Observed-data log likelihood `Σ_i ln L^{(i)}(θ)` with the latent value integrated out by
/// `order`-point mode-centred quadrature.
pub fn observed_loglik(dataset: &Dataset, theta: &Theta, order: usize) -> Result<f64> {
    let layout = Layout::new(dataset);
    layout.check_hazard(&theta.hazard)?;
    let rule = GaussHermite::new(order.max(2));
    Ok(loglik_and_atoms(dataset, &layout, theta, &rule, false)?.0)
}

/// Log likelihood and (optionally) posterior atoms, sharing the exponent splits.
fn loglik_and_atoms(
    dataset: &Dataset,
    layout: &Layout,
    theta: &Theta,
    rule: &GaussHermite,
    keep_atoms: bool,
) -> Result<(f64, Vec<PosteriorAtoms>)> {
    let jumps = theta.hazard.jumps();
    let mass = layout.interval_mass(jumps);
    let mut total = 0.0;
    let mut atoms = Vec::with_capacity(if keep_atoms { dataset.n() } else { 0 });
    for (i, s) in dataset.subjects().iter().enumerate() {
        let split = layout.split(i, s, jumps, &mass, theta.beta);
        let history = log_joint_density(&s.measurements, &theta.alpha)?;
        let latent = match s.terminal {
            Some(z) => {
                let (mean, var) =
                    crate::covariate::cond_latent_params(&s.measurements, &theta.alpha);
                let tilt = if s.delta { theta.beta * z } else { 0.0 };
                tilt - split.a_lat * (theta.beta * z).exp() + log_normal_pdf(z, mean, var)
            }
            None => {
                let a = atoms_for_split(s, &split, theta, rule)?;
                let l = a.log_integral;
                if keep_atoms {
                    atoms.push(a);
                }
                l
            }
        };
        if let (true, Some(z)) = (keep_atoms, s.terminal) {
            atoms.push(PosteriorAtoms::degenerate(z));
        }
        let own = if s.delta { split.own_jump.ln() } else { 0.0 };
        let contribution = own - split.a_obs + history + latent;
        if contribution.is_nan() || contribution == f64::INFINITY {
            return Err(Error::NonFinite {
                what: "log likelihood contribution",
                id: Some(s.id),
            });
        }
        total += contribution;
    }
    Ok((total, atoms))
}

/// Posterior atoms for every subject at `theta`, in subject order.
pub fn e_step(dataset: &Dataset, theta: &Theta, order: usize) -> Result<Vec<PosteriorAtoms>> {
    let layout = Layout::new(dataset);
    layout.check_hazard(&theta.hazard)?;
    let rule = GaussHermite::new(order.max(2));
    Ok(loglik_and_atoms(dataset, &layout, theta, &rule, true)?.1)
}

/// Components of the empirical score at `θ` with conditional expectations taken under `atoms`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComponents {
    pub alpha: [f64; ALPHA_DIM],
    pub beta: f64,
    /// Score in the direction of the indicator of each event time.
    pub hazard: Vec<f64>,
}

impl ScoreComponents {
    /// `S_n(θ)(h) = h_1ᵀ S_1 + h_2 S_2 + S_3(h_3)`
    pub fn apply(&self, probe: &Probe) -> f64 {
        let a: f64 = probe.h1.iter().zip(&self.alpha).map(|(h, s)| h * s).sum();
        let c: f64 = probe.h3.iter().zip(&self.hazard).map(|(h, s)| h * s).sum();
        a + probe.h2 * self.beta + c
    }
}

pub fn score_components(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    theta: &Theta,
) -> Result<ScoreComponents> {
    check_atoms(dataset, atoms)?;
    let layout = Layout::new(dataset);
    layout.check_hazard(&theta.hazard)?;
    Ok(components_with(&layout, dataset, atoms, theta))
}

fn components_with(
    layout: &Layout,
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    theta: &Theta,
) -> ScoreComponents {
    let n = dataset.n() as f64;
    let mut alpha = [0.0; ALPHA_DIM];
    for (s, a) in dataset.subjects().iter().zip(atoms) {
        let (g, _) = expected_score_hessian(s, a, &theta.alpha);
        for j in 0..ALPHA_DIM {
            alpha[j] += g[j] / n;
        }
    }
    let jumps = theta.hazard.jumps();
    let beta = layout
        .beta_objective(dataset.subjects(), atoms, theta.beta, jumps)
        .score;
    let moments: Vec<TiltedMoments> = atoms.iter().map(|a| a.tilted_moments(theta.beta)).collect();
    let w = layout.w_all(dataset.subjects(), theta.beta, &moments);
    let hazard = jumps
        .iter()
        .zip(&w)
        .map(|(dl, wk)| 1.0 / n - dl * wk)
        .collect();
    ScoreComponents {
        alpha,
        beta,
        hazard,
    }
}

/// Empirical score `S_{n,θ̃}(θ)(h)`; `θ̃` enters through `atoms`.
pub fn score_full(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    theta: &Theta,
    probe: &Probe,
) -> Result<f64> {
    if probe.h3.len() != dataset.event_count() {
        return Err(Error::Domain(format!(
            "probe has {} hazard values for {} event times",
            probe.h3.len(),
            dataset.event_count()
        )));
    }
    Ok(score_components(dataset, atoms, theta)?.apply(probe))
}

/// Max of `|score|` over the canonical basis, skipping coordinates held on a box face.
fn certificate(
    components: &ScoreComponents,
    free_alpha: [bool; ALPHA_DIM],
    free_beta: bool,
) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..ALPHA_DIM {
        if free_alpha[j] {
            worst = worst.max(components.alpha[j].abs());
        }
    }
    if free_beta {
        worst = worst.max(components.beta.abs());
    }
    components.hazard.iter().fold(worst, |m, v| m.max(v.abs()))
}

fn param_change(a: &Theta, b: &Theta) -> f64 {
    let da = a
        .alpha
        .to_array()
        .iter()
        .zip(b.alpha.to_array())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let dh = a
        .hazard
        .cumulative()
        .iter()
        .zip(b.hazard.cumulative())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    da.max((a.beta - b.beta).abs()).max(dh)
}

fn interpolate(from: &Theta, to: &Theta, t: f64) -> Result<Theta> {
    let a0 = from.alpha.to_array();
    let a1 = to.alpha.to_array();
    let mut alpha = [0.0; ALPHA_DIM];
    for j in 0..ALPHA_DIM {
        alpha[j] = a0[j] + t * (a1[j] - a0[j]);
    }
    let jumps = from
        .hazard
        .jumps()
        .iter()
        .zip(to.hazard.jumps())
        .map(|(x, y)| x + t * (y - x))
        .collect();
    Ok(Theta {
        alpha: TransitionParams::from_array(alpha),
        beta: from.beta + t * (to.beta - from.beta),
        hazard: SieveHazard::new(from.hazard.times().to_vec(), jumps)?,
    })
}

/// Starting value: observed-transition MLE for `α`, `β = 0` and the Nelson–Aalen hazard.
pub fn initial_theta(dataset: &Dataset, config: &FitConfig) -> Result<Theta> {
    let alpha = observed_mle_alpha(dataset, &config.alpha_box)?.alpha;
    Ok(Theta {
        alpha,
        beta: 0.0_f64.max(-config.beta_bound).min(config.beta_bound),
        hazard: nelson_aalen(dataset)?,
    })
}

/// Upper bound `(p/n) / (m · P_n(X >= τ))` on `Λ̂(τ)`, with `m` the smallest conditional
/// exponential among subjects still at risk at `τ`.
fn hazard_bound(layout: &Layout, dataset: &Dataset, atoms: &[PosteriorAtoms], beta: f64) -> f64 {
    let tau = dataset.tau();
    let at_tau: Vec<usize> = (0..dataset.n())
        .filter(|&i| dataset.subjects()[i].x >= tau)
        .collect();
    if at_tau.is_empty() {
        return f64::INFINITY;
    }
    let mut m = f64::INFINITY;
    for &i in &at_tau {
        let s = &dataset.subjects()[i];
        for j in 0..layout.last[i] {
            if layout.interval_first[j] < layout.interval_first[j + 1] {
                m = m.min((beta * s.measurements[j + 1]).exp());
            }
        }
        if layout.interval_first[layout.last[i]] < layout.end[i] {
            m = m.min(atoms[i].tilted_moments(beta).e0);
        }
    }
    let n = dataset.n() as f64;
    let events = layout.times.len() as f64;
    (events / n) / (m * at_tau.len() as f64 / n)
}

/// Fits `θ = (α, β, Λ)` by ECM. `init = None` uses [`initial_theta`].
pub fn em_fit(dataset: &Dataset, init: Option<Theta>, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    dataset.require_events()?;
    let layout = Layout::new(dataset);
    let rule = GaussHermite::new(config.quadrature_order);
    let subjects = dataset.subjects();
    let bound = config.beta_bound;

    let mut theta = match init {
        Some(t) => t,
        None => initial_theta(dataset, config)?,
    };
    layout.check_hazard(&theta.hazard)?;
    theta.alpha.validate()?;
    theta.beta = theta.beta.max(-bound).min(bound);

    let mut warnings: Vec<Warning> = Vec::new();
    let (mut loglik, mut atoms) = loglik_and_atoms(dataset, &layout, &theta, &rule, true)?;
    let mut trace = vec![loglik];
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut score_norm;
    let mut iterations = 0;

    loop {
        let components = components_with(&layout, dataset, &atoms, &theta);
        let free_alpha = if config.freeze_alpha {
            [false; ALPHA_DIM]
        } else {
            let active = config.alpha_box.active(&theta.alpha);
            let mut free = [true; ALPHA_DIM];
            for j in 0..ALPHA_DIM {
                free[j] = !active[j];
            }
            free
        };
        let free_beta = theta.beta.abs() < bound;
        score_norm = certificate(&components, free_alpha, free_beta);
        if change < config.tol_param && score_norm < config.tol_score {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            warnings.push(Warning::NotConverged { iterations });
            break;
        }
        iterations += 1;

        // M-step
        let alpha = if config.freeze_alpha {
            theta.alpha
        } else {
            let fit = weighted_mle_alpha(dataset, &atoms, &config.alpha_box)?;
            for w in fit.warnings {
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            fit.alpha
        };
        let mut beta = theta.beta;
        for _ in 0..config.inner_cycles {
            let hazard = layout.lambda_update(subjects, &atoms, beta)?;
            beta = newton_beta(
                &layout,
                subjects,
                &atoms,
                beta,
                hazard.jumps(),
                bound,
                config.step_halving_max,
            );
        }
        let hazard = layout.lambda_update(subjects, &atoms, beta)?;
        let proposal = Theta {
            alpha,
            beta,
            hazard,
        };

        // ascent safeguard on the observed likelihood
        let mut t = 1.0;
        let mut halvings = 0;
        let (next, next_ll, next_atoms) = loop {
            let cand = if halvings == 0 {
                proposal.clone()
            } else {
                interpolate(&theta, &proposal, t)?
            };
            let (ll, a) = loglik_and_atoms(dataset, &layout, &cand, &rule, true)?;
            if ll >= loglik - 1e-10 {
                break (cand, ll, a);
            }
            if halvings >= config.step_halving_max {
                if ll >= loglik - ASCENT_TOL {
                    break (cand, ll, a);
                }
                return Err(Error::AscentFailure {
                    iteration: iterations,
                    before: loglik,
                    after: ll,
                    halvings,
                });
            }
            halvings += 1;
            t *= 0.5;
        };
        change = param_change(&theta, &next);
        theta = next;
        loglik = next_ll;
        atoms = next_atoms;
        trace.push(loglik);
    }

    let hazard_bound = hazard_bound(&layout, dataset, &atoms, theta.beta);
    let tail = theta.hazard.eval(dataset.tau());
    if tail > hazard_bound * (1.0 + 1e-8) {
        warnings.push(Warning::HazardBoundExceeded {
            value: tail,
            bound: hazard_bound,
        });
    }
    if bound > 0.0 && theta.beta.abs() >= bound {
        warnings.push(Warning::BetaOnBoundary { beta: theta.beta });
    }
    Ok(FitResult {
        theta_hat: theta,
        loglik_trace: trace,
        iterations,
        converged,
        score_norm,
        warnings,
        atoms,
        hazard_bound,
    })
}

/// One projected Newton step for `β` on the EM objective, halved until the objective rises.
fn newton_beta(
    layout: &Layout,
    subjects: &[Subject],
    atoms: &[PosteriorAtoms],
    beta: f64,
    jumps: &[f64],
    bound: f64,
    max_halvings: usize,
) -> f64 {
    let cur = layout.beta_objective(subjects, atoms, beta, jumps);
    if !(cur.info > 0.0) || cur.score == 0.0 {
        return beta;
    }
    let target = (beta + cur.score / cur.info).max(-bound).min(bound);
    let mut step = target - beta;
    for _ in 0..=max_halvings {
        let cand = beta + step;
        let next = layout.beta_objective(subjects, atoms, cand, jumps);
        if next.value >= cur.value {
            return cand;
        }
        step *= 0.5;
    }
    beta
}
