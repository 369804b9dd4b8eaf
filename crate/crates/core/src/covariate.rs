//! Gaussian first-order transition model for the longitudinal covariate.
//!
//! `Z_0 ~ N(mu0, s0sq)` and `Z_j | Z_{j-1} ~ N(a + b Z_{j-1}, ssq)`. The transition step is
//! indexed by measurement number and ignores calendar spacing between grid times.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Dataset, Subject};
use crate::posterior::PosteriorAtoms;
use crate::Warning;

/// Number of transition-model parameters.
pub const ALPHA_DIM: usize = 5;
/// Default floor applied to both variance components.
pub const VAR_FLOOR: f64 = 1e-8;

pub type AlphaVector = [f64; ALPHA_DIM];
pub type AlphaMatrix = [[f64; ALPHA_DIM]; ALPHA_DIM];

/// `α = (mu0, s0sq, a, b, ssq)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransitionParams {
    pub mu0: f64,
    pub s0sq: f64,
    pub a: f64,
    pub b: f64,
    pub ssq: f64,
}

impl TransitionParams {
    pub const NAMES: [&'static str; ALPHA_DIM] = ["mu0", "s0sq", "a", "b", "ssq"];

    pub fn new(mu0: f64, s0sq: f64, a: f64, b: f64, ssq: f64) -> Self {
        Self {
            mu0,
            s0sq,
            a,
            b,
            ssq,
        }
    }

    pub fn to_array(&self) -> AlphaVector {
        [self.mu0, self.s0sq, self.a, self.b, self.ssq]
    }

    pub fn from_array(v: AlphaVector) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("transition parameters must be finite".into()));
        }
        if !(self.s0sq > 0.0 && self.ssq > 0.0) {
            return Err(Error::Domain(format!(
                "variances must be positive (s0sq = {}, ssq = {})",
                self.s0sq, self.ssq
            )));
        }
        Ok(())
    }
}

/// Compact parameter box for `α`; variance lower bounds double as the variance floor.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaBox {
    pub lower: AlphaVector,
    pub upper: AlphaVector,
}

impl Default for AlphaBox {
    fn default() -> Self {
        Self {
            lower: [-100.0, VAR_FLOOR, -100.0, -10.0, VAR_FLOOR],
            upper: [100.0, 1e4, 100.0, 10.0, 1e4],
        }
    }
}

impl AlphaBox {
    pub fn validate(&self) -> Result<()> {
        for j in 0..ALPHA_DIM {
            if !(self.lower[j] <= self.upper[j]) {
                return Err(Error::InvalidConfig(format!(
                    "alpha box for {} is empty",
                    TransitionParams::NAMES[j]
                )));
            }
        }
        if !(self.lower[1] > 0.0 && self.lower[4] > 0.0) {
            return Err(Error::InvalidConfig(
                "variance floors must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn project(&self, alpha: TransitionParams) -> TransitionParams {
        let mut v = alpha.to_array();
        for j in 0..ALPHA_DIM {
            v[j] = v[j].max(self.lower[j]).min(self.upper[j]);
        }
        TransitionParams::from_array(v)
    }

    pub fn contains(&self, alpha: &TransitionParams) -> bool {
        alpha
            .to_array()
            .iter()
            .enumerate()
            .all(|(j, v)| *v >= self.lower[j] && *v <= self.upper[j])
    }

    /// Coordinates sitting on a face of the box.
    pub fn active(&self, alpha: &TransitionParams) -> [bool; ALPHA_DIM] {
        let v = alpha.to_array();
        let mut out = [false; ALPHA_DIM];
        for j in 0..ALPHA_DIM {
            out[j] = v[j] <= self.lower[j] || v[j] >= self.upper[j];
        }
        out
    }
}

/// `ln N(x; mean, var)`
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var
}

/// `ln f(z_0, ..., z_m; α)`
pub fn log_joint_density(values: &[f64], alpha: &TransitionParams) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log_joint_density needs at least z_0".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("covariate values must be finite".into()));
    }
    alpha.validate()?;
    let mut out = log_normal_pdf(values[0], alpha.mu0, alpha.s0sq);
    for w in values.windows(2) {
        out += log_normal_pdf(w[1], alpha.a + alpha.b * w[0], alpha.ssq);
    }
    Ok(out)
}

/// Conditional law of the latent next value given the history: `(a + b z_last, ssq)`.
pub fn cond_latent_params(history: &[f64], alpha: &TransitionParams) -> (f64, f64) {
    let last = *history.last().expect("history must be nonempty");
    (alpha.a + alpha.b * last, alpha.ssq)
}

/// Gradient of [`log_joint_density`] in `α`.
pub fn score_alpha(values: &[f64], alpha: &TransitionParams) -> AlphaVector {
    let mut g = initial_score(values[0], alpha);
    for w in values.windows(2) {
        add_transition_score(&mut g, w[0], w[1], alpha, 1.0);
    }
    g
}

/// Hessian of [`log_joint_density`] in `α`.
pub fn hessian_alpha(values: &[f64], alpha: &TransitionParams) -> AlphaMatrix {
    let mut h = initial_hessian(values[0], alpha);
    for w in values.windows(2) {
        add_transition_hessian(&mut h, w[0], w[1], alpha, 1.0);
    }
    h
}

fn initial_score(z0: f64, alpha: &TransitionParams) -> AlphaVector {
    let r = z0 - alpha.mu0;
    let v = alpha.s0sq;
    [r / v, -0.5 / v + 0.5 * r * r / (v * v), 0.0, 0.0, 0.0]
}

fn initial_hessian(z0: f64, alpha: &TransitionParams) -> AlphaMatrix {
    let r = z0 - alpha.mu0;
    let v = alpha.s0sq;
    let mut h = [[0.0; ALPHA_DIM]; ALPHA_DIM];
    h[0][0] = -1.0 / v;
    h[0][1] = -r / (v * v);
    h[1][0] = h[0][1];
    h[1][1] = 0.5 / (v * v) - r * r / (v * v * v);
    h
}

fn add_transition_score(
    g: &mut AlphaVector,
    prev: f64,
    next: f64,
    alpha: &TransitionParams,
    w: f64,
) {
    let r = next - alpha.a - alpha.b * prev;
    let s = alpha.ssq;
    g[2] += w * r / s;
    g[3] += w * r * prev / s;
    g[4] += w * (-0.5 / s + 0.5 * r * r / (s * s));
}

fn add_transition_hessian(
    h: &mut AlphaMatrix,
    prev: f64,
    next: f64,
    alpha: &TransitionParams,
    w: f64,
) {
    let r = next - alpha.a - alpha.b * prev;
    let s = alpha.ssq;
    let s2 = s * s;
    let entries = [
        (2, 2, -1.0 / s),
        (2, 3, -prev / s),
        (3, 3, -prev * prev / s),
        (2, 4, -r / s2),
        (3, 4, -r * prev / s2),
        (4, 4, 0.5 / s2 - r * r / (s2 * s)),
    ];
    for (i, j, v) in entries {
        h[i][j] += w * v;
        if i != j {
            h[j][i] += w * v;
        }
    }
}

/// Conditional expectation of the complete-data score and Hessian for one subject, with the
/// latent value distributed according to `atoms`.
pub fn expected_score_hessian(
    subject: &Subject,
    atoms: &PosteriorAtoms,
    alpha: &TransitionParams,
) -> (AlphaVector, AlphaMatrix) {
    let observed = &subject.measurements;
    let mut g = score_alpha(observed, alpha);
    let mut h = hessian_alpha(observed, alpha);
    let last = subject.last_measurement();
    for (z, w) in atoms.iter() {
        add_transition_score(&mut g, last, z, alpha, w);
        add_transition_hessian(&mut h, last, z, alpha, w);
    }
    (g, h)
}

/// Weighted complete-data maximizer of the transition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFit {
    pub alpha: TransitionParams,
    pub warnings: Vec<Warning>,
}

/// M-step for `α`: Gaussian MLE over observed transitions plus one latent transition per
/// subject weighted by its posterior atoms, projected onto `bounds`.
pub fn weighted_mle_alpha(
    dataset: &Dataset,
    atoms: &[PosteriorAtoms],
    bounds: &AlphaBox,
) -> Result<AlphaFit> {
    if atoms.len() != dataset.n() {
        return Err(Error::Domain(format!(
            "expected {} atom sets, got {}",
            dataset.n(),
            atoms.len()
        )));
    }
    transition_mle(dataset, Some(atoms), bounds)
}

/// Same estimator restricted to fully observed transitions; used to initialize the fit.
pub fn observed_mle_alpha(dataset: &Dataset, bounds: &AlphaBox) -> Result<AlphaFit> {
    transition_mle(dataset, None, bounds)
}

fn transition_mle(
    dataset: &Dataset,
    atoms: Option<&[PosteriorAtoms]>,
    bounds: &AlphaBox,
) -> Result<AlphaFit> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: subjects.len(),
        });
    }
    let mut warnings = Vec::new();
    let n = subjects.len() as f64;

    let mu0 = subjects.iter().map(|s| s.measurements[0]).sum::<f64>() / n;
    let s0sq = subjects
        .iter()
        .map(|s| {
            let r = s.measurements[0] - mu0;
            r * r
        })
        .sum::<f64>()
        / n;

    // Each subject contributes observed pairs with weight 1 and, when atoms are given, one
    // latent pair per atom.
    let for_each_pair = |f: &mut dyn FnMut(f64, f64, f64)| {
        for (i, s) in subjects.iter().enumerate() {
            for w in s.measurements.windows(2) {
                f(w[0], w[1], 1.0);
            }
            if let Some(atoms) = atoms {
                let last = s.last_measurement();
                for (z, w) in atoms[i].iter() {
                    f(last, z, w);
                }
            }
        }
    };

    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for_each_pair(&mut |x, y, w| {
        sw += w;
        sx += w * x;
        sy += w * y;
    });

    let (a, b, ssq) = if sw <= 0.0 {
        warnings.push(Warning::NoTransitions);
        (0.0, 0.0, s0sq)
    } else {
        let (mx, my) = (sx / sw, sy / sw);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for_each_pair(&mut |x, y, w| {
            sxx += w * (x - mx) * (x - mx);
            sxy += w * (x - mx) * (y - my);
        });
        let b_raw = if sxx <= 1e-12 * sw * (1.0 + mx * mx) {
            warnings.push(Warning::FlatTransitionDesign);
            0.0
        } else {
            sxy / sxx
        };
        let b = b_raw.max(bounds.lower[3]).min(bounds.upper[3]);
        let a = (my - b * mx).max(bounds.lower[2]).min(bounds.upper[2]);
        let mut ss = 0.0;
        for_each_pair(&mut |x, y, w| {
            let r = y - a - b * x;
            ss += w * r * r;
        });
        (a, b, ss / sw)
    };

    if s0sq < bounds.lower[1] {
        warnings.push(Warning::VarianceFloored { component: "s0sq" });
    }
    if ssq < bounds.lower[4] {
        warnings.push(Warning::VarianceFloored { component: "ssq" });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let alpha = bounds.project(TransitionParams::new(mu0, s0sq, a, b, ssq));
    Ok(AlphaFit { alpha, warnings })
}
