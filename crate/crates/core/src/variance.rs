//! Variance estimation from the discretized empirical information operator.
//!
//! A probe `h = (h₁, h₂, h₃)` carries a direction in `α`, one in `β` and a function on the event
//! times. The operator splits into an `α` block `A` and a joint `(β, Λ)` block `B` acting on
//! `(h₂, h₃(x₁), …, h₃(x_K))`. Variances follow from solving `σ̂ h = g` and evaluating
//! `Σ_k g₃(x_k) h₃(x_k) ΔΛ̂_k + g₂ h₂ + g₁ᵀ h₁`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::covariate::{expected_score_hessian, ALPHA_DIM};
use crate::error::{Error, Result};
use crate::linalg::{cond1, symmetric_eigenvalues, Lu, Matrix};
use crate::model::{CovariateValue, Dataset, Theta};
use crate::posterior::PosteriorAtoms;
use crate::Warning;

/// Operators with a 1-norm condition number above this are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Direction `h = (h₁, h₂, h₃)` with `h₃` given at the event times.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub h1: [f64; ALPHA_DIM],
    pub h2: f64,
    pub h3: Vec<f64>,
}

impl Probe {
    pub fn zeros(events: usize) -> Self {
        Self {
            h1: [0.0; ALPHA_DIM],
            h2: 0.0,
            h3: vec![0.0; events],
        }
    }

    /// `(0, 1, 0)`
    pub fn beta(events: usize) -> Self {
        Self {
            h2: 1.0,
            ..Self::zeros(events)
        }
    }

    /// `(e_j, 0, 0)`
    pub fn alpha_axis(j: usize, events: usize) -> Self {
        let mut p = Self::zeros(events);
        p.h1[j] = 1.0;
        p
    }

    /// `(0, 0, 1{x_k = x_m})`
    pub fn hazard_axis(m: usize, events: usize) -> Self {
        let mut p = Self::zeros(events);
        p.h3[m] = 1.0;
        p
    }

    /// `(0, 0, 1_{[0, t]})`
    pub fn cumulative_hazard(t: f64, times: &[f64]) -> Self {
        Self {
            h3: times
                .iter()
                .map(|&x| if x <= t { 1.0 } else { 0.0 })
                .collect(),
            ..Self::zeros(times.len())
        }
    }

    /// Unit `α` axes, the `β` axis, then the indicator of each event time.
    pub fn canonical_basis(events: usize) -> Vec<Self> {
        let mut basis: Vec<Self> = (0..ALPHA_DIM)
            .map(|j| Self::alpha_axis(j, events))
            .collect();
        basis.push(Self::beta(events));
        basis.extend((0..events).map(|m| Self::hazard_axis(m, events)));
        basis
    }

    pub fn is_finite(&self) -> bool {
        self.h1
            .iter()
            .chain(core::iter::once(&self.h2))
            .chain(&self.h3)
            .all(|v| v.is_finite())
    }

    fn joint(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.h3.len());
        v.push(self.h2);
        v.extend_from_slice(&self.h3);
        v
    }

    fn sup_norm(&self) -> f64 {
        self.h1
            .iter()
            .chain(core::iter::once(&self.h2))
            .chain(&self.h3)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Finite matrix form of the estimated information operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedOperator {
    /// `α` block, `-(1/n) Σ_i E_i[∂²_α ln f]`.
    pub a: Matrix,
    /// `(β, Λ)` block on `(h₂, h₃(x₁), …, h₃(x_K))`.
    pub b: Matrix,
    /// Hazard jumps `ΔΛ̂_k` used as integration weights.
    pub dl: Vec<f64>,
}

/// Assembles `A` and `B` at `theta_hat` with conditional expectations taken under `atoms`.
pub fn build_sigma_hat(
    dataset: &Dataset,
    theta_hat: &Theta,
    atoms: &[PosteriorAtoms],
) -> Result<DiscretizedOperator> {
    let n = dataset.n();
    if atoms.len() != n {
        return Err(Error::Domain(format!(
            "expected {n} atom sets, got {}",
            atoms.len()
        )));
    }
    if theta_hat.hazard.times() != dataset.event_times().as_slice() {
        return Err(Error::Domain(
            "hazard jumps must sit at the dataset's event times".into(),
        ));
    }
    let nf = n as f64;
    let beta = theta_hat.beta;
    let dl = theta_hat.hazard.jumps().to_vec();
    let times = theta_hat.hazard.times();
    let k = dl.len();

    let mut a = Matrix::zeros(ALPHA_DIM, ALPHA_DIM);
    for (s, at) in dataset.subjects().iter().zip(atoms) {
        let (_, h) = expected_score_hessian(s, at, &theta_hat.alpha);
        for r in 0..ALPHA_DIM {
            for c in 0..ALPHA_DIM {
                a[(r, c)] -= h[r][c] / nf;
            }
        }
    }

    // per event time: Σ_i E[Z e^{βZ}] and Σ_i E[e^{βZ}] over the risk set, and Σ_i E[Z² e^{βZ}]
    let mut s0 = vec![0.0; k];
    let mut s1 = vec![0.0; k];
    let mut s2 = vec![0.0; k];
    let grid = dataset.grid();
    for (s, at) in dataset.subjects().iter().zip(atoms) {
        let m = at.tilted_moments(beta);
        for (j, &u) in times.iter().enumerate() {
            if u > s.x {
                break;
            }
            let (e0, e1, e2) = match s.covariate_at_unchecked(u, grid) {
                CovariateValue::Observed(z) => {
                    let e = (beta * z).exp();
                    (e, z * e, z * z * e)
                }
                CovariateValue::Latent => (m.e0, m.e1, m.e2),
            };
            s0[j] += e0;
            s1[j] += e1;
            s2[j] += e2;
        }
    }

    let mut b = Matrix::zeros(1 + k, 1 + k);
    b[(0, 0)] = s2.iter().zip(&dl).map(|(v, d)| v * d).sum::<f64>() / nf;
    for j in 0..k {
        b[(0, 1 + j)] = s1[j] * dl[j] / nf;
        b[(1 + j, 0)] = s1[j] / nf;
        b[(1 + j, 1 + j)] = s0[j] / nf;
    }
    Ok(DiscretizedOperator { a, b, dl })
}

impl DiscretizedOperator {
    pub fn events(&self) -> usize {
        self.dl.len()
    }

    fn check(&self, g: &Probe) -> Result<()> {
        if g.h3.len() != self.events() {
            return Err(Error::Domain(format!(
                "probe has {} hazard values for {} event times",
                g.h3.len(),
                self.events()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "probe",
                id: None,
            });
        }
        Ok(())
    }

    /// `σ̂ h`
    pub fn apply(&self, h: &Probe) -> Result<Probe> {
        self.check(h)?;
        let h1 = self.a.mul_vec(&h.h1);
        let joint = self.b.mul_vec(&h.joint());
        let mut out = Probe::zeros(self.events());
        out.h1.copy_from_slice(&h1);
        out.h2 = joint[0];
        out.h3.copy_from_slice(&joint[1..]);
        Ok(out)
    }

    /// 1-norm condition numbers of `A` and `B`.
    pub fn condition(&self) -> (f64, f64) {
        (cond1(&self.a), cond1(&self.b))
    }

    /// Smallest eigenvalue of the symmetric part of `A`.
    pub fn min_eigen_a(&self) -> f64 {
        let mut sym = self.a.clone();
        for i in 0..ALPHA_DIM {
            for j in 0..ALPHA_DIM {
                sym[(i, j)] = 0.5 * (self.a[(i, j)] + self.a[(j, i)]);
            }
        }
        symmetric_eigenvalues(&sym)[0]
    }

    /// Solves `σ̂ h = g`.
    pub fn invert_apply(&self, g: &Probe) -> Result<Probe> {
        Ok(self.factor()?.solve(g))
    }

    /// Factorizes both blocks once, for repeated solves.
    pub fn factor(&self) -> Result<FactoredOperator<'_>> {
        let (ca, cb) = self.condition();
        let cond = ca.max(cb);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularOperator { cond });
        }
        let singular = || Error::SingularOperator {
            cond: f64::INFINITY,
        };
        Ok(FactoredOperator {
            op: self,
            a: Lu::factor(&self.a).ok_or_else(singular)?,
            b: Lu::factor(&self.b).ok_or_else(singular)?,
        })
    }

    /// `Q(g, h) = Σ_k g₃(x_k) h₃(x_k) ΔΛ̂_k + g₂ h₂ + g₁ᵀ h₁`
    pub fn pairing(&self, g: &Probe, h: &Probe) -> f64 {
        let a: f64 = g.h1.iter().zip(&h.h1).map(|(x, y)| x * y).sum();
        let c: f64 =
            g.h3.iter()
                .zip(&h.h3)
                .zip(&self.dl)
                .map(|((x, y), d)| x * y * d)
                .sum();
        c + g.h2 * h.h2 + a
    }

    /// `Q(g, σ̂⁻¹ g*)`
    pub fn bilinear(&self, g: &Probe, g_star: &Probe) -> Result<f64> {
        self.check(g)?;
        Ok(self.pairing(g, &self.invert_apply(g_star)?))
    }

    /// Asymptotic variance of `√n` times the functional defined by `g`.
    pub fn var_estimate(&self, g: &Probe) -> Result<f64> {
        self.bilinear(g, g)
    }

    /// Closed-form `β` variance ignoring the coupling with the hazard: `1 / B₀₀`.
    pub fn var_beta_simple(&self) -> Result<f64> {
        let d = self.b[(0, 0)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NonPositiveVariance(d));
        }
        Ok(1.0 / d)
    }
}

/// Both operator blocks in factored form.
pub struct FactoredOperator<'a> {
    op: &'a DiscretizedOperator,
    a: Lu,
    b: Lu,
}

impl FactoredOperator<'_> {
    pub fn solve(&self, g: &Probe) -> Probe {
        let h1 = self.a.solve(&g.h1);
        let joint = self.b.solve(&g.joint());
        let mut out = Probe::zeros(self.op.events());
        out.h1.copy_from_slice(&h1);
        out.h2 = joint[0];
        out.h3.copy_from_slice(&joint[1..]);
        out
    }

    pub fn var_estimate(&self, g: &Probe) -> f64 {
        self.op.pairing(g, &self.solve(g))
    }
}

/// Largest residual `|σ̂ h − g|` relative to `|g|`, sup norms.
pub fn round_trip_residual(op: &DiscretizedOperator, g: &Probe) -> Result<f64> {
    let h = op.invert_apply(g)?;
    let back = op.apply(&h)?;
    let mut worst = 0.0_f64;
    for (x, y) in back.h1.iter().zip(&g.h1) {
        worst = worst.max((x - y).abs());
    }
    worst = worst.max((back.h2 - g.h2).abs());
    for (x, y) in back.h3.iter().zip(&g.h3) {
        worst = worst.max((x - y).abs());
    }
    Ok(worst / g.sup_norm().max(f64::MIN_POSITIVE))
}

/// Standard normal quantile: Acklam's rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs 0 < p < 1, got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let low = 0.02425;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * core::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Two-sided Wald interval `estimate ± z_{(1+level)/2} √(var/n)`.
pub fn ci(estimate: f64, var: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::NonPositiveVariance(var));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let half = normal_quantile(0.5 + level / 2.0)? * (var / n as f64).sqrt();
    Ok((estimate - half, estimate + half))
}

/// Variances reported next to an NPML fit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceReport {
    pub var_beta_simple: f64,
    /// `None` when the operator could not be inverted.
    pub var_beta_full: Option<f64>,
    pub var_alpha: Option<[f64; ALPHA_DIM]>,
    /// `(t, var √n(Λ̂(t) − Λ(t)))` at each event time.
    pub lambda_band: Vec<(f64, f64)>,
    #[cfg_attr(feature = "serde", serde(rename = "cond_B"))]
    pub cond_b: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub warnings: Vec<Warning>,
}

impl VarianceReport {
    /// Computes both `β` variances, the `α` diagonal and the cumulative-hazard band.
    /// Inversion failures leave the full-inversion entries empty; a vanishing simple variance
    /// is an error.
    pub fn compute(dataset: &Dataset, theta_hat: &Theta, atoms: &[PosteriorAtoms]) -> Result<Self> {
        let op = build_sigma_hat(dataset, theta_hat, atoms)?;
        let var_beta_simple = op.var_beta_simple()?;
        let (_, cond_b) = op.condition();
        let mut warnings = Vec::new();
        let k = op.events();
        let (var_beta_full, var_alpha, lambda_band) = match op.factor() {
            Ok(f) => {
                let vb = f.var_estimate(&Probe::beta(k));
                let mut va = [0.0; ALPHA_DIM];
                for (j, v) in va.iter_mut().enumerate() {
                    *v = f.var_estimate(&Probe::alpha_axis(j, k));
                }
                let times = theta_hat.hazard.times();
                let band = times
                    .iter()
                    .map(|&t| (t, f.var_estimate(&Probe::cumulative_hazard(t, times))))
                    .collect::<Vec<_>>();
                for v in core::iter::once(vb)
                    .chain(va)
                    .chain(band.iter().map(|p| p.1))
                {
                    if !(v > 0.0) {
                        log::warn!("negative variance estimate {v}");
                        warnings.push(Warning::NegativeVariance { value: v });
                    }
                }
                (Some(vb), Some(va), band)
            }
            Err(e) => {
                log::warn!("full variance unavailable: {e}");
                (None, None, Vec::new())
            }
        };
        Ok(Self {
            var_beta_simple,
            var_beta_full,
            var_alpha,
            lambda_band,
            cond_b,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::TransitionParams;
    use crate::model::{MeasurementGrid, SieveHazard, Subject};
    use alloc::vec;

    fn one_subject() -> (Dataset, Theta, Vec<PosteriorAtoms>) {
        let g = MeasurementGrid::new(vec![0.0]).unwrap();
        let mut s = Subject::new(1, 0.5, true, vec![1.0]);
        s.terminal = Some(2.0);
        let d = Dataset::new(g, vec![s], 1.0).unwrap();
        let beta = 0.3;
        let th = Theta {
            alpha: TransitionParams::new(0.0, 1.0, 0.0, 0.5, 1.0),
            beta,
            hazard: SieveHazard::new(vec![0.5], vec![(-beta * 2.0).exp()]).unwrap(),
        };
        (d, th, vec![PosteriorAtoms::degenerate(2.0)])
    }

    #[test]
    fn one_subject_simple_variance_is_inverse_square() {
        let (d, th, atoms) = one_subject();
        let op = build_sigma_hat(&d, &th, &atoms).unwrap();
        assert!((op.var_beta_simple().unwrap() - 0.25).abs() < 1e-14);
        // B = [[4, 2], [2e^{2β}, e^{2β}]] has no inverse
        let e = (2.0 * th.beta).exp();
        assert!((op.b[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((op.b[(1, 0)] - 2.0 * e).abs() < 1e-14 && (op.b[(1, 1)] - e).abs() < 1e-14);
        assert!(matches!(
            op.invert_apply(&Probe::beta(1)),
            Err(Error::SingularOperator { .. })
        ));
    }

    #[test]
    fn diagonal_operator_divides_componentwise() {
        let mut a = Matrix::identity(ALPHA_DIM);
        for j in 0..ALPHA_DIM {
            a[(j, j)] = (j + 1) as f64;
        }
        let mut b = Matrix::identity(3);
        b[(0, 0)] = 4.0;
        b[(1, 1)] = 0.5;
        b[(2, 2)] = 2.0;
        let op = DiscretizedOperator {
            a,
            b,
            dl: vec![0.1, 0.2],
        };
        let g = Probe {
            h1: [1.0, 2.0, 3.0, 4.0, 5.0],
            h2: 2.0,
            h3: vec![1.0, 1.0],
        };
        let h = op.invert_apply(&g).unwrap();
        assert_eq!(h.h1, [1.0; 5]);
        assert_eq!(h.h2, 0.5);
        assert_eq!(h.h3, vec![2.0, 0.5]);
        // α block decouples
        let v = op.var_estimate(&Probe::alpha_axis(3, 2)).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_covariate_entries() {
        let g = MeasurementGrid::new(vec![0.0]).unwrap();
        let c = 0.7;
        let subjects = vec![
            Subject::new(1, 0.2, true, vec![c]),
            Subject::new(2, 0.4, false, vec![c]),
            Subject::new(3, 0.6, true, vec![c]),
            Subject::new(4, 0.9, false, vec![c]),
        ];
        let subjects = subjects
            .into_iter()
            .map(|mut s| {
                s.terminal = Some(c);
                s
            })
            .collect();
        let d = Dataset::new(g, subjects, 1.0).unwrap();
        let th = Theta {
            alpha: TransitionParams::new(0.0, 1.0, 0.0, 0.5, 1.0),
            beta: 0.0,
            hazard: SieveHazard::new(vec![0.2, 0.6], vec![0.25, 0.5]).unwrap(),
        };
        let atoms = vec![PosteriorAtoms::degenerate(c); 4];
        let op = build_sigma_hat(&d, &th, &atoms).unwrap();
        for (m, &t) in [0.2, 0.6].iter().enumerate() {
            let frac = d.at_risk_fraction(t);
            assert!((op.b[(1 + m, 1 + m)] - frac).abs() < 1e-15);
            assert!((op.b[(1 + m, 0)] - c * frac).abs() < 1e-15);
        }
        // [c² (1/n) Σ_i Λ(x_i)]⁻¹
        let lam: f64 = [0.2, 0.4, 0.6, 0.9]
            .iter()
            .map(|&x| th.hazard.eval(x))
            .sum::<f64>()
            / 4.0;
        assert!((op.var_beta_simple().unwrap() - 1.0 / (c * c * lam)).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-15);
        assert!((normal_quantile(0.001).unwrap() + 3.090232306167813).abs() < 1e-10);
        assert!(normal_quantile(1.0).is_err());
        let (lo, hi) = ci(1.0, 4.0, 100, 0.95).unwrap();
        assert!((hi - 1.0 - 1.959964 * 0.2).abs() < 1e-6);
        assert!(((hi - 1.0) - (1.0 - lo)).abs() < 1e-15);
        assert!(ci(1.0, 0.0, 100, 0.95).is_err());
    }
}
