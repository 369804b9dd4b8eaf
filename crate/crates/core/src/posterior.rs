//! E-step: the conditional law of a subject's latent terminal value given its observed data.
//!
//! Up to constants in `z`, the posterior density is
//! `exp(δβz − A_lat e^{βz}) · N(z; a + b z_{a_x}, ssq)`, which is strictly log-concave. It is
//! integrated with Gauss–Hermite nodes recentred at the mode and rescaled by the curvature there.

use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

use crate::covariate::{cond_latent_params, log_normal_pdf};
use crate::error::{Error, Result};
use crate::model::{CovariateValue, MeasurementGrid, SieveHazard, Subject, Theta};
use crate::quadrature::GaussHermite;

/// Default quadrature order.
pub const DEFAULT_ORDER: usize = 40;
/// Exponent beyond which `e^{βz}` is treated as overflowing.
pub const EXP_GUARD: f64 = 700.0;
const MAX_MODE_ITER: usize = 100;

/// Partition of a subject's cumulative-hazard exponent by covariate observability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentSplit {
    /// `Σ ΔΛ_k e^{β v_k}` over event times with an observed covariate value `v_k`.
    pub a_obs: f64,
    /// `Σ ΔΛ_k` over event times falling in the latent window.
    pub a_lat: f64,
    /// Jump at the subject's own event time (0 when censored).
    pub own_jump: f64,
}

/// Splits `Σ_{x_k <= x} ΔΛ_k e^{β z(x_k)}` into its observed and latent parts.
pub fn exponent_split(
    subject: &Subject,
    hazard: &SieveHazard,
    beta: f64,
    grid: &MeasurementGrid,
) -> ExponentSplit {
    let mut a_obs = 0.0;
    let mut a_lat = 0.0;
    let end = hazard.times().partition_point(|&t| t <= subject.x);
    for (&t, &dl) in hazard.times()[..end].iter().zip(&hazard.jumps()[..end]) {
        match subject.covariate_at_unchecked(t, grid) {
            CovariateValue::Observed(v) => a_obs += dl * (beta * v).exp(),
            CovariateValue::Latent => a_lat += dl,
        }
    }
    let own_jump = if subject.delta {
        hazard.jump_at(subject.x)
    } else {
        0.0
    };
    ExponentSplit {
        a_obs,
        a_lat,
        own_jump,
    }
}

/// Log-concave posterior kernel of the latent value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LatentKernel {
    tilt: f64,
    beta: f64,
    a_lat: f64,
    mean: f64,
    var: f64,
}

impl LatentKernel {
    pub(crate) fn new(subject: &Subject, split: &ExponentSplit, theta: &Theta) -> Self {
        let (mean, var) = cond_latent_params(&subject.measurements, &theta.alpha);
        Self {
            tilt: if subject.delta { theta.beta } else { 0.0 },
            beta: theta.beta,
            a_lat: split.a_lat,
            mean,
            var,
        }
    }

    pub(crate) fn log_density(&self, z: f64) -> f64 {
        let mut out = self.tilt * z + log_normal_pdf(z, self.mean, self.var);
        if self.a_lat > 0.0 {
            let e = self.beta * z;
            if e > EXP_GUARD {
                return f64::NEG_INFINITY;
            }
            out -= self.a_lat * e.exp();
        }
        out
    }

    fn derivatives(&self, z: f64) -> (f64, f64) {
        let ex = if self.a_lat > 0.0 {
            self.a_lat * (self.beta * z).min(EXP_GUARD).exp()
        } else {
            0.0
        };
        let d1 = self.tilt - self.beta * ex - (z - self.mean) / self.var;
        let d2 = -self.beta * self.beta * ex - 1.0 / self.var;
        (d1, d2)
    }

    /// Mode by Newton iteration safeguarded with a bisection bracket.
    fn mode(&self) -> Option<f64> {
        let sd = self.var.sqrt();
        let start = self.mean + self.var * self.tilt;
        let (d0, _) = self.derivatives(start);
        if d0 == 0.0 {
            return Some(start);
        }
        // derivative is strictly decreasing: expand towards its root
        let dir = d0.signum();
        let mut step = sd;
        let mut far = start + dir * step;
        let mut expansions = 0;
        while self.derivatives(far).0.signum() == dir {
            step *= 2.0;
            far = start + dir * step;
            expansions += 1;
            if expansions > 200 {
                return None;
            }
        }
        let (mut lo, mut hi) = if dir > 0.0 {
            (start, far)
        } else {
            (far, start)
        };
        let mut z = 0.5 * (lo + hi);
        for _ in 0..MAX_MODE_ITER {
            let (d1, d2) = self.derivatives(z);
            if d1 == 0.0 {
                return Some(z);
            }
            if d1 > 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let mut next = z - d1 / d2;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= 1e-14 * (1.0 + z.abs()) || hi - lo <= 1e-14 * (1.0 + z.abs()) {
                return Some(next);
            }
            z = next;
        }
        None
    }
}

/// Weighted nodes representing `Z | y` at a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorAtoms {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode: f64,
    pub curvature_sd: f64,
    /// `ln ∫ exp(log_unnormalized_posterior(z)) dz`
    pub log_integral: f64,
}

/// Tilted conditional moments `E[Z^m e^{βZ} | y]` for `m = 0, 1, 2`, plus `E[Z | y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TiltedMoments {
    pub mean: f64,
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl PosteriorAtoms {
    /// A single atom of mass one, used when the latent value is known.
    pub fn degenerate(z: f64) -> Self {
        Self {
            nodes: alloc::vec![z],
            weights: alloc::vec![1.0],
            mode: z,
            curvature_sd: 0.0,
            log_integral: 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn tilted_moments(&self, beta: f64) -> TiltedMoments {
        let mut m = TiltedMoments::default();
        for (z, w) in self.iter() {
            let e = w * (beta * z).exp();
            m.mean += w * z;
            m.e0 += e;
            m.e1 += e * z;
            m.e2 += e * z * z;
        }
        m
    }

    /// Mean of `g` under the atoms' law.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(z, w)| w * g(z)).sum()
    }
}

/// `δβz − A_lat e^{βz} + ln f(z | z_0..z_{a_x}; α)`, dropping terms constant in `z`.
pub fn log_unnormalized_posterior(
    z: f64,
    subject: &Subject,
    split: &ExponentSplit,
    theta: &Theta,
) -> f64 {
    LatentKernel::new(subject, split, theta).log_density(z)
}

/// Mode-centred Gauss–Hermite atoms for the subject's latent value.
pub fn posterior_atoms(
    subject: &Subject,
    theta: &Theta,
    order: usize,
    grid: &MeasurementGrid,
) -> Result<PosteriorAtoms> {
    if order < 2 {
        return Err(Error::Domain(alloc::format!(
            "quadrature order must be at least 2, got {order}"
        )));
    }
    atoms_with_rule(subject, theta, &GaussHermite::new(order), grid)
}

pub(crate) fn atoms_with_rule(
    subject: &Subject,
    theta: &Theta,
    rule: &GaussHermite,
    grid: &MeasurementGrid,
) -> Result<PosteriorAtoms> {
    if let Some(z) = subject.terminal {
        return Ok(PosteriorAtoms::degenerate(z));
    }
    let split = exponent_split(subject, &theta.hazard, theta.beta, grid);
    atoms_for_split(subject, &split, theta, rule)
}

pub(crate) fn atoms_for_split(
    subject: &Subject,
    split: &ExponentSplit,
    theta: &Theta,
    rule: &GaussHermite,
) -> Result<PosteriorAtoms> {
    if let Some(z) = subject.terminal {
        return Ok(PosteriorAtoms::degenerate(z));
    }
    atoms_from_kernel(&LatentKernel::new(subject, split, theta), rule)
        .ok_or(Error::ModeSearch { id: subject.id })
}

/// Nodes are spread over this fraction of the curvature scale. The hazard term makes one side
/// of the kernel decay double-exponentially, faster than its Gaussian approximation, and a
/// tighter rule resolves that side better at fixed order.
const NODE_SCALE: f64 = 0.7;

fn atoms_from_kernel(kernel: &LatentKernel, rule: &GaussHermite) -> Option<PosteriorAtoms> {
    let mode = kernel.mode()?;
    let (_, d2) = kernel.derivatives(mode);
    let sd = (-1.0 / d2).sqrt();
    // without latent hazard mass the kernel is Gaussian and the full scale is exact
    let shrink = if kernel.a_lat > 0.0 { NODE_SCALE } else { 1.0 };
    let scale = SQRT_2 * shrink * sd;
    let nodes: Vec<f64> = rule.nodes().iter().map(|x| mode + scale * x).collect();
    let logs: Vec<f64> = nodes
        .iter()
        .zip(rule.log_flat_weights())
        .map(|(&z, lw)| lw + kernel.log_density(z))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Some(PosteriorAtoms {
        nodes,
        weights,
        mode,
        curvature_sd: sd,
        log_integral: scale.ln() + top + total.ln(),
    })
}

/// `E[g(Z) | y] = Σ w_q g(z_q)`.
pub fn cond_exp(atoms: &PosteriorAtoms, g: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for (z, w) in atoms.iter() {
        let v = g(z);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "conditional expectation integrand",
                id: None,
            });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Brute-force trapezoid integration of the posterior, kept independent of the quadrature
/// path: the mode comes from golden-section search and the scale from a finite difference.
pub mod oracle {
    use super::*;

    /// Window location and half-width used by the oracle.
    fn window(kernel: &LatentKernel) -> (f64, f64) {
        let sd0 = kernel.var.sqrt();
        let centre0 = kernel.mean + kernel.var * kernel.tilt;
        let (mut lo, mut hi) = (centre0 - 40.0 * sd0, centre0 + 40.0 * sd0);
        let inv_phi = 0.618_033_988_749_894_8;
        let f = |z: f64| kernel.log_density(z);
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..300 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = f(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = f(d);
            }
            if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                break;
            }
        }
        let mode = 0.5 * (lo + hi);
        let h = 1e-4 * sd0;
        let curv = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h);
        let sd = if curv < 0.0 {
            (-1.0 / curv).sqrt()
        } else {
            sd0
        };
        (mode, sd)
    }

    /// Integration range reaching 80 log units below the peak on both sides, found by walking
    /// outward rather than trusting the local curvature at the mode.
    fn support(kernel: &LatentKernel) -> (f64, f64, f64) {
        let (mode, sd) = window(kernel);
        let peak = kernel.log_density(mode);
        let step = 0.5 * sd;
        let mut lo = mode - step;
        while kernel.log_density(lo) - peak > -80.0 {
            lo -= step;
        }
        let mut hi = mode + step;
        while kernel.log_density(hi) - peak > -80.0 {
            hi += step;
        }
        (lo, hi, peak)
    }

    /// Normalized trapezoid estimate of `E[g(Z) | y]` on `[mode ± 12 sd]`.
    pub fn oracle_moments(
        subject: &Subject,
        theta: &Theta,
        grid: &MeasurementGrid,
        g: impl Fn(f64) -> f64,
        resolution: usize,
    ) -> f64 {
        assert!(
            resolution >= 10_000,
            "oracle resolution must be at least 1e4"
        );
        let split = exponent_split(subject, &theta.hazard, theta.beta, grid);
        let kernel = LatentKernel::new(subject, &split, theta);
        let (lo, hi, peak) = support(&kernel);
        let h = (hi - lo) / resolution as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..=resolution {
            let z = lo + h * k as f64;
            let end = if k == 0 || k == resolution { 0.5 } else { 1.0 };
            let p = end * (kernel.log_density(z) - peak).exp();
            num += p * g(z);
            den += p;
        }
        num / den
    }

    /// Trapezoid estimate of `ln ∫ exp(log_unnormalized_posterior(z)) dz`.
    pub fn oracle_log_integral(
        subject: &Subject,
        theta: &Theta,
        grid: &MeasurementGrid,
        resolution: usize,
    ) -> f64 {
        let split = exponent_split(subject, &theta.hazard, theta.beta, grid);
        let kernel = LatentKernel::new(subject, &split, theta);
        let (lo, hi, peak) = support(&kernel);
        let h = (hi - lo) / resolution as f64;
        let mut den = 0.0;
        for k in 0..=resolution {
            let z = lo + h * k as f64;
            let end = if k == 0 || k == resolution { 0.5 } else { 1.0 };
            den += end * (kernel.log_density(z) - peak).exp();
        }
        peak + (den * h).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::oracle_moments;
    use super::*;
    use crate::covariate::TransitionParams;
    use alloc::vec;

    fn grid() -> MeasurementGrid {
        MeasurementGrid::new(vec![0.0, 1.0, 2.0]).unwrap()
    }

    /// Hazard without jumps in the subject's window, so the only tilt is `δβz`.
    fn theta(alpha: TransitionParams, beta: f64, hazard: SieveHazard) -> Theta {
        Theta {
            alpha,
            beta,
            hazard,
        }
    }

    fn empty_hazard() -> SieveHazard {
        SieveHazard::new(vec![], vec![]).unwrap()
    }

    #[test]
    fn gaussian_case_is_exact() {
        let s = Subject::new(1, 0.5, false, vec![0.0]);
        let th = theta(
            TransitionParams::new(0.0, 1.0, 0.0, 0.0, 1.0),
            1.3,
            empty_hazard(),
        );
        let atoms = posterior_atoms(&s, &th, 20, &grid()).unwrap();
        let total: f64 = atoms.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(atoms.weights.iter().all(|w| *w >= 0.0));
        assert!(cond_exp(&atoms, |z| z).unwrap().abs() < 1e-10);
        assert!((cond_exp(&atoms, |z| z * z).unwrap() - 1.0).abs() < 1e-10);
        assert!((cond_exp(&atoms, |_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        // ∫ N(z; 0, 1) dz = 1
        assert!(atoms.log_integral.abs() < 1e-12);
    }

    #[test]
    fn exponential_tilt_identity() {
        // uncensored with no latent hazard mass: posterior is N(β, 1)
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let th = theta(
            TransitionParams::new(0.0, 1.0, 0.0, 0.0, 1.0),
            0.5,
            empty_hazard(),
        );
        let atoms = posterior_atoms(&s, &th, 40, &grid()).unwrap();
        assert!((cond_exp(&atoms, |z| z).unwrap() - 0.5).abs() < 1e-10);
        let tilt = cond_exp(&atoms, |z| (0.5 * z).exp()).unwrap();
        // E[e^{tZ}] = e^{tμ + t²/2} with μ = 0.5, t = 0.5
        assert!((tilt - 0.375f64.exp()).abs() < 1e-10);
        // censored with no latent hazard mass: the conditional law stays N(0, 1)
        let c = Subject::new(2, 0.5, false, vec![0.0]);
        let atoms = posterior_atoms(&c, &th, 40, &grid()).unwrap();
        let tilt = cond_exp(&atoms, |z| (0.5 * z).exp()).unwrap();
        assert!((tilt - 1.133_148_453_066_826).abs() < 1e-10);
    }

    #[test]
    fn cond_exp_on_degenerate_atom() {
        let atoms = PosteriorAtoms::degenerate(2.0);
        assert_eq!(cond_exp(&atoms, |z| z).unwrap(), 2.0);
        assert!(cond_exp(&atoms, |_| f64::NAN).is_err());
    }

    #[test]
    fn split_examples() {
        let g = grid();
        let h = SieveHazard::new(vec![0.4, 1.2, 1.5, 2.5], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let s = Subject::new(1, 1.5, true, vec![0.5, -0.5]);
        let flat = exponent_split(&s, &h, 0.0, &g);
        assert!((flat.a_obs + flat.a_lat - h.eval(1.5)).abs() < 1e-15);
        let sp = exponent_split(&s, &h, 0.7, &g);
        assert!((sp.a_obs - 0.1 * (0.7f64 * -0.5).exp()).abs() < 1e-15);
        assert!((sp.a_lat - 0.5).abs() < 1e-15);
        assert_eq!(sp.own_jump, 0.3);
        assert!(sp.a_lat >= sp.own_jump);
        // censored with an empty latent window
        let c = Subject::new(2, 1.1, false, vec![0.5, -0.5]);
        let sc = exponent_split(&c, &h, 0.7, &g);
        assert_eq!(sc.a_lat, 0.0);
        assert_eq!(sc.own_jump, 0.0);
    }

    #[test]
    fn unnormalized_posterior_examples() {
        let g = grid();
        let alpha = TransitionParams::new(0.0, 1.0, 0.3, 0.0, 0.4);
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let split = ExponentSplit {
            a_obs: 0.2,
            a_lat: 0.7,
            own_jump: 0.7,
        };
        let th = theta(alpha, 1.0, empty_hazard());
        let v = log_unnormalized_posterior(0.3, &s, &split, &th);
        let expected = 0.3 - 0.7 * 0.3f64.exp() + log_normal_pdf(0.3, 0.3, 0.4);
        assert!((v - expected).abs() < 1e-14);
        assert_eq!(
            log_unnormalized_posterior(800.0, &s, &split, &th),
            f64::NEG_INFINITY
        );
        // β = 0 leaves the prior conditional
        let th0 = theta(alpha, 0.0, empty_hazard());
        let d = log_unnormalized_posterior(1.0, &s, &split, &th0)
            - log_unnormalized_posterior(0.0, &s, &split, &th0);
        let prior = log_normal_pdf(1.0, 0.3, 0.4) - log_normal_pdf(0.0, 0.3, 0.4);
        assert!((d - prior).abs() < 1e-14);
        let _ = g;
    }

    #[test]
    fn tilted_case_matches_trapezoid() {
        // delta = 1, A_lat = 0.7, beta = 1, conditional N(0.3, 0.4)
        let g = grid();
        let alpha = TransitionParams::new(0.0, 1.0, 0.3, 0.0, 0.4);
        let h = SieveHazard::new(vec![0.5], vec![0.7]).unwrap();
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let th = theta(alpha, 1.0, h);
        let atoms = posterior_atoms(&s, &th, 40, &g).unwrap();
        for (name, f) in [
            ("z", &(|z: f64| z) as &dyn Fn(f64) -> f64),
            ("z2", &|z: f64| z * z),
            ("e", &|z: f64| z.exp()),
        ] {
            let q = cond_exp(&atoms, f).unwrap();
            let o = oracle_moments(&s, &th, &g, f, 20_000);
            assert!(
                (q - o).abs() < 1e-6 * o.abs().max(1e-3),
                "{name}: {q} vs {o}"
            );
        }
        let lo = oracle::oracle_log_integral(&s, &th, &g, 20_000);
        assert!((atoms.log_integral - lo).abs() < 1e-9);
    }

    #[test]
    fn oracle_resolution_converges() {
        let g = grid();
        let alpha = TransitionParams::new(0.0, 1.0, -0.2, 0.0, 0.9);
        let h = SieveHazard::new(vec![0.5], vec![1.3]).unwrap();
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let th = theta(alpha, 0.8, h);
        let a = oracle_moments(&s, &th, &g, |z| z, 10_000);
        let b = oracle_moments(&s, &th, &g, |z| z, 20_000);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn tilt_is_monotone_in_beta() {
        let g = grid();
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let alpha = TransitionParams::new(0.0, 1.0, 0.1, 0.5, 0.6);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..21 {
            let beta = -2.0 + 0.2 * k as f64;
            let th = theta(alpha, beta, empty_hazard());
            let m = posterior_atoms(&s, &th, 40, &g).unwrap().expect(|z| z);
            assert!(m > prev);
            prev = m;
        }
    }

    #[test]
    fn rejects_order_below_two() {
        let s = Subject::new(1, 0.5, true, vec![0.0]);
        let th = theta(
            TransitionParams::new(0.0, 1.0, 0.0, 0.0, 1.0),
            0.0,
            empty_hazard(),
        );
        assert!(posterior_atoms(&s, &th, 1, &grid()).is_err());
    }
}
