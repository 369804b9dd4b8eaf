//! Simulation from the joint model: Gaussian transitions on a regular grid, a constant baseline
//! hazard with a proportional covariate effect, administrative censoring at `τ` and optional
//! independent exponential censoring.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::covariate::TransitionParams;
use crate::error::{Error, Result};
use crate::model::{Dataset, MeasurementGrid, Subject};

const SUBJECT_STREAM: u64 = 0x5375_626a_6563_7400;
const CENSOR_STREAM: u64 = 0x4365_6e73_6f72_0000;
const REPLICATION_STREAM: u64 = 0x5265_706c_6963_6100;
/// Rejection attempts before a truncated draw gives up.
const MAX_REJECTIONS: usize = 10_000;

/// Scenario for [`gen_dataset`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimConfig {
    pub n: usize,
    pub grid_step: f64,
    pub tau: f64,
    pub alpha0: TransitionParams,
    pub beta0: f64,
    pub lambda0: f64,
    /// Rate of independent exponential censoring; 0 leaves only censoring at `τ`.
    pub censor_rate: f64,
    pub seed: u64,
    /// Draw covariates from the transition law truncated to `[-c, c]`.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub truncate: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            grid_step: 0.25,
            tau: 3.0,
            alpha0: TransitionParams::new(0.0, 1.0, 0.0, 0.7, 0.25),
            beta0: 1.0,
            lambda0: 0.3,
            censor_rate: 0.2,
            seed: 1,
            truncate: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return bad(format!(
                "grid_step must be positive, got {}",
                self.grid_step
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        let ratio = self.tau / self.grid_step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!(
                "tau {} is not a multiple of grid_step {}",
                self.tau, self.grid_step
            ));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.censor_rate >= 0.0 && self.censor_rate.is_finite()) {
            return bad(format!(
                "censor_rate must be nonnegative, got {}",
                self.censor_rate
            ));
        }
        if !self.beta0.is_finite() {
            return bad("beta0 must be finite".into());
        }
        if let Some(c) = self.truncate {
            if !(c > 0.0) {
                return bad(format!("truncation bound must be positive, got {c}"));
            }
        }
        self.alpha0.validate()
    }

    pub fn grid(&self) -> Result<MeasurementGrid> {
        MeasurementGrid::regular(self.grid_step, self.tau)
    }

    /// True cumulative baseline hazard `λ₀ t`.
    pub fn true_cumulative_hazard(&self, t: f64) -> f64 {
        self.lambda0 * t
    }
}

/// Quantities the fitters never see.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimTruth {
    pub id: u64,
    /// Covariate value on the exit window, never measured.
    pub latent_z: f64,
    /// Event time, `None` when no event happens before `τ`.
    pub event_time: Option<f64>,
    pub censor_time: f64,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ SUBJECT_STREAM).wrapping_add(index))
}

/// Seed of replication `r` in a study seeded with `seed`.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    mix(mix(seed ^ REPLICATION_STREAM).wrapping_add(r))
}

fn censor_seed(subject_seed: u64) -> u64 {
    mix(subject_seed ^ CENSOR_STREAM)
}

fn draw_normal(rng: &mut ChaCha8Rng, mean: f64, var: f64, truncate: Option<f64>) -> Result<f64> {
    let normal = Normal::new(mean, var.sqrt())
        .map_err(|e| Error::InvalidConfig(format!("normal law: {e}")))?;
    match truncate {
        None => Ok(normal.sample(rng)),
        Some(c) => {
            for _ in 0..MAX_REJECTIONS {
                let z = normal.sample(rng);
                if z.abs() <= c {
                    return Ok(z);
                }
            }
            Err(Error::InvalidConfig(format!(
                "truncation to [-{c}, {c}] rejects nearly every draw from N({mean}, {var})"
            )))
        }
    }
}

/// Censoring time `min(τ, Exp(rate))`. Takes no covariate input.
fn draw_censoring(seed: u64, config: &SimConfig) -> f64 {
    if config.censor_rate == 0.0 {
        return config.tau;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(censor_seed(seed));
    let exp = Exp::new(config.censor_rate).expect("validated rate");
    let c: f64 = exp.sample(&mut rng);
    c.min(config.tau)
}

/// One subject from stream `seed`.
pub fn gen_subject(
    id: u64,
    seed: u64,
    config: &SimConfig,
    grid: &MeasurementGrid,
) -> Result<(Subject, SimTruth)> {
    let alpha = &config.alpha0;
    let censor_time = draw_censoring(seed, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = grid.times();
    let mut path = Vec::with_capacity(times.len() + 1);
    path.push(draw_normal(
        &mut rng,
        alpha.mu0,
        alpha.s0sq,
        config.truncate,
    )?);
    let mut event_time = None;
    for j in 0..times.len() {
        let start = times[j];
        let end = times.get(j + 1).copied().unwrap_or(config.tau);
        let prev = path[j];
        let z = draw_normal(
            &mut rng,
            alpha.a + alpha.b * prev,
            alpha.ssq,
            config.truncate,
        )?;
        path.push(z);
        let rate = config.lambda0 * (config.beta0 * z).exp();
        let wait: f64 = Exp::new(rate)
            .map_err(|e| Error::InvalidConfig(format!("event hazard: {e}")))?
            .sample(&mut rng);
        if start + wait <= end {
            event_time = Some(start + wait);
            break;
        }
        if end >= censor_time {
            // exit is decided; later intervals are never observed
            break;
        }
    }
    let (x, delta) = match event_time {
        Some(t) if t <= censor_time => (t, true),
        _ => (censor_time, false),
    };
    let a = grid.last_index(x)?;
    let subject = Subject::new(id, x, delta, path[..=a].to_vec());
    let truth = SimTruth {
        id,
        latent_z: path[a + 1],
        event_time,
        censor_time,
    };
    Ok((subject, truth))
}

/// `n` subjects with ids `1..=n`; subject `i` draws from stream `derive_seed(seed, i)`.
pub fn gen_dataset(config: &SimConfig) -> Result<(Dataset, Vec<SimTruth>)> {
    config.validate()?;
    let grid = config.grid()?;
    let mut subjects = Vec::with_capacity(config.n);
    let mut truths = Vec::with_capacity(config.n);
    for i in 1..=config.n as u64 {
        let (s, t) = gen_subject(i, derive_seed(config.seed, i), config, &grid)?;
        subjects.push(s);
        truths.push(t);
    }
    let dataset = Dataset::with_tie_jitter(grid, subjects, config.tau)?;
    Ok((dataset, truths))
}

/// Marks each subject's latent value as known, by id.
pub fn fullinfo_dataset(dataset: &Dataset, truths: &[SimTruth]) -> Result<Dataset> {
    if truths.len() != dataset.n() {
        return Err(Error::Misaligned(format!(
            "{} truths for {} subjects",
            truths.len(),
            dataset.n()
        )));
    }
    let mut by_id: Vec<&SimTruth> = truths.iter().collect();
    by_id.sort_by_key(|t| t.id);
    let subjects = dataset
        .subjects()
        .iter()
        .zip(by_id)
        .map(|(s, t)| {
            if s.id != t.id {
                return Err(Error::Misaligned(format!(
                    "subject {} paired with truth {}",
                    s.id, t.id
                )));
            }
            let mut s = s.clone();
            s.terminal = Some(t.latent_z);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dataset.grid().clone(), subjects, dataset.tau())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_config(n: usize) -> SimConfig {
        SimConfig {
            n,
            grid_step: 0.5,
            tau: 5.0,
            alpha0: TransitionParams::new(0.0, 1.0, 0.0, 0.5, 1.0),
            beta0: 0.0,
            lambda0: 1.0,
            censor_rate: 0.0,
            seed: 42,
            truncate: None,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let c = SimConfig {
            n: 50,
            ..SimConfig::default()
        };
        assert_eq!(gen_dataset(&c).unwrap(), gen_dataset(&c).unwrap());
        let other = SimConfig {
            seed: 2,
            ..c.clone()
        };
        assert_ne!(gen_dataset(&c).unwrap().0, gen_dataset(&other).unwrap().0);
    }

    #[test]
    fn administrative_censoring_only() {
        let (d, _) = gen_dataset(&exp_config(500)).unwrap();
        for s in d.subjects() {
            if !s.delta {
                assert_eq!(s.x, 5.0);
            }
        }
    }

    #[test]
    fn measurements_precede_exit() {
        let c = SimConfig {
            n: 300,
            ..SimConfig::default()
        };
        let (d, truths) = gen_dataset(&c).unwrap();
        let grid = d.grid();
        for (s, t) in d.subjects().iter().zip(&truths) {
            assert_eq!(s.measurements.len(), grid.last_index(s.x).unwrap() + 1);
            assert_eq!(s.id, t.id);
            assert!(t.censor_time <= c.tau);
        }
        assert!(d.at_risk_fraction(c.tau) > 0.0);
    }

    #[test]
    fn exponential_event_fraction() {
        // with beta0 = 0 the event time is Exp(1); P(T <= 3) = 1 - e^{-3}
        let c = SimConfig {
            n: 10_000,
            tau: 3.0,
            ..exp_config(0)
        };
        let (d, _) = gen_dataset(&c).unwrap();
        let p = 1.0 - (-3.0f64).exp();
        let frac = d.event_count() as f64 / c.n as f64;
        let se = (p * (1.0 - p) / c.n as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * se, "{frac} vs {p}");
    }

    #[test]
    fn truncated_draws_stay_inside() {
        let c = SimConfig {
            n: 200,
            truncate: Some(0.5),
            ..SimConfig::default()
        };
        let (d, truths) = gen_dataset(&c).unwrap();
        assert!(d
            .subjects()
            .iter()
            .flat_map(|s| &s.measurements)
            .all(|z| z.abs() <= 0.5));
        assert!(truths.iter().all(|t| t.latent_z.abs() <= 0.5));
    }

    #[test]
    fn config_validation() {
        let bad_grid = SimConfig {
            tau: 3.1,
            ..SimConfig::default()
        };
        assert!(bad_grid.validate().is_err());
        let empty = SimConfig {
            n: 0,
            ..SimConfig::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn fullinfo_marks_terminal_values() {
        let c = SimConfig {
            n: 30,
            ..SimConfig::default()
        };
        let (d, truths) = gen_dataset(&c).unwrap();
        let full = fullinfo_dataset(&d, &truths).unwrap();
        assert!(full.is_full_information());
        assert_eq!(fullinfo_dataset(&full, &truths).unwrap(), full);
        assert!(fullinfo_dataset(&d, &truths[1..]).is_err());
    }
}
