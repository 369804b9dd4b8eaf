//! Nonparametric maximum likelihood for the Cox model when the time-dependent covariate's
//! value at the exit time is missing.
//!
//! The longitudinal covariate follows a Gaussian transition model; its unmeasured terminal
//! value is integrated out. Estimation runs an ECM algorithm over a step cumulative hazard with
//! jumps at the observed event times, and variances come from a discretized information
//! operator. A classical partial-likelihood/Breslow comparator with last-value-carried-forward
//! imputation and a simulator for the joint model are included.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod baseline;
pub mod covariate;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod quadrature;
pub mod simulate;
pub mod variance;

pub use baseline::{breslow, nelson_aalen, partial_lik_fit, BaselineFit, CovariatePath};
pub use covariate::{AlphaBox, TransitionParams};
pub use error::{Error, Result};
pub use fit::{em_fit, FitConfig, FitResult};
pub use model::{CovariateValue, Dataset, MeasurementGrid, SieveHazard, Subject, Theta};
pub use posterior::{posterior_atoms, PosteriorAtoms};
pub use simulate::{fullinfo_dataset, gen_dataset, SimConfig, SimTruth};
pub use variance::{build_sigma_hat, DiscretizedOperator, Probe, VarianceReport};

use core::fmt;

/// Non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    VarianceFloored { component: &'static str },
    FlatTransitionDesign,
    NoTransitions,
    BetaOnBoundary { beta: f64 },
    FlatLikelihood,
    HazardBoundExceeded { value: f64, bound: f64 },
    NegativeVariance { value: f64 },
    NotConverged { iterations: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::VarianceFloored { component } => {
                write!(
                    f,
                    "{component} fell below the variance floor and was floored"
                )
            }
            Warning::FlatTransitionDesign => {
                write!(
                    f,
                    "previous values have no spread; transition slope set to 0"
                )
            }
            Warning::NoTransitions => write!(f, "no transitions available; using a=b=0"),
            Warning::BetaOnBoundary { beta } => {
                write!(f, "beta reached the box boundary at {beta}")
            }
            Warning::FlatLikelihood => write!(f, "likelihood is flat in beta"),
            Warning::HazardBoundExceeded { value, bound } => {
                write!(
                    f,
                    "cumulative hazard at tau {value} exceeds its bound {bound}"
                )
            }
            Warning::NegativeVariance { value } => write!(f, "negative variance estimate {value}"),
            Warning::NotConverged { iterations } => {
                write!(f, "did not converge within {iterations} iterations")
            }
        }
    }
}
