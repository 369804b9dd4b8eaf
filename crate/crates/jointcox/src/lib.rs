//! File formats, command-line plumbing and the Monte Carlo study harness around
//! [`jointcox_core`].

pub mod commands;
pub mod error;
pub mod io;
pub mod study;

pub use error::{CliError, Result};
pub use jointcox_core;
