//! Event-driven simulation of a random walk on Z^d whose bonds collapse
//! behind it, plus the statistical machinery to check its regeneration
//! structure, queue domination, recurrence and diffusive scaling.
//!
//! Modules, bottom-up:
//! - [`process`]: exact competing-clocks simulation of one walker.
//! - [`regen`]: regeneration cycles and regenerative estimators.
//! - [`queue`]: the dominating M/M/inf queue and the pathwise coupling.
//! - [`oracle`]: closed forms and exhaustive enumeration of one cycle.
//! - [`scaling`]: marginal, variance-growth and recurrence checks.
//! - [`config`]: run configuration and manifests for the CLI.

pub mod config;
pub mod lattice;
pub mod oracle;
pub mod parallel;
pub mod params;
pub mod process;
pub mod queue;
pub mod regen;
pub mod rng;
pub mod scaling;
pub mod stats;

mod error;

pub use error::{Error, Result};
pub use lattice::{Bond, Direction, Site};
pub use parallel::Pool;
pub use params::ModelParams;
