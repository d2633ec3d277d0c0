//! Sequential Bayesian calibration of expensive simulators in parallel
//! batches, plus a Monte Carlo model of the wall-clock cost of such designs.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`] - parameter boxes, uniform priors, unnormalized posteriors.
//! * [`gp`] - zero-mean GP emulator with a separable Matérn-3/2 kernel.
//! * [`acquisition`] - PI, expected unimprovement, EIVAR, HYBRID and RND,
//!   candidate scoring and constant-liar batch construction.
//! * [`engine`] - the manager/worker sequential design loop.
//! * [`testbed`] - six synthetic calibration problems.
//! * [`perf`] - the Monte Carlo performance model and its input models.
//! * [`metrics`] - progress, MAD, speedup, idle time and computing hours.
//! * [`trace_io`] - CSV readers and writers for traces and reports.
//! * [`cli`] - the `parcal` command line front end.

pub mod acquisition;
pub mod cli;
pub mod engine;
mod error;
pub mod gp;
pub mod metrics;
pub mod perf;
pub mod problem;
pub mod rng;
pub mod stats;
pub mod testbed;
pub mod trace_io;

pub use error::{Error, Result};
