//! K-FAC and SGD-with-momentum over a small multilayer perceptron, plus the
//! harness used to measure how both optimizers scale with batch size:
//! adjusted epoch budgets, log-space hyperparameter grids, iterations-to-target,
//! speedup ratios, heatmaps and robustness distributions.
//!
//! Everything is double precision and deterministic in its seeds.

pub mod analysis;
pub mod budget;
pub mod data;
pub mod error;
pub mod fisher;
pub mod fsutil;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymEig};
