//! Core of the dual-view cascaded reranker: dense math, tape autodiff,
//! the model itself, losses, optimizer, synthetic data, and ranking
//! metrics. Everything here is `no_std` (with `alloc`) and fully
//! deterministic given a seed; IO, timing, and the CLI live in the
//! companion `dualview` crate.

#![no_std]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod config;
pub mod data;
pub mod fdcheck;
pub mod layers;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod train;

pub use config::{Ablation, ModelConfig, TrainConfig};
pub use data::{Candidate, CandidateSet, SyntheticMode, SyntheticSpec};
pub use losses::{LossBreakdown, LossConfig};
pub use matrix::{Element, Matrix};
pub use model::{DualViewModel, ModelError, ScoredCandidates, ScoringModel};
pub use params::ParameterRegistry;
pub use rng::Rng;
pub use tape::{Tape, Var};

