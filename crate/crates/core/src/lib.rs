//! Online sketching of streaming categorical data with missing entries.
//!
//! A latent subspace `U` is learned one datum at a time: each partial
//! observation is embedded into a low-dimensional sketch `ψ` by maximizing a
//! regularized Probit, Tobit or Logit likelihood, after which `U` takes one
//! stochastic-gradient step.

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod online;
pub mod sketch;
pub mod subspace;
pub mod threshold;

pub use data::{PartialDatum, Stream};
pub use error::{Error, Result};
pub use eval::{RegretReport, RunTrace, TraceRecord};
pub use models::{EntryDerivs, ModelSpec, QuantizerSpec, ScoreDerivs};
pub use online::{run_online, run_online_from, OnlineConfig, RunResult, ThresholdConfig};
pub use sketch::{InnerMethod, InnerSolverConfig, SketchOutcome, SketchVec};
pub use subspace::{StepSchedule, Subspace};
pub use threshold::{ThresholdGradForm, ThresholdState};
