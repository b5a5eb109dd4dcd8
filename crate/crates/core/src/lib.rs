//! Subjective divergence estimation.
//!
//! A subjective divergence compares the log estimated importance weights
//! `log p(z, x*) - log q̂(z; x*)` of samples drawn from an approximate
//! inference program against those of samples drawn from a trusted reference
//! program. With an exact (oracle) reference its expectation upper-bounds the
//! symmetrized KL divergence between the inference output distribution and
//! the posterior.
//!
//! The crate is organised as:
//!
//! - [`program`]: model / inference / meta-inference / reference traits.
//! - [`divergence`]: the Monte Carlo estimators.
//! - [`exact`]: enumeration oracles over finite spaces.
//! - [`kernels`]: detailed-balance transition operators.
//! - [`seqdb`]: sequential detailed-balance (annealed) inference and its
//!   reversed-chain meta-inference.
//! - [`smc`]: particle filtering with conditional-SMC meta-inference, SIR, FFBS.
//! - [`models`]: a small model zoo with exact references.

#![forbid(unsafe_code)]

pub mod divergence;
pub mod error;
pub mod exact;
pub mod kernels;
pub mod math;
pub mod models;
pub mod program;
pub mod rng;
pub mod seqdb;
pub mod smc;

pub use divergence::{
    estimate_subjective_divergence_assessable, estimate_subjective_divergence_general,
    estimate_subjective_divergence_with, log_weight_estimate, summarize_log_weights, DivergenceEstimate, Replicates,
    StageTimings,
};
pub use error::{Branch, Error, Result};
pub use program::{
    AssessableInference, Dataset, EnumerableModel, InferenceProgram, MetaInferenceProgram, Model, ReferenceProgram,
};
pub use rng::{replicate_rng, StreamRng};
