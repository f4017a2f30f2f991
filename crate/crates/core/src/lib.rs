//! A desk-scale laboratory for difficulty-aware self-distillation policy
//! optimization on synthetic verifiable-reward tasks.
//!
//! The crate covers the full loop at toy scale: a synthetic environment
//! with per-question difficulty and exact-match rewards
//! ([`env`]), a linear-softmax policy whose teacher branch sees
//! privileged feedback ([`policy`]), truncated-distribution divergences
//! ([`dist`]), group-relative and per-token advantages ([`advantage`]),
//! difficulty-aware sample weighting ([`weighting`]), learnability bound
//! computations ([`learnability`]), the training methods and loop
//! ([`trainer`]), and numerical verification utilities
//! ([`diagnostics`]).

pub mod advantage;
pub mod diagnostics;
pub mod dist;
pub mod env;
pub mod error;
pub mod learnability;
pub mod optim;
pub mod policy;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
