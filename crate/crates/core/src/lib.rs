//! Schema-guided dialogue state tracking.
//!
//! The crate turns an SGD-format corpus plus service schemas into per-turn
//! dialogue states. Per user turn, a [`nlu_scorers::Scorer`] answers five
//! questions over schema-conditioned sequence pairs, the
//! [`decision_combiner`] turns those answers into slot decisions, and the
//! [`tracker`] applies them to the running state with optional
//! [`retrieval`] from system actions and cross-service [`carryover`].

pub mod carryover;
pub mod decision_combiner;
pub mod evaluator;
pub mod example_builder;
pub mod nlu_scorers;
pub mod retrieval;
pub mod scalar;
pub mod sgd_data;
pub mod synth;
pub mod text;
pub mod tracker;

pub use scalar::{Exact, Probability};

/// Status distribution over `f64`.
pub type Status64 = nlu_scorers::StatusDistribution<f64>;
/// Status distribution over exact rationals.
pub type ExactStatus = nlu_scorers::StatusDistribution<Exact>;
/// Value candidate over exact rationals.
pub type ExactCandidate = nlu_scorers::ValueCandidate<Exact>;
