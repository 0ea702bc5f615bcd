//! The five-function scorer contract and its implementations.
//!
//! A [`Scorer`] answers the five NLU questions for one service frame of one
//! user turn: intent scores, requested-slot probability, slot status
//! distribution, categorical value probabilities and span n-best. Inputs are
//! the sequence pairs built by [`crate::example_builder`].

mod lexical;
mod oracle;
mod remote;

pub use lexical::{jaccard, Gazetteer, LexicalScorer};
pub use oracle::{OracleScorer, ORACLE_CONFIDENCE, ORACLE_RESIDUAL};
pub use remote::{RemoteConfig, RemoteScorer, ScoreRequest, DEFAULT_IN_FLIGHT, REMOTE_SUM_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::example_builder::SequencePair;
use crate::scalar::Probability;
use crate::sgd_data::{ServiceSchema, SlotSchema};

/// Tolerance on the sum of a status distribution.
pub const STATUS_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    None,
    Dontcare,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusDistribution<P = f64> {
    pub p_none: P,
    pub p_dontcare: P,
    pub p_active: P,
}

impl<P: Probability> StatusDistribution<P> {
    pub fn new(p_none: P, p_dontcare: P, p_active: P) -> Result<Self, ScorerError> {
        let d = StatusDistribution {
            p_none,
            p_dontcare,
            p_active,
        };
        d.check(P::from_f64_lossy(STATUS_SUM_TOLERANCE))?;
        Ok(d)
    }

    pub fn check(&self, tolerance: P) -> Result<(), ScorerError> {
        for (field, p) in [
            ("p_none", self.p_none),
            ("p_dontcare", self.p_dontcare),
            ("p_active", self.p_active),
        ] {
            if !p.in_unit_interval() {
                return Err(ScorerError::protocol(field, format!("{p:?} outside [0, 1]")));
            }
        }
        let sum = self.p_none + self.p_dontcare + self.p_active;
        if sum.abs_diff(P::one()) > tolerance {
            return Err(ScorerError::protocol(
                "p_none+p_dontcare+p_active",
                format!("sums to {sum:?}"),
            ));
        }
        Ok(())
    }

    /// Argmax with ties resolved none, then active, then dontcare.
    pub fn argmax(&self) -> Status {
        let max = [self.p_none, self.p_dontcare, self.p_active]
            .into_iter()
            .fold(self.p_none, |m, p| if p > m { p } else { m });
        if self.p_none == max {
            Status::None
        } else if self.p_active == max {
            Status::Active
        } else {
            Status::Dontcare
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValueSource {
    Categorical,
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCandidate<P = f64> {
    pub value: String,
    pub probability: P,
    pub source: ValueSource,
}

impl<P> ValueCandidate<P> {
    pub fn new(value: &str, probability: P, source: ValueSource) -> Self {
        ValueCandidate {
            value: value.to_string(),
            probability,
            source,
        }
    }
}

/// Highest-probability candidate; the earliest wins ties.
pub fn best_candidate<P: Probability>(candidates: &[ValueCandidate<P>]) -> Option<&ValueCandidate<P>> {
    candidates.iter().fold(None, |best, c| match best {
        Some(b) if b.probability >= c.probability => Some(b),
        _ => Some(c),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanOutcome {
    /// Code-point range into the current user utterance.
    Span { start: usize, end: usize },
    NoSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanResult {
    pub n_best: Vec<(SpanOutcome, f64)>,
}

impl SpanResult {
    pub fn no_span(p: f64) -> Self {
        SpanResult {
            n_best: vec![(SpanOutcome::NoSpan, p)],
        }
    }

    pub fn top(&self) -> Option<(SpanOutcome, f64)> {
        self.n_best.first().copied()
    }

    pub fn check(&self, utterance_len: usize) -> Result<(), ScorerError> {
        let mut last = f64::INFINITY;
        for (i, (outcome, p)) in self.n_best.iter().enumerate() {
            if !p.in_unit_interval() {
                return Err(ScorerError::protocol(
                    format!("n_best[{i}].probability"),
                    format!("{p} outside [0, 1]"),
                ));
            }
            if *p > last {
                return Err(ScorerError::protocol(
                    format!("n_best[{i}].probability"),
                    "n-best probabilities increase",
                ));
            }
            last = *p;
            if let SpanOutcome::Span { start, end } = outcome {
                if start >= end || *end > utterance_len {
                    return Err(ScorerError::protocol(
                        format!("n_best[{i}]"),
                        format!("span [{start}, {end}) outside utterance of {utterance_len} characters"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScorerError {
    #[error("protocol violation in `{field}`: {message}")]
    Protocol { field: String, message: String },
    #[error("dialogue '{dialogue_id}' turn {turn}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        dialogue_id: String,
        turn: usize,
        attempts: u32,
        message: String,
    },
    #[error("no gold label for dialogue '{dialogue_id}' turn {turn} service '{service}'")]
    MissingGold {
        dialogue_id: String,
        turn: usize,
        service: String,
    },
}

impl ScorerError {
    pub fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScorerError::Protocol {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// The dialogue position a scoring call is made for.
#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    pub dialogue_id: &'a str,
    pub turn_index: usize,
    pub service: &'a ServiceSchema,
    /// Rendered preceding system turn, empty on the first turn.
    pub psu: &'a str,
    /// Current user utterance, original casing.
    pub cuu: &'a str,
}

impl ScoringContext<'_> {
    pub fn cuu_len(&self) -> usize {
        self.cuu.chars().count()
    }
}

/// An intent candidate (a schema intent or `NONE`) with its input pair.
#[derive(Debug, Clone)]
pub struct IntentCandidate {
    pub name: String,
    pub pair: SequencePair,
}

pub trait Scorer: Send + Sync {
    /// Scores aligned with `candidates`.
    fn score_intents(
        &self,
        ctx: &ScoringContext<'_>,
        candidates: &[IntentCandidate],
    ) -> Result<Vec<f64>, ScorerError>;

    fn score_requested(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<f64, ScorerError>;

    fn score_status(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<StatusDistribution, ScorerError>;

    /// One candidate per possible value, in schema order.
    fn score_values(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        pairs: &[SequencePair],
    ) -> Result<Vec<ValueCandidate>, ScorerError>;

    fn tag_span(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<SpanResult, ScorerError>;
}
