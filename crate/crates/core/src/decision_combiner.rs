//! Turns raw scorer outputs into an NLU frame.
//!
//! Slot decisions come from either the probabilistic-average rule or the
//! two-stage pipeline it is compared against. Both are generic over the
//! probability scalar so boundary behaviour can be checked with exact
//! rationals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::nlu_scorers::{Status, StatusDistribution, ValueCandidate, ValueSource};
use crate::scalar::Probability;
use crate::sgd_data::{ServiceSchema, NONE_INTENT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotDecision {
    /// Keep the previous value.
    NoUpdate,
    Dontcare,
    Value { value: String, source: ValueSource },
    /// The slot changed but no value was extracted from the current turn.
    ActiveNoValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    ProbAvg,
    Pipeline,
}

/// Highest-scoring intent. Ties go to the earlier intent, and `NONE` only
/// wins ties against nothing.
pub fn select_intent<P: Probability>(scores: &[(String, P)]) -> String {
    let mut best: Option<(&str, P)> = None;
    let real = scores.iter().filter(|(n, _)| n != NONE_INTENT);
    let none = scores.iter().filter(|(n, _)| n == NONE_INTENT);
    for (name, score) in real.chain(none) {
        match best {
            Some((_, b)) if *score <= b => {}
            _ => best = Some((name, *score)),
        }
    }
    best.map(|(n, _)| n.to_string())
        .unwrap_or_else(|| NONE_INTENT.to_string())
}

/// Slots whose request probability is strictly above one half.
pub fn select_requested<P: Probability>(probs: &[(String, P)]) -> BTreeSet<String> {
    probs
        .iter()
        .filter(|(_, p)| *p > P::half())
        .map(|(s, _)| s.clone())
        .collect()
}

fn assign<P>(vm: Option<&ValueCandidate<P>>) -> SlotDecision {
    match vm {
        Some(c) => SlotDecision::Value {
            value: c.value.clone(),
            source: c.source,
        },
        // nothing to assign: the slot is active without a value
        None => SlotDecision::ActiveNoValue,
    }
}

/// Probabilistic average of the status model's active probability and the
/// best value probability. A missing candidate counts as probability 0.
pub fn prob_avg<P: Probability>(
    status: &StatusDistribution<P>,
    vm: Option<&ValueCandidate<P>>,
    threshold: P,
) -> SlotDecision {
    let p_m = vm.map(|c| c.probability).unwrap_or_else(P::zero);
    let avg = (status.p_active + p_m) / (P::one() + P::one());
    match status.argmax() {
        Status::None if avg > threshold => assign(vm),
        Status::None => SlotDecision::NoUpdate,
        Status::Active if avg > threshold => assign(vm),
        Status::Active => SlotDecision::ActiveNoValue,
        Status::Dontcare => SlotDecision::Dontcare,
    }
}

/// Two-stage baseline: the status argmax alone decides whether a value is
/// extracted.
pub fn pipeline_combine<P: Probability>(
    status: &StatusDistribution<P>,
    vm: Option<&ValueCandidate<P>>,
) -> SlotDecision {
    match status.argmax() {
        Status::None => SlotDecision::NoUpdate,
        Status::Dontcare => SlotDecision::Dontcare,
        Status::Active => match vm {
            Some(c) if c.probability > P::zero() => assign(vm),
            _ => SlotDecision::ActiveNoValue,
        },
    }
}

pub fn combine<P: Probability>(
    combination: Combination,
    status: &StatusDistribution<P>,
    vm: Option<&ValueCandidate<P>>,
    threshold: P,
) -> SlotDecision {
    match combination {
        Combination::ProbAvg => prob_avg(status, vm, threshold),
        Combination::Pipeline => pipeline_combine(status, vm),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluFrame {
    pub service: String,
    pub active_intent: String,
    pub requested_slots: BTreeSet<String>,
    pub decisions: BTreeMap<String, SlotDecision>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrameError {
    #[error("service '{service}': no decision for slot '{slot}'")]
    MissingDecision { service: String, slot: String },
    #[error("service '{service}': decision for unknown slot '{slot}'")]
    UnknownSlot { service: String, slot: String },
    #[error("service '{service}' slot '{slot}': '{value}' is not a possible value")]
    InvalidValue {
        service: String,
        slot: String,
        value: String,
    },
    #[error("service '{service}': unknown intent '{intent}'")]
    UnknownIntent { service: String, intent: String },
}

pub fn build_frame(
    schema: &ServiceSchema,
    active_intent: String,
    requested_slots: BTreeSet<String>,
    decisions: BTreeMap<String, SlotDecision>,
) -> Result<NluFrame, FrameError> {
    let service = &schema.service_name;
    if !schema.has_intent(&active_intent) {
        return Err(FrameError::UnknownIntent {
            service: service.clone(),
            intent: active_intent,
        });
    }
    for slot in &schema.slots {
        match decisions.get(&slot.name) {
            None => {
                return Err(FrameError::MissingDecision {
                    service: service.clone(),
                    slot: slot.name.clone(),
                })
            }
            Some(SlotDecision::Value { value, .. })
                if slot.is_categorical && !slot.possible_values.contains(value) =>
            {
                return Err(FrameError::InvalidValue {
                    service: service.clone(),
                    slot: slot.name.clone(),
                    value: value.clone(),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = decisions.keys().find(|k| schema.slot(k).is_none()) {
        return Err(FrameError::UnknownSlot {
            service: service.clone(),
            slot: extra.clone(),
        });
    }
    Ok(NluFrame {
        service: service.clone(),
        active_intent,
        requested_slots,
        decisions,
    })
}
