//! Gold-label test double: answers with [`ORACLE_CONFIDENCE`] for the gold
//! decision and spreads the rest evenly.

use std::collections::HashMap;

use super::{
    IntentCandidate, Scorer, ScorerError, ScoringContext, SpanOutcome, SpanResult,
    StatusDistribution, ValueCandidate, ValueSource,
};
use crate::example_builder::{diff_states, SequencePair, SlotLabel, TurnLabel};
use crate::sgd_data::{Dialogue, DialogueState, SlotSchema, Speaker};

pub const ORACLE_CONFIDENCE: f64 = 0.99;
/// Probability given to each non-gold outcome of a three-way or per-value
/// decision.
pub const ORACLE_RESIDUAL: f64 = 0.005;

type Key = (String, usize, String);

#[derive(Debug, Clone)]
enum Labels {
    Fixed(TurnLabel),
    Corpus(HashMap<Key, TurnLabel>),
}

#[derive(Debug, Clone)]
pub struct OracleScorer {
    labels: Labels,
}

impl OracleScorer {
    /// Scores every context against the same label.
    pub fn for_label(label: TurnLabel) -> Self {
        OracleScorer {
            labels: Labels::Fixed(label),
        }
    }

    /// Labels every user frame of the corpus by diffing consecutive gold
    /// states of the same service.
    pub fn from_corpus(corpus: &[Dialogue]) -> Self {
        let mut map = HashMap::new();
        for dialogue in corpus {
            let mut prev: HashMap<&str, &DialogueState> = HashMap::new();
            let empty = DialogueState::default();
            for (t, turn) in dialogue.turns.iter().enumerate() {
                if turn.speaker != Speaker::User {
                    continue;
                }
                for frame in &turn.frames {
                    let Some(cur) = &frame.state else { continue };
                    let before = prev.get(frame.service.as_str()).copied().unwrap_or(&empty);
                    let label = diff_states(before, cur, &frame.spans);
                    map.insert((dialogue.dialogue_id.clone(), t, frame.service.clone()), label);
                    prev.insert(frame.service.as_str(), cur);
                }
            }
        }
        OracleScorer {
            labels: Labels::Corpus(map),
        }
    }

    fn label(&self, ctx: &ScoringContext<'_>) -> Result<&TurnLabel, ScorerError> {
        match &self.labels {
            Labels::Fixed(label) => Ok(label),
            Labels::Corpus(map) => map
                .get(&(
                    ctx.dialogue_id.to_string(),
                    ctx.turn_index,
                    ctx.service.service_name.clone(),
                ))
                .ok_or_else(|| ScorerError::MissingGold {
                    dialogue_id: ctx.dialogue_id.to_string(),
                    turn: ctx.turn_index,
                    service: ctx.service.service_name.clone(),
                }),
        }
    }
}

impl Scorer for OracleScorer {
    fn score_intents(
        &self,
        ctx: &ScoringContext<'_>,
        candidates: &[IntentCandidate],
    ) -> Result<Vec<f64>, ScorerError> {
        let gold = &self.label(ctx)?.active_intent;
        let others = candidates.len().saturating_sub(1).max(1) as f64;
        Ok(candidates
            .iter()
            .map(|c| {
                if &c.name == gold {
                    ORACLE_CONFIDENCE
                } else {
                    (1.0 - ORACLE_CONFIDENCE) / others
                }
            })
            .collect())
    }

    fn score_requested(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pair: &SequencePair,
    ) -> Result<f64, ScorerError> {
        let requested = self.label(ctx)?.requested_slots.contains(&slot.name);
        Ok(if requested {
            ORACLE_CONFIDENCE
        } else {
            1.0 - ORACLE_CONFIDENCE
        })
    }

    fn score_status(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pair: &SequencePair,
    ) -> Result<StatusDistribution, ScorerError> {
        let (hi, lo) = (ORACLE_CONFIDENCE, ORACLE_RESIDUAL);
        let d = match self.label(ctx)?.slot(&slot.name) {
            SlotLabel::None => StatusDistribution::new(hi, lo, lo),
            SlotLabel::Dontcare => StatusDistribution::new(lo, hi, lo),
            SlotLabel::Active(_) => StatusDistribution::new(lo, lo, hi),
        };
        Ok(d.expect("oracle distribution sums to one"))
    }

    fn score_values(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pairs: &[SequencePair],
    ) -> Result<Vec<ValueCandidate>, ScorerError> {
        let gold = match self.label(ctx)?.slot(&slot.name) {
            SlotLabel::Active(values) => values,
            _ => Vec::new(),
        };
        Ok(slot
            .possible_values
            .iter()
            .map(|v| {
                let p = if gold.contains(v) {
                    ORACLE_CONFIDENCE
                } else {
                    ORACLE_RESIDUAL
                };
                ValueCandidate::new(v, p, ValueSource::Categorical)
            })
            .collect())
    }

    fn tag_span(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pair: &SequencePair,
    ) -> Result<SpanResult, ScorerError> {
        let label = self.label(ctx)?;
        let span = match label.slot(&slot.name) {
            SlotLabel::Active(_) => label.span(&slot.name),
            _ => None,
        };
        Ok(match span {
            Some(s) => SpanResult {
                n_best: vec![
                    (SpanOutcome::Span { start: s.start, end: s.end }, ORACLE_CONFIDENCE),
                    (SpanOutcome::NoSpan, 1.0 - ORACLE_CONFIDENCE),
                ],
            },
            None => SpanResult::no_span(ORACLE_CONFIDENCE),
        })
    }
}
