//! Turn-by-turn dialogue state tracking.
//!
//! Each user frame is scored against its service schema, the scores are
//! combined into slot decisions, and the decisions are applied to that
//! service's running state. System turns feed the action history used for
//! value retrieval and carryover.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carryover::{CarryoverGraph, QualifiedSlot};
use crate::decision_combiner::{
    build_frame, combine, select_intent, select_requested, Combination, FrameError, NluFrame,
    SlotDecision,
};
use crate::example_builder::{
    build_sequence_pair, render_system_turn, BuildError, SchemaElement, SequenceKind,
};
use crate::nlu_scorers::{
    best_candidate, IntentCandidate, Scorer, ScorerError, ScoringContext, SpanOutcome,
    ValueCandidate, ValueSource,
};
use crate::retrieval::{ActionHistory, RetrievalDepth, Retrieved};
use crate::sgd_data::{
    char_slice, Dialogue, DialoguePredictions, DialogueState, SchemaSet, ServiceSchema, SlotSchema,
    Speaker, DONTCARE, NONE_INTENT,
};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub threshold: f64,
    pub combination: Combination,
    pub retrieval_depth: RetrievalDepth,
    /// Carryover runs iff a graph is present.
    pub carryover: Option<CarryoverGraph>,
    /// Worker threads for corpus tracking; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            threshold: DEFAULT_THRESHOLD,
            combination: Combination::ProbAvg,
            retrieval_depth: RetrievalDepth::FullHistory,
            carryover: None,
            jobs: 1,
        }
    }
}

/// How an ActiveNoValue decision was resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Retrieved { turn: usize, source: QualifiedSlot },
    Carryover { turn: usize, source: QualifiedSlot },
    /// Nothing found; the previous value was kept.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub decision: SlotDecision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub turn: usize,
    pub service: String,
    pub state: DialogueState,
    pub trace: BTreeMap<String, SlotTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub dialogue_id: String,
    pub frames: Vec<FrameResult>,
}

impl TrackingResult {
    pub fn predictions(&self) -> DialoguePredictions {
        DialoguePredictions {
            dialogue_id: self.dialogue_id.clone(),
            states: self
                .frames
                .iter()
                .map(|f| ((f.turn, f.service.clone()), f.state.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("dialogue '{dialogue_id}' turn {turn} service '{service}'")]
    Scorer {
        dialogue_id: String,
        turn: usize,
        service: String,
        #[source]
        source: ScorerError,
    },
    #[error("dialogue '{dialogue_id}' turn {turn}")]
    Build {
        dialogue_id: String,
        turn: usize,
        #[source]
        source: BuildError,
    },
    #[error("dialogue '{dialogue_id}' turn {turn}")]
    Frame {
        dialogue_id: String,
        turn: usize,
        #[source]
        source: FrameError,
    },
    #[error("dialogue '{dialogue_id}': no schema for service '{service}'")]
    UnknownService { dialogue_id: String, service: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl TrackError {
    pub fn is_transport(&self) -> bool {
        matches!(self, TrackError::Scorer { source: ScorerError::Transport { .. }, .. })
    }
}

fn accept_retrieved(slot: &SlotSchema, r: &Retrieved) -> Option<Vec<String>> {
    if !slot.is_categorical {
        return Some(r.values.clone());
    }
    let canonical: Option<Vec<String>> = r
        .values
        .iter()
        .map(|v| slot.canonical_value(v).map(str::to_string))
        .collect();
    if canonical.is_none() {
        log::info!(
            "skipping retrieved {:?} for categorical slot '{}' from {} at turn {}",
            r.values,
            slot.name,
            r.source,
            r.turn
        );
    }
    canonical
}

/// Applies one NLU frame to the previous state of its service.
pub fn update_state(
    prev: &DialogueState,
    frame: &NluFrame,
    schema: &ServiceSchema,
    history: &ActionHistory,
    config: &TrackerConfig,
    turn: usize,
) -> (DialogueState, BTreeMap<String, SlotTrace>) {
    let mut state = DialogueState {
        active_intent: frame.active_intent.clone(),
        requested_slots: frame.requested_slots.clone(),
        slot_values: prev.slot_values.clone(),
    };
    let mut trace = BTreeMap::new();
    for (slot_name, decision) in &frame.decisions {
        let mut resolution = None;
        match decision {
            SlotDecision::NoUpdate => {}
            SlotDecision::Dontcare => {
                state.slot_values.insert(slot_name.clone(), vec![DONTCARE.to_string()]);
            }
            SlotDecision::Value { value, .. } => {
                state.slot_values.insert(slot_name.clone(), vec![value.clone()]);
            }
            SlotDecision::ActiveNoValue => {
                let slot = schema.slot(slot_name).expect("frame decisions match the schema");
                let same = history
                    .retrieve_value(&frame.service, slot_name, turn, config.retrieval_depth)
                    .and_then(|r| accept_retrieved(slot, &r).map(|v| (r, v)));
                let found = same
                    .map(|(r, v)| (Resolution::Retrieved { turn: r.turn, source: r.source }, v))
                    .or_else(|| {
                        let graph = config.carryover.as_ref()?;
                        let cands = graph.candidate_set(&QualifiedSlot::new(&frame.service, slot_name));
                        let r = history.retrieve_carryover(&cands, turn)?;
                        let v = accept_retrieved(slot, &r)?;
                        Some((Resolution::Carryover { turn: r.turn, source: r.source }, v))
                    });
                match found {
                    Some((how, values)) => {
                        state.slot_values.insert(slot_name.clone(), values);
                        resolution = Some(how);
                    }
                    None => resolution = Some(Resolution::Unresolved),
                }
            }
        }
        trace.insert(
            slot_name.clone(),
            SlotTrace {
                decision: decision.clone(),
                resolution,
            },
        );
    }
    (state, trace)
}

struct FrameInputs<'a> {
    ctx: ScoringContext<'a>,
    prev_intent: &'a str,
}

fn nlu_frame(
    scorer: &dyn Scorer,
    input: &FrameInputs<'_>,
    config: &TrackerConfig,
    dialogue_id: &str,
) -> Result<NluFrame, TrackError> {
    let ctx = &input.ctx;
    let schema = ctx.service;
    let turn = ctx.turn_index;
    let build_err = |source| TrackError::Build {
        dialogue_id: dialogue_id.to_string(),
        turn,
        source,
    };
    let score_err = |source| TrackError::Scorer {
        dialogue_id: dialogue_id.to_string(),
        turn,
        service: schema.service_name.clone(),
        source,
    };
    let pair = |kind, element| {
        build_sequence_pair(kind, element, ctx.psu, ctx.cuu, Some(input.prev_intent)).map_err(build_err)
    };

    let mut candidates = Vec::with_capacity(schema.intents.len() + 1);
    for intent in &schema.intents {
        candidates.push(IntentCandidate {
            name: intent.name.clone(),
            pair: pair(SequenceKind::Intent, SchemaElement::Intent(intent))?,
        });
    }
    candidates.push(IntentCandidate {
        name: NONE_INTENT.to_string(),
        pair: pair(SequenceKind::Intent, SchemaElement::NoneIntent)?,
    });
    let scores = scorer.score_intents(ctx, &candidates).map_err(score_err)?;
    if scores.len() != candidates.len() {
        return Err(score_err(ScorerError::protocol(
            "scores",
            format!("{} scores for {} intents", scores.len(), candidates.len()),
        )));
    }
    let named: Vec<(String, f64)> = candidates.into_iter().map(|c| c.name).zip(scores).collect();
    let active_intent = select_intent(&named);

    let mut requested = Vec::new();
    let mut decisions = BTreeMap::new();
    for slot in &schema.slots {
        let p = scorer
            .score_requested(ctx, slot, &pair(SequenceKind::SlotRequest, SchemaElement::Slot(slot))?)
            .map_err(score_err)?;
        requested.push((slot.name.clone(), p));

        let status = scorer
            .score_status(ctx, slot, &pair(SequenceKind::SlotStatus, SchemaElement::Slot(slot))?)
            .map_err(score_err)?;
        let best: Option<ValueCandidate> = if slot.is_categorical {
            let pairs = slot
                .possible_values
                .iter()
                .map(|v| pair(SequenceKind::SlotValue, SchemaElement::SlotValue(slot, v)))
                .collect::<Result<Vec<_>, _>>()?;
            let values = scorer.score_values(ctx, slot, &pairs).map_err(score_err)?;
            best_candidate(&values).cloned()
        } else {
            let spans = scorer
                .tag_span(ctx, slot, &pair(SequenceKind::SlotTagging, SchemaElement::Slot(slot))?)
                .map_err(score_err)?;
            spans.check(ctx.cuu_len()).map_err(score_err)?;
            match spans.top() {
                Some((SpanOutcome::Span { start, end }, p)) => {
                    let text = char_slice(ctx.cuu, start, end).expect("span checked against utterance");
                    Some(ValueCandidate::new(text, p, ValueSource::Span))
                }
                _ => None,
            }
        };
        let decision = combine(config.combination, &status, best.as_ref(), config.threshold);
        decisions.insert(slot.name.clone(), decision);
    }
    let requested_slots: BTreeSet<String> = select_requested(&requested);
    build_frame(schema, active_intent, requested_slots, decisions).map_err(|source| TrackError::Frame {
        dialogue_id: dialogue_id.to_string(),
        turn,
        source,
    })
}

pub fn track_dialogue(
    dialogue: &Dialogue,
    schemas: &SchemaSet,
    scorer: &dyn Scorer,
    config: &TrackerConfig,
) -> Result<TrackingResult, TrackError> {
    let id = dialogue.dialogue_id.as_str();
    let mut history = ActionHistory::new();
    let mut states: HashMap<&str, DialogueState> = HashMap::new();
    let mut frames = Vec::new();
    let mut psu = String::new();
    let empty = DialogueState::default();
    for (t, turn) in dialogue.turns.iter().enumerate() {
        if turn.speaker == Speaker::System {
            history.record_turn(t, turn);
            psu = render_system_turn(turn).map_err(|source| TrackError::Build {
                dialogue_id: id.to_string(),
                turn: t,
                source,
            })?;
            continue;
        }
        for frame in &turn.frames {
            let schema = schemas.get(&frame.service).ok_or_else(|| TrackError::UnknownService {
                dialogue_id: id.to_string(),
                service: frame.service.clone(),
            })?;
            let prev = states.get(frame.service.as_str()).unwrap_or(&empty);
            let input = FrameInputs {
                ctx: ScoringContext {
                    dialogue_id: id,
                    turn_index: t,
                    service: schema,
                    psu: &psu,
                    cuu: &turn.utterance,
                },
                prev_intent: &prev.active_intent,
            };
            let nlu = nlu_frame(scorer, &input, config, id)?;
            let (state, trace) = update_state(prev, &nlu, schema, &history, config, t);
            frames.push(FrameResult {
                turn: t,
                service: frame.service.clone(),
                state: state.clone(),
                trace,
            });
            states.insert(frame.service.as_str(), state);
        }
        psu.clear();
    }
    Ok(TrackingResult {
        dialogue_id: id.to_string(),
        frames,
    })
}

/// Tracks every dialogue, in parallel when `config.jobs != 1`. Output order
/// follows the corpus; on failure the error of the earliest failing dialogue
/// is returned.
pub fn track_corpus(
    corpus: &[Dialogue],
    schemas: &SchemaSet,
    scorer: &dyn Scorer,
    config: &TrackerConfig,
) -> Result<Vec<TrackingResult>, TrackError> {
    let run = |d: &Dialogue| track_dialogue(d, schemas, scorer, config);
    let results: Vec<Result<TrackingResult, TrackError>> = if config.jobs == 1 {
        corpus.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| TrackError::Pool(e.to_string()))?;
        pool.install(|| corpus.par_iter().map(run).collect())
    };
    results.into_iter().collect()
}
