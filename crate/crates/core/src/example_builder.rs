//! Input sequence pairs for the five NLU models, turn-level labels derived
//! from consecutive gold states, and training-example emission with
//! previous-intent dropout.
//!
//! | kind           | sequence 1            | sequence 2                      |
//! |----------------|-----------------------|---------------------------------|
//! | `Intent`       | intent : description  | prev intent \| psu \| cuu        |
//! | `SlotRequest`  | slot : description    | cuu                             |
//! | `SlotStatus`   | slot : description    | psu \| cuu                       |
//! | `SlotValue`    | slot : value          | psu \| cuu                       |
//! | `SlotTagging`  | slot : description    | cuu                             |
//!
//! Empty context segments are omitted together with their separator. All
//! text is lowercased.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::sgd_data::{
    DataError, Dialogue, DialogueState, IntentSchema, SchemaSet, SlotSchema, Span, Speaker, Turn,
    DONTCARE, NONE_INTENT,
};
use crate::text::lowercase;

pub const SCHEMA_SEPARATOR: &str = " : ";
pub const CONTEXT_SEPARATOR: &str = " | ";
pub const ACTION_SEPARATOR: &str = " ; ";
pub const NONE_INTENT_DESCRIPTION: &str = "no active intent";
pub const DEFAULT_DROPOUT_RATE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SequenceKind {
    Intent,
    SlotRequest,
    SlotStatus,
    SlotValue,
    SlotTagging,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequencePair {
    pub seq1: String,
    pub seq2: String,
    pub kind: SequenceKind,
}

/// The schema element a sequence pair is built from.
#[derive(Debug, Clone, Copy)]
pub enum SchemaElement<'a> {
    Intent(&'a IntentSchema),
    NoneIntent,
    Slot(&'a SlotSchema),
    SlotValue(&'a SlotSchema, &'a str),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BuildError {
    #[error("cannot render a USER turn as system actions")]
    NotSystemTurn,
    #[error("{kind:?} pair cannot be built from {element}")]
    ElementMismatch { kind: SequenceKind, element: String },
    #[error("slot '{0}' is not categorical")]
    NotCategorical(String),
    #[error("slot '{0}' is categorical and has no spans")]
    Categorical(String),
    #[error("{0:?} pair would have an empty dialogue-context sequence")]
    EmptyContext(SequenceKind),
}

/// Renders a system turn from its dialogue acts: `act slot = v1 , v2`,
/// actions joined by ` ; `.
pub fn render_system_turn(turn: &Turn) -> Result<String, BuildError> {
    if turn.speaker != Speaker::System {
        return Err(BuildError::NotSystemTurn);
    }
    let rendered: Vec<String> = turn
        .frames
        .iter()
        .flat_map(|f| f.actions.iter())
        .map(|a| {
            let mut s = a.act.as_str().to_lowercase();
            if let Some(slot) = &a.slot {
                s.push(' ');
                s.push_str(slot);
            }
            if !a.values.is_empty() {
                s.push_str(" = ");
                s.push_str(&a.values.join(" , "));
            }
            s
        })
        .collect();
    Ok(rendered.join(ACTION_SEPARATOR))
}

fn join_context(segments: &[&str]) -> String {
    segments
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(CONTEXT_SEPARATOR)
}

fn schema_side(name: &str, detail: &str) -> String {
    format!("{name}{SCHEMA_SEPARATOR}{detail}")
}

pub fn build_sequence_pair(
    kind: SequenceKind,
    element: SchemaElement<'_>,
    psu: &str,
    cuu: &str,
    prev_intent: Option<&str>,
) -> Result<SequencePair, BuildError> {
    let mismatch = || BuildError::ElementMismatch {
        kind,
        element: format!("{element:?}"),
    };
    let (seq1, seq2) = match (kind, element) {
        (SequenceKind::Intent, SchemaElement::Intent(intent)) => (
            schema_side(&intent.name, &intent.description),
            join_context(&[prev_intent.unwrap_or(""), psu, cuu]),
        ),
        (SequenceKind::Intent, SchemaElement::NoneIntent) => (
            schema_side(NONE_INTENT, NONE_INTENT_DESCRIPTION),
            join_context(&[prev_intent.unwrap_or(""), psu, cuu]),
        ),
        (SequenceKind::SlotRequest, SchemaElement::Slot(slot)) => {
            (schema_side(&slot.name, &slot.description), cuu.to_string())
        }
        (SequenceKind::SlotStatus, SchemaElement::Slot(slot)) => (
            schema_side(&slot.name, &slot.description),
            join_context(&[psu, cuu]),
        ),
        (SequenceKind::SlotValue, SchemaElement::SlotValue(slot, value)) => {
            if !slot.is_categorical {
                return Err(BuildError::NotCategorical(slot.name.clone()));
            }
            (schema_side(&slot.name, value), join_context(&[psu, cuu]))
        }
        (SequenceKind::SlotTagging, SchemaElement::Slot(slot)) => {
            if slot.is_categorical {
                return Err(BuildError::Categorical(slot.name.clone()));
            }
            (schema_side(&slot.name, &slot.description), cuu.to_string())
        }
        _ => return Err(mismatch()),
    };
    if seq2.is_empty() {
        return Err(BuildError::EmptyContext(kind));
    }
    Ok(SequencePair {
        seq1: lowercase(&seq1),
        seq2: lowercase(&seq2),
        kind,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotLabel {
    None,
    Dontcare,
    Active(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub active_intent: String,
    pub requested_slots: BTreeSet<String>,
    /// Only slots whose value changed relative to the previous user turn.
    pub slot_labels: BTreeMap<String, SlotLabel>,
    pub spans: Vec<Span>,
}

impl TurnLabel {
    pub fn slot(&self, slot: &str) -> SlotLabel {
        self.slot_labels.get(slot).cloned().unwrap_or(SlotLabel::None)
    }

    pub fn span(&self, slot: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.slot == slot)
    }
}

/// Turn-level NLU label: intent and requested slots from the current state,
/// slot labels from the change between the two states.
pub fn diff_states(prev: &DialogueState, cur: &DialogueState, spans_cuu: &[Span]) -> TurnLabel {
    let mut slot_labels = BTreeMap::new();
    for (slot, values) in &cur.slot_values {
        if prev.slot_values.get(slot) == Some(values) {
            continue;
        }
        let label = if values.len() == 1 && values[0] == DONTCARE {
            SlotLabel::Dontcare
        } else {
            SlotLabel::Active(values.clone())
        };
        slot_labels.insert(slot.clone(), label);
    }
    for slot in prev.slot_values.keys() {
        if !cur.slot_values.contains_key(slot) {
            log::warn!("slot '{slot}' dropped from the state; removal is not labeled");
        }
    }
    let spans = spans_cuu
        .iter()
        .filter(|s| matches!(slot_labels.get(&s.slot), Some(SlotLabel::Active(_))))
        .cloned()
        .collect();
    TurnLabel {
        active_intent: cur.active_intent.clone(),
        requested_slots: cur.requested_slots.clone(),
        slot_labels,
        spans,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    rate: f64,
    pub seed: u64,
}

impl DropoutConfig {
    pub fn new(rate: f64, seed: u64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(format!("dropout rate {rate} outside [0, 1]"));
        }
        Ok(DropoutConfig { rate, seed })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Same rate, seed mixed with a dialogue id so each dialogue's mask is
    /// independent of processing order.
    pub fn for_dialogue(&self, dialogue_id: &str) -> Self {
        DropoutConfig {
            rate: self.rate,
            seed: mix_seed(self.seed, dialogue_id),
        }
    }
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            rate: DEFAULT_DROPOUT_RATE,
            seed: 0,
        }
    }
}

/// FNV-1a over the id, folded into the seed.
pub fn mix_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `n` independent Bernoulli(rate) draws; `true` means drop.
pub fn bernoulli_mask(cfg: &DropoutConfig, n: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n).map(|_| rng.gen_bool(cfg.rate)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub kind: SequenceKind,
    pub service: String,
    pub element: String,
    pub seq1: String,
    pub seq2: String,
    pub label: Value,
}

/// Label of a tagging example without a span.
pub const NO_SPAN_LABEL: i64 = -1;

/// Emits every training example of the corpus, dialogue by dialogue, in turn
/// and schema order.
pub fn emit_training_examples(
    corpus: &[Dialogue],
    schemas: &SchemaSet,
    cfg: &DropoutConfig,
) -> Result<Vec<TrainingExample>, DataError> {
    let mut out = Vec::new();
    for dialogue in corpus {
        dialogue.validate_against(schemas)?;
        emit_dialogue(dialogue, schemas, cfg, &mut out)?;
    }
    Ok(out)
}

fn user_frame_count(dialogue: &Dialogue) -> usize {
    dialogue
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::User)
        .map(|t| t.frames.iter().filter(|f| f.state.is_some()).count())
        .sum()
}

fn emit_dialogue(
    dialogue: &Dialogue,
    schemas: &SchemaSet,
    cfg: &DropoutConfig,
    out: &mut Vec<TrainingExample>,
) -> Result<(), DataError> {
    let mask = bernoulli_mask(&cfg.for_dialogue(&dialogue.dialogue_id), user_frame_count(dialogue));
    let mut mask = mask.into_iter();
    let mut prev_states: BTreeMap<&str, DialogueState> = BTreeMap::new();
    for (t, turn) in dialogue.turns.iter().enumerate() {
        if turn.speaker != Speaker::User {
            continue;
        }
        let psu = match t.checked_sub(1) {
            Some(p) => render_system_turn(&dialogue.turns[p]).expect("odd turns are system turns"),
            None => String::new(),
        };
        for frame in &turn.frames {
            let Some(cur) = &frame.state else { continue };
            let schema = schemas
                .get(&frame.service)
                .expect("validated against schemas");
            let prev = prev_states.remove(frame.service.as_str()).unwrap_or_default();
            let label = diff_states(&prev, cur, &frame.spans);
            let drop = mask.next().unwrap_or(false);
            let prev_intent = (!drop).then_some(prev.active_intent.as_str());
            let mut push = |kind, element: SchemaElement<'_>, name: &str, label: Value| {
                let pair = build_sequence_pair(kind, element, &psu, &turn.utterance, prev_intent)
                    .map_err(|e| {
                        DataError::invalid(crate::sgd_data::Location::dialogue(&dialogue.dialogue_id), format!("turn {t}: {e}"))
                    })?;
                out.push(TrainingExample {
                    kind,
                    service: frame.service.clone(),
                    element: name.to_string(),
                    seq1: pair.seq1,
                    seq2: pair.seq2,
                    label,
                });
                Ok::<(), DataError>(())
            };
            for intent in &schema.intents {
                let hit = label.active_intent == intent.name;
                push(SequenceKind::Intent, SchemaElement::Intent(intent), &intent.name, json!(u8::from(hit)))?;
            }
            let none_hit = label.active_intent == NONE_INTENT;
            push(SequenceKind::Intent, SchemaElement::NoneIntent, NONE_INTENT, json!(u8::from(none_hit)))?;
            for slot in &schema.slots {
                let requested = label.requested_slots.contains(&slot.name);
                push(SequenceKind::SlotRequest, SchemaElement::Slot(slot), &slot.name, json!(u8::from(requested)))?;
            }
            for slot in &schema.slots {
                let status = match label.slot(&slot.name) {
                    SlotLabel::None => "none",
                    SlotLabel::Dontcare => "dontcare",
                    SlotLabel::Active(_) => "active",
                };
                push(SequenceKind::SlotStatus, SchemaElement::Slot(slot), &slot.name, json!(status))?;
            }
            for slot in schema.slots.iter().filter(|s| s.is_categorical) {
                let active = match label.slot(&slot.name) {
                    SlotLabel::Active(values) => values,
                    _ => Vec::new(),
                };
                for value in &slot.possible_values {
                    let hit = active.iter().any(|v| v == value);
                    push(SequenceKind::SlotValue, SchemaElement::SlotValue(slot, value), &slot.name, json!(u8::from(hit)))?;
                }
            }
            for slot in schema.slots.iter().filter(|s| !s.is_categorical) {
                let (start, end) = label
                    .span(&slot.name)
                    .map(|s| (s.start as i64, s.end as i64))
                    .unwrap_or((NO_SPAN_LABEL, NO_SPAN_LABEL));
                push(SequenceKind::SlotTagging, SchemaElement::Slot(slot), &slot.name, json!({"start": start, "end": end}))?;
            }
            prev_states.insert(frame.service.as_str(), cur.clone());
        }
    }
    Ok(())
}

/// One JSON object per line.
pub fn to_jsonl(examples: &[TrainingExample]) -> Vec<u8> {
    let mut out = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut out, ex).expect("example serializes");
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgd_data::{ActKind, Frame, SystemAction};

    fn system_turn(actions: Vec<SystemAction>) -> Turn {
        let mut frame = Frame::new("Svc");
        frame.actions = actions;
        Turn::new(Speaker::System, "", vec![frame])
    }

    #[test]
    fn renders_request_and_offer() {
        let turn = system_turn(vec![
            SystemAction::new(ActKind::Request, Some("city"), &[]),
            SystemAction::new(ActKind::Offer, Some("time"), &["7 pm"]),
        ]);
        assert_eq!(render_system_turn(&turn).unwrap(), "request city ; offer time = 7 pm");
    }

    #[test]
    fn renders_bare_acts() {
        let turn = system_turn(vec![SystemAction::new(ActKind::Goodbye, None, &[])]);
        assert_eq!(render_system_turn(&turn).unwrap(), "goodbye");
        let turn = system_turn(vec![
            SystemAction::new(ActKind::Inform, Some("price"), &["30 dollars"]),
            SystemAction::new(ActKind::NotifySuccess, None, &[]),
        ]);
        assert_eq!(
            render_system_turn(&turn).unwrap(),
            "inform price = 30 dollars ; notify_success"
        );
        let multi = system_turn(vec![SystemAction::new(ActKind::Offer, Some("time"), &["6 pm", "7 pm"])]);
        assert_eq!(render_system_turn(&multi).unwrap(), "offer time = 6 pm , 7 pm");
    }

    #[test]
    fn render_rejects_user_turn() {
        let turn = Turn::new(Speaker::User, "hi", vec![]);
        assert_eq!(render_system_turn(&turn), Err(BuildError::NotSystemTurn));
    }

    #[test]
    fn sequence_pairs_follow_the_input_table() {
        let city = SlotSchema::non_categorical("city", "City to search in");
        let req = build_sequence_pair(
            SequenceKind::SlotRequest,
            SchemaElement::Slot(&city),
            "request city",
            "any place in Fresno",
            None,
        )
        .unwrap();
        assert_eq!(req.seq1, "city : city to search in");
        assert_eq!(req.seq2, "any place in fresno");

        let status = build_sequence_pair(
            SequenceKind::SlotStatus,
            SchemaElement::Slot(&city),
            "request city",
            "Fresno please",
            None,
        )
        .unwrap();
        assert_eq!(status.seq2, "request city | fresno please");

        let intent = IntentSchema::new("FindRestaurants", "Find a restaurant", &[], &[]);
        let without = build_sequence_pair(
            SequenceKind::Intent,
            SchemaElement::Intent(&intent),
            "request city",
            "Fresno",
            None,
        )
        .unwrap();
        assert_eq!(without.seq1, "findrestaurants : find a restaurant");
        assert_eq!(without.seq2, "request city | fresno");
        let with = build_sequence_pair(
            SequenceKind::Intent,
            SchemaElement::Intent(&intent),
            "request city",
            "Fresno",
            Some("FindRestaurants"),
        )
        .unwrap();
        assert_eq!(with.seq2, "findrestaurants | request city | fresno");
        let none = build_sequence_pair(SequenceKind::Intent, SchemaElement::NoneIntent, "", "hi", None).unwrap();
        assert_eq!(none.seq1, "none : no active intent");
        assert_eq!(none.seq2, "hi");
    }

    #[test]
    fn kind_element_mismatches() {
        let city = SlotSchema::non_categorical("city", "City");
        let price = SlotSchema::categorical("price", "Price", &["cheap"]);
        assert!(matches!(
            build_sequence_pair(SequenceKind::SlotValue, SchemaElement::SlotValue(&city, "x"), "", "u", None),
            Err(BuildError::NotCategorical(_))
        ));
        assert!(matches!(
            build_sequence_pair(SequenceKind::SlotTagging, SchemaElement::Slot(&price), "", "u", None),
            Err(BuildError::Categorical(_))
        ));
        assert!(matches!(
            build_sequence_pair(SequenceKind::Intent, SchemaElement::Slot(&price), "", "u", None),
            Err(BuildError::ElementMismatch { .. })
        ));
        let value = build_sequence_pair(
            SequenceKind::SlotValue,
            SchemaElement::SlotValue(&price, "cheap"),
            "",
            "u",
            None,
        )
        .unwrap();
        assert_eq!(value.seq1, "price : cheap");
    }

    fn state(pairs: &[(&str, &[&str])]) -> DialogueState {
        DialogueState::with_values(pairs.iter().map(|(k, v)| (*k, *v)))
    }

    #[test]
    fn diff_adds_new_slot() {
        let prev = state(&[("city", &["SF"])]);
        let cur = state(&[("city", &["SF"]), ("time", &["7 pm"])]);
        let label = diff_states(&prev, &cur, &[]);
        assert_eq!(
            label.slot_labels,
            BTreeMap::from([("time".to_string(), SlotLabel::Active(vec!["7 pm".into()]))])
        );
    }

    #[test]
    fn diff_of_equal_states_is_empty() {
        let s = state(&[("city", &["SF"])]);
        assert!(diff_states(&s, &s, &[]).slot_labels.is_empty());
    }

    #[test]
    fn diff_changed_and_dontcare() {
        let prev = state(&[("city", &["SF"])]);
        let cur = state(&[("city", &["LA"]), ("pets", &["dontcare"])]);
        let spans = vec![
            Span { slot: "city".into(), start: 0, end: 2, value: "LA".into() },
            Span { slot: "pets".into(), start: 3, end: 5, value: "no".into() },
        ];
        let label = diff_states(&prev, &cur, &spans);
        assert_eq!(label.slot("city"), SlotLabel::Active(vec!["LA".into()]));
        assert_eq!(label.slot("pets"), SlotLabel::Dontcare);
        assert_eq!(label.spans.len(), 1);
        assert_eq!(label.spans[0].slot, "city");
    }

    #[test]
    fn degenerate_masks() {
        let zero = DropoutConfig::new(0.0, 3).unwrap();
        assert!(bernoulli_mask(&zero, 500).iter().all(|d| !d));
        let one = DropoutConfig::new(1.0, 3).unwrap();
        assert!(bernoulli_mask(&one, 500).iter().all(|d| *d));
        assert!(bernoulli_mask(&one, 0).is_empty());
        assert!(DropoutConfig::new(1.5, 0).is_err());
    }

    #[test]
    fn mask_concentrates_near_rate() {
        let cfg = DropoutConfig::new(0.9, 42).unwrap();
        let mask = bernoulli_mask(&cfg, 10_000);
        let frac = mask.iter().filter(|d| **d).count() as f64 / 10_000.0;
        assert!((frac - 0.9).abs() <= 0.01, "drop fraction {frac}");
        assert_eq!(mask, bernoulli_mask(&cfg, 10_000));
    }
}
