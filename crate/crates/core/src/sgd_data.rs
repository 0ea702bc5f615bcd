//! Service schemas, dialogues and prediction files in the DSTC8 schema-guided
//! release layout (`schema.json`, `dialogues_NNN.json`).
//!
//! Parsing validates every structural invariant and reports the offending
//! service, slot, dialogue or turn. Fields the engine does not interpret are
//! carried in `extra` maps so they survive a parse/serialize cycle.
//!
//! Character offsets in spans are code-point offsets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Intent name used when no intent is active.
pub const NONE_INTENT: &str = "NONE";

/// Literal value assigned to a slot the user does not care about.
pub const DONTCARE: &str = "dontcare";

type Extra = Map<String, Value>;

/// Where in a file a validation failure was found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Location {
    pub service: Option<String>,
    pub slot: Option<String>,
    pub intent: Option<String>,
    pub dialogue_id: Option<String>,
    pub turn: Option<usize>,
    pub frame: Option<usize>,
}

impl Location {
    pub fn service(name: &str) -> Self {
        Location {
            service: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn dialogue(id: &str) -> Self {
        Location {
            dialogue_id: Some(id.to_string()),
            ..Default::default()
        }
    }

    fn with_slot(mut self, slot: &str) -> Self {
        self.slot = Some(slot.to_string());
        self
    }

    fn with_intent(mut self, intent: &str) -> Self {
        self.intent = Some(intent.to_string());
        self
    }

    fn with_turn(mut self, turn: usize) -> Self {
        self.turn = Some(turn);
        self
    }

    fn with_frame(mut self, frame: usize, service: &str) -> Self {
        self.frame = Some(frame);
        self.service = Some(service.to_string());
        self
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(d) = &self.dialogue_id {
            parts.push(format!("dialogue '{d}'"));
        }
        if let Some(t) = self.turn {
            parts.push(format!("turn {t}"));
        }
        if let Some(fr) = self.frame {
            parts.push(format!("frame {fr}"));
        }
        if let Some(s) = &self.service {
            parts.push(format!("service '{s}'"));
        }
        if let Some(i) = &self.intent {
            parts.push(format!("intent '{i}'"));
        }
        if let Some(s) = &self.slot {
            parts.push(format!("slot '{s}'"));
        }
        if parts.is_empty() {
            f.write_str("<root>")
        } else {
            f.write_str(&parts.join(", "))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{location}: {message}")]
    Invalid { location: Box<Location>, message: String },
    #[error("dialogue '{dialogue_id}' turn {turn} service '{service}': no predicted state for user frame")]
    MissingPrediction {
        dialogue_id: String,
        turn: usize,
        service: String,
    },
}

impl DataError {
    pub(crate) fn invalid(location: Location, message: impl Into<String>) -> Self {
        DataError::Invalid {
            location: Box::new(location),
            message: message.into(),
        }
    }

    pub fn location(&self) -> Option<&Location> {
        match self {
            DataError::Invalid { location, .. } => Some(location),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub is_categorical: bool,
    #[serde(default)]
    pub possible_values: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl SlotSchema {
    pub fn categorical(name: &str, description: &str, values: &[&str]) -> Self {
        SlotSchema {
            name: name.to_string(),
            description: description.to_string(),
            is_categorical: true,
            possible_values: values.iter().map(|v| v.to_string()).collect(),
            extra: Extra::new(),
        }
    }

    pub fn non_categorical(name: &str, description: &str) -> Self {
        SlotSchema {
            name: name.to_string(),
            description: description.to_string(),
            is_categorical: false,
            possible_values: Vec::new(),
            extra: Extra::new(),
        }
    }

    /// Case-insensitive lookup of a possible value, returning the schema spelling.
    pub fn canonical_value(&self, value: &str) -> Option<&str> {
        self.possible_values
            .iter()
            .find(|v| v.to_lowercase() == value.to_lowercase())
            .map(String::as_str)
    }
}

/// Optional slots are a plain list in the documented format and a
/// slot-to-default map in the released data; both are accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionalSlots {
    List(Vec<String>),
    Defaults(Map<String, Value>),
}

impl Default for OptionalSlots {
    fn default() -> Self {
        OptionalSlots::List(Vec::new())
    }
}

impl OptionalSlots {
    pub fn names(&self) -> Vec<&str> {
        match self {
            OptionalSlots::List(v) => v.iter().map(String::as_str).collect(),
            OptionalSlots::Defaults(m) => m.keys().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSchema {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub required_slots: Vec<String>,
    #[serde(default)]
    pub optional_slots: OptionalSlots,
    #[serde(flatten)]
    pub extra: Extra,
}

impl IntentSchema {
    pub fn new(name: &str, description: &str, required: &[&str], optional: &[&str]) -> Self {
        IntentSchema {
            name: name.to_string(),
            description: description.to_string(),
            required_slots: required.iter().map(|s| s.to_string()).collect(),
            optional_slots: OptionalSlots::List(optional.iter().map(|s| s.to_string()).collect()),
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSchema {
    pub service_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub intents: Vec<IntentSchema>,
    #[serde(default)]
    pub slots: Vec<SlotSchema>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ServiceSchema {
    pub fn slot(&self, name: &str) -> Option<&SlotSchema> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn intent(&self, name: &str) -> Option<&IntentSchema> {
        self.intents.iter().find(|i| i.name == name)
    }

    pub fn has_intent(&self, name: &str) -> bool {
        name == NONE_INTENT || self.intent(name).is_some()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let loc = Location::service(&self.service_name);
        let mut slot_names = HashSet::new();
        for slot in &self.slots {
            let sloc = loc.clone().with_slot(&slot.name);
            if !slot_names.insert(slot.name.as_str()) {
                return Err(DataError::invalid(sloc, "duplicate slot name"));
            }
            if slot.is_categorical && slot.possible_values.is_empty() {
                return Err(DataError::invalid(
                    sloc,
                    "categorical slot has empty possible_values",
                ));
            }
            if !slot.is_categorical && !slot.possible_values.is_empty() {
                return Err(DataError::invalid(
                    sloc,
                    "non-categorical slot lists possible_values",
                ));
            }
        }
        let mut intent_names = HashSet::new();
        for intent in &self.intents {
            let iloc = loc.clone().with_intent(&intent.name);
            if intent.name == NONE_INTENT {
                return Err(DataError::invalid(iloc, "intent name is reserved"));
            }
            if !intent_names.insert(intent.name.as_str()) {
                return Err(DataError::invalid(iloc, "duplicate intent name"));
            }
            let optional = intent.optional_slots.names();
            for name in intent.required_slots.iter().map(String::as_str).chain(optional.iter().copied()) {
                if !slot_names.contains(name) {
                    return Err(DataError::invalid(
                        iloc.clone().with_slot(name),
                        "intent references undeclared slot",
                    ));
                }
            }
            if let Some(both) = intent
                .required_slots
                .iter()
                .find(|r| optional.contains(&r.as_str()))
            {
                return Err(DataError::invalid(
                    iloc.with_slot(both),
                    "slot is both required and optional",
                ));
            }
        }
        Ok(())
    }
}

/// Parses a schema file: a JSON array of services.
pub fn parse_schema_file(bytes: &[u8]) -> Result<Vec<ServiceSchema>, DataError> {
    let schemas: Vec<ServiceSchema> = serde_json::from_slice(bytes)?;
    let mut names = HashSet::new();
    for schema in &schemas {
        schema.validate()?;
        if !names.insert(schema.service_name.as_str()) {
            return Err(DataError::invalid(
                Location::service(&schema.service_name),
                "duplicate service name",
            ));
        }
    }
    Ok(schemas)
}

pub fn serialize_schemas(schemas: &[ServiceSchema]) -> Vec<u8> {
    let value = serde_json::to_value(schemas).expect("schemas serialize");
    to_canonical_bytes(value)
}

/// Service lookup by name.
#[derive(Debug, Clone, Default)]
pub struct SchemaSet {
    services: BTreeMap<String, ServiceSchema>,
}

impl SchemaSet {
    pub fn new(schemas: impl IntoIterator<Item = ServiceSchema>) -> Self {
        SchemaSet {
            services: schemas
                .into_iter()
                .map(|s| (s.service_name.clone(), s))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ServiceSchema> {
        self.services.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ServiceSchema> {
        self.services.values()
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Dialogues
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActKind {
    Inform,
    Request,
    Confirm,
    Offer,
    NotifySuccess,
    NotifyFailure,
    InformCount,
    OfferIntent,
    ReqMore,
    Goodbye,
    Other(String),
}

impl ActKind {
    pub fn as_str(&self) -> &str {
        match self {
            ActKind::Inform => "INFORM",
            ActKind::Request => "REQUEST",
            ActKind::Confirm => "CONFIRM",
            ActKind::Offer => "OFFER",
            ActKind::NotifySuccess => "NOTIFY_SUCCESS",
            ActKind::NotifyFailure => "NOTIFY_FAILURE",
            ActKind::InformCount => "INFORM_COUNT",
            ActKind::OfferIntent => "OFFER_INTENT",
            ActKind::ReqMore => "REQ_MORE",
            ActKind::Goodbye => "GOODBYE",
            ActKind::Other(name) => name,
        }
    }
}

impl From<&str> for ActKind {
    fn from(s: &str) -> Self {
        match s {
            "INFORM" => ActKind::Inform,
            "REQUEST" => ActKind::Request,
            "CONFIRM" => ActKind::Confirm,
            "OFFER" => ActKind::Offer,
            "NOTIFY_SUCCESS" => ActKind::NotifySuccess,
            "NOTIFY_FAILURE" => ActKind::NotifyFailure,
            "INFORM_COUNT" => ActKind::InformCount,
            "OFFER_INTENT" => ActKind::OfferIntent,
            "REQ_MORE" => ActKind::ReqMore,
            "GOODBYE" => ActKind::Goodbye,
            other => ActKind::Other(other.to_string()),
        }
    }
}

impl Serialize for ActKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ActKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(ActKind::from(s.as_str()))
    }
}

fn empty_as_none<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let s = Option::<String>::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

fn none_as_empty<S: Serializer>(slot: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(slot.as_deref().unwrap_or(""))
}

/// A dialogue act. System frames carry system acts; user frames in the
/// released data carry user acts, which are preserved but not interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAction {
    pub act: ActKind,
    #[serde(
        default,
        deserialize_with = "empty_as_none",
        serialize_with = "none_as_empty"
    )]
    pub slot: Option<String>,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl SystemAction {
    pub fn new(act: ActKind, slot: Option<&str>, values: &[&str]) -> Self {
        SystemAction {
            act,
            slot: slot.map(str::to_string),
            values: values.iter().map(|v| v.to_string()).collect(),
            extra: Extra::new(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self.act {
            ActKind::Request if self.slot.is_none() => Err("REQUEST without a slot".into()),
            ActKind::Inform | ActKind::Offer | ActKind::Confirm => {
                if self.slot.is_none() {
                    Err(format!("{} without a slot", self.act.as_str()))
                } else if self.values.is_empty() {
                    Err(format!("{} without values", self.act.as_str()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub slot: String,
    pub start: usize,
    #[serde(rename = "exclusive_end")]
    pub end: usize,
    /// Filled from the utterance on load when the file omits it.
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueState {
    pub active_intent: String,
    #[serde(default)]
    pub requested_slots: BTreeSet<String>,
    #[serde(default)]
    pub slot_values: BTreeMap<String, Vec<String>>,
}

impl Default for DialogueState {
    fn default() -> Self {
        DialogueState {
            active_intent: NONE_INTENT.to_string(),
            requested_slots: BTreeSet::new(),
            slot_values: BTreeMap::new(),
        }
    }
}

impl DialogueState {
    pub fn with_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        DialogueState {
            slot_values: pairs
                .into_iter()
                .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub service: String,
    #[serde(default)]
    pub actions: Vec<SystemAction>,
    #[serde(default, rename = "slots")]
    pub spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DialogueState>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Frame {
    pub fn new(service: &str) -> Self {
        Frame {
            service: service.to_string(),
            actions: Vec::new(),
            spans: Vec::new(),
            state: None,
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default)]
    pub frames: Vec<Frame>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Turn {
    pub fn new(speaker: Speaker, utterance: &str, frames: Vec<Frame>) -> Self {
        Turn {
            speaker,
            utterance: utterance.to_string(),
            frames,
            extra: Extra::new(),
        }
    }

    pub fn frame(&self, service: &str) -> Option<&Frame> {
        self.frames.iter().find(|f| f.service == service)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    #[serde(default)]
    pub services: Vec<String>,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(flatten)]
    pub extra: Extra,
}

/// Substring by code-point range, `None` when out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[from..to])
}

impl Dialogue {
    /// Checks the structural invariants and fills span values from the
    /// utterances.
    pub fn validate(&mut self) -> Result<(), DataError> {
        let services: HashSet<&str> = self.services.iter().map(String::as_str).collect();
        for (t, turn) in self.turns.iter_mut().enumerate() {
            let tloc = Location::dialogue(&self.dialogue_id).with_turn(t);
            let expected = if t % 2 == 0 {
                Speaker::User
            } else {
                Speaker::System
            };
            if turn.speaker != expected {
                return Err(DataError::invalid(
                    tloc,
                    format!("expected {expected:?} turn, found {:?}", turn.speaker),
                ));
            }
            let len = turn.utterance.chars().count();
            for (f, frame) in turn.frames.iter_mut().enumerate() {
                let floc = tloc.clone().with_frame(f, &frame.service);
                if !services.contains(frame.service.as_str()) {
                    return Err(DataError::invalid(
                        floc,
                        "frame references a service not declared by the dialogue",
                    ));
                }
                if turn.speaker == Speaker::System && frame.state.is_some() {
                    return Err(DataError::invalid(floc, "system frame carries a state"));
                }
                for action in &frame.actions {
                    action
                        .validate()
                        .map_err(|m| DataError::invalid(floc.clone(), m))?;
                }
                if let Some(state) = &frame.state {
                    if let Some((slot, _)) = state.slot_values.iter().find(|(_, v)| v.is_empty()) {
                        return Err(DataError::invalid(
                            floc.clone().with_slot(slot),
                            "slot has an empty value list",
                        ));
                    }
                }
                for span in &mut frame.spans {
                    let sloc = floc.clone().with_slot(&span.slot);
                    if span.start >= span.end || span.end > len {
                        return Err(DataError::invalid(
                            sloc,
                            format!(
                                "span [{}, {}) outside utterance of {} characters",
                                span.start, span.end, len
                            ),
                        ));
                    }
                    let text = char_slice(&turn.utterance, span.start, span.end)
                        .expect("bounds checked");
                    if span.value.is_empty() {
                        span.value = text.to_string();
                    } else if span.value != text {
                        return Err(DataError::invalid(
                            sloc,
                            format!(
                                "span value '{}' does not match utterance text '{}'",
                                span.value, text
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that every name used by the dialogue exists in `schemas`.
    pub fn validate_against(&self, schemas: &SchemaSet) -> Result<(), DataError> {
        for service in &self.services {
            if schemas.get(service).is_none() {
                return Err(DataError::invalid(
                    Location::dialogue(&self.dialogue_id).with_frame(0, service),
                    "service has no schema",
                ));
            }
        }
        for (t, turn) in self.turns.iter().enumerate() {
            for (f, frame) in turn.frames.iter().enumerate() {
                let loc = Location::dialogue(&self.dialogue_id)
                    .with_turn(t)
                    .with_frame(f, &frame.service);
                let schema = schemas.get(&frame.service).ok_or_else(|| {
                    DataError::invalid(loc.clone(), "service has no schema")
                })?;
                let known = |slot: &str| schema.slot(slot).is_some();
                for span in &frame.spans {
                    if !known(&span.slot) {
                        return Err(DataError::invalid(
                            loc.clone().with_slot(&span.slot),
                            "span names an unknown slot",
                        ));
                    }
                }
                if turn.speaker == Speaker::System {
                    for action in &frame.actions {
                        let checked = matches!(
                            action.act,
                            ActKind::Inform | ActKind::Request | ActKind::Confirm | ActKind::Offer
                        );
                        if let (true, Some(slot)) = (checked, &action.slot) {
                            if !known(slot) {
                                return Err(DataError::invalid(
                                    loc.clone().with_slot(slot),
                                    "action names an unknown slot",
                                ));
                            }
                        }
                    }
                }
                if let Some(state) = &frame.state {
                    if !schema.has_intent(&state.active_intent) {
                        return Err(DataError::invalid(
                            loc.clone().with_intent(&state.active_intent),
                            "unknown active intent",
                        ));
                    }
                    for slot in state.requested_slots.iter().chain(state.slot_values.keys()) {
                        if !known(slot) {
                            return Err(DataError::invalid(
                                loc.clone().with_slot(slot),
                                "state names an unknown slot",
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses a dialogue file: a JSON array of dialogues.
pub fn parse_dialogue_file(bytes: &[u8]) -> Result<Vec<Dialogue>, DataError> {
    let mut dialogues: Vec<Dialogue> = serde_json::from_slice(bytes)?;
    for d in &mut dialogues {
        d.validate()?;
    }
    Ok(dialogues)
}

pub fn serialize_dialogues(dialogues: &[Dialogue]) -> Vec<u8> {
    let value = serde_json::to_value(dialogues).expect("dialogues serialize");
    to_canonical_bytes(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Seen {
    Seen,
    Unseen,
}

/// A service is seen iff its name appears among the training schemas.
pub fn seen_partition(
    train: &[ServiceSchema],
    eval: &[ServiceSchema],
) -> BTreeMap<String, Seen> {
    let train: HashSet<&str> = train.iter().map(|s| s.service_name.as_str()).collect();
    eval.iter()
        .map(|s| {
            let tag = if train.contains(s.service_name.as_str()) {
                Seen::Seen
            } else {
                Seen::Unseen
            };
            (s.service_name.clone(), tag)
        })
        .collect()
}

/// Predicted states for one dialogue, keyed by (turn index, service).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialoguePredictions {
    pub dialogue_id: String,
    pub states: BTreeMap<(usize, String), DialogueState>,
}

/// Writes the dialogues with every user frame's state replaced by its
/// prediction. Keys are sorted and formatting is fixed, so equal inputs give
/// equal bytes.
pub fn serialize_predictions(
    dialogues: &[Dialogue],
    predictions: &[DialoguePredictions],
) -> Result<Vec<u8>, DataError> {
    let by_id: BTreeMap<&str, &DialoguePredictions> = predictions
        .iter()
        .map(|p| (p.dialogue_id.as_str(), p))
        .collect();
    let mut out = Vec::with_capacity(dialogues.len());
    for dialogue in dialogues {
        let mut dialogue = dialogue.clone();
        let preds = by_id.get(dialogue.dialogue_id.as_str());
        for (t, turn) in dialogue.turns.iter_mut().enumerate() {
            if turn.speaker != Speaker::User {
                continue;
            }
            for frame in &mut turn.frames {
                let state = preds
                    .and_then(|p| p.states.get(&(t, frame.service.clone())))
                    .ok_or_else(|| DataError::MissingPrediction {
                        dialogue_id: dialogue.dialogue_id.clone(),
                        turn: t,
                        service: frame.service.clone(),
                    })?;
                frame.state = Some(state.clone());
            }
        }
        out.push(dialogue);
    }
    Ok(serialize_dialogues(&out))
}

/// Extracts the per-frame states of a parsed prediction (or gold) file.
pub fn collect_states(dialogues: &[Dialogue]) -> Vec<DialoguePredictions> {
    dialogues
        .iter()
        .map(|d| {
            let mut states = BTreeMap::new();
            for (t, turn) in d.turns.iter().enumerate() {
                for frame in &turn.frames {
                    if let (Speaker::User, Some(state)) = (turn.speaker, &frame.state) {
                        states.insert((t, frame.service.clone()), state.clone());
                    }
                }
            }
            DialoguePredictions {
                dialogue_id: d.dialogue_id.clone(),
                states,
            }
        })
        .collect()
}

fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Pretty-printed JSON with sorted keys and a trailing newline.
pub fn to_canonical_bytes(value: Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&sort_keys(value)).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"[{
        "service_name": "Restaurants_1",
        "description": "Find and reserve restaurants",
        "slots": [
            {"name": "price_range", "description": "Price range", "is_categorical": true,
             "possible_values": ["cheap", "moderate", "pricey"]},
            {"name": "city", "description": "City to search in", "is_categorical": false,
             "possible_values": []}
        ],
        "intents": [
            {"name": "FindRestaurants", "description": "Find a restaurant",
             "is_transactional": false, "required_slots": ["city"],
             "optional_slots": {"price_range": "dontcare"}, "result_slots": ["city"]}
        ]
    }]"#;

    fn dialogue_json(first_speaker: &str, span_value: &str) -> String {
        format!(
            r#"[{{
            "dialogue_id": "1_00000",
            "services": ["Restaurants_1"],
            "turns": [
                {{"speaker": "{first_speaker}", "utterance": "A table in Fresno please",
                  "frames": [{{"service": "Restaurants_1", "actions": [],
                    "slots": [{{"slot": "city", "start": 11, "exclusive_end": 17, "value": "{span_value}"}}],
                    "state": {{"active_intent": "FindRestaurants", "requested_slots": [],
                               "slot_values": {{"city": ["Fresno"]}}}}}}]}},
                {{"speaker": "SYSTEM", "utterance": "What time?",
                  "frames": [{{"service": "Restaurants_1",
                    "actions": [{{"act": "REQUEST", "slot": "time", "values": []}}],
                    "slots": []}}]}}
            ]
        }}]"#
        )
    }

    #[test]
    fn parses_schema_with_flags_and_extras() {
        let schemas = parse_schema_file(SCHEMA.as_bytes()).unwrap();
        assert_eq!(schemas.len(), 1);
        let svc = &schemas[0];
        let flags: Vec<bool> = svc.slots.iter().map(|s| s.is_categorical).collect();
        assert_eq!(flags, vec![true, false]);
        assert_eq!(svc.slots[0].possible_values.len(), 3);
        assert_eq!(svc.intents[0].optional_slots.names(), vec!["price_range"]);
        assert_eq!(svc.intents[0].extra["is_transactional"], Value::Bool(false));
        // opaque fields survive re-serialization
        let again = parse_schema_file(&serialize_schemas(&schemas)).unwrap();
        assert_eq!(again, schemas);
    }

    #[test]
    fn empty_schema_array() {
        assert!(parse_schema_file(b"[]").unwrap().is_empty());
    }

    #[test]
    fn categorical_without_values_is_located() {
        let bad = SCHEMA.replace(r#"["cheap", "moderate", "pricey"]"#, "[]");
        let err = parse_schema_file(bad.as_bytes()).unwrap_err();
        let loc = err.location().unwrap();
        assert_eq!(loc.service.as_deref(), Some("Restaurants_1"));
        assert_eq!(loc.slot.as_deref(), Some("price_range"));
    }

    #[test]
    fn duplicate_and_dangling_names_rejected() {
        let dup = SCHEMA.replace(r#""name": "city""#, r#""name": "price_range""#);
        assert!(parse_schema_file(dup.as_bytes()).is_err());
        let dangling = SCHEMA.replace(r#""required_slots": ["city"]"#, r#""required_slots": ["town"]"#);
        let err = parse_schema_file(dangling.as_bytes()).unwrap_err();
        assert_eq!(err.location().unwrap().slot.as_deref(), Some("town"));
        let overlap = SCHEMA.replace(
            r#""required_slots": ["city"]"#,
            r#""required_slots": ["city", "price_range"]"#,
        );
        assert!(parse_schema_file(overlap.as_bytes()).is_err());
        assert!(parse_schema_file(b"[{").is_err());
    }

    #[test]
    fn parses_two_turn_dialogue() {
        let dialogues = parse_dialogue_file(dialogue_json("USER", "Fresno").as_bytes()).unwrap();
        let d = &dialogues[0];
        assert_eq!(d.turns.len(), 2);
        let state = d.turns[0].frames[0].state.as_ref().unwrap();
        assert_eq!(state.slot_values["city"], vec!["Fresno".to_string()]);
        assert_eq!(state.active_intent, "FindRestaurants");
        assert_eq!(d.turns[1].frames[0].actions[0].act, ActKind::Request);
        let schemas = SchemaSet::new(parse_schema_file(SCHEMA.as_bytes()).unwrap());
        // "time" is not a slot of the schema
        assert!(d.validate_against(&schemas).is_err());
    }

    #[test]
    fn span_value_mismatch_names_dialogue_and_turn() {
        let err = parse_dialogue_file(dialogue_json("USER", "Fresn").as_bytes()).unwrap_err();
        let loc = err.location().unwrap();
        assert_eq!(loc.dialogue_id.as_deref(), Some("1_00000"));
        assert_eq!(loc.turn, Some(0));
        assert_eq!(loc.slot.as_deref(), Some("city"));
    }

    #[test]
    fn system_first_turn_rejected() {
        let err = parse_dialogue_file(dialogue_json("SYSTEM", "Fresno").as_bytes()).unwrap_err();
        assert_eq!(err.location().unwrap().turn, Some(0));
    }

    #[test]
    fn span_value_filled_when_absent() {
        let json = dialogue_json("USER", "Fresno").replace(r#", "value": "Fresno""#, "");
        let d = parse_dialogue_file(json.as_bytes()).unwrap();
        assert_eq!(d[0].turns[0].frames[0].spans[0].value, "Fresno");
    }

    #[test]
    fn code_point_offsets() {
        assert_eq!(char_slice("café olé", 5, 8), Some("olé"));
        assert_eq!(char_slice("abc", 1, 4), None);
        assert_eq!(char_slice("abc", 3, 3), Some(""));
    }

    #[test]
    fn unknown_acts_are_preserved() {
        let a: SystemAction =
            serde_json::from_str(r#"{"act": "SELECT", "slot": "", "values": []}"#).unwrap();
        assert_eq!(a.act, ActKind::Other("SELECT".into()));
        assert_eq!(a.slot, None);
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["act"], "SELECT");
        assert_eq!(v["slot"], "");
    }

    #[test]
    fn partition_by_membership() {
        let svc = |n: &str| ServiceSchema {
            service_name: n.into(),
            description: String::new(),
            intents: vec![],
            slots: vec![],
            extra: Extra::new(),
        };
        let p = seen_partition(&[svc("A"), svc("B")], &[svc("B"), svc("C")]);
        assert_eq!(p.len(), 2);
        assert_eq!(p["B"], Seen::Seen);
        assert_eq!(p["C"], Seen::Unseen);
        let all_seen = seen_partition(&[svc("A"), svc("B")], &[svc("A")]);
        assert!(all_seen.values().all(|s| *s == Seen::Seen));
        let none_seen = seen_partition(&[svc("A")], &[svc("X"), svc("Y")]);
        assert!(none_seen.values().all(|s| *s == Seen::Unseen));
    }

    #[test]
    fn predictions_round_trip_and_are_stable() {
        let dialogues = parse_dialogue_file(dialogue_json("USER", "Fresno").as_bytes()).unwrap();
        let mut pred = DialogueState::with_values([("city", &["San Jose"][..])]);
        pred.requested_slots.insert("price_range".into());
        let preds = vec![DialoguePredictions {
            dialogue_id: "1_00000".into(),
            states: BTreeMap::from([((0, "Restaurants_1".to_string()), pred.clone())]),
        }];
        let a = serialize_predictions(&dialogues, &preds).unwrap();
        let b = serialize_predictions(&dialogues, &preds).unwrap();
        assert_eq!(a, b);
        let back = collect_states(&parse_dialogue_file(&a).unwrap());
        assert_eq!(back, preds);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let dialogues = parse_dialogue_file(dialogue_json("USER", "Fresno").as_bytes()).unwrap();
        let preds = vec![DialoguePredictions {
            dialogue_id: "1_00000".into(),
            states: BTreeMap::new(),
        }];
        assert!(matches!(
            serialize_predictions(&dialogues, &preds),
            Err(DataError::MissingPrediction { turn: 0, .. })
        ));
    }
}
