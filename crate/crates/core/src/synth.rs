//! Synthetic multi-domain corpus with controlled value locations.
//!
//! Each dialogue is a sequence of one to three segments, one service per
//! segment. Within a segment every non-categorical user value enters the
//! state in the last user turn, and is mentioned either in that utterance
//! (with a span), in the directly preceding system turn, in an older system
//! turn of the same service, or only in an earlier system turn of a
//! different service. Location shares are steered toward the requested
//! fractions by a deficit controller, and the generator counts what it
//! actually placed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::carryover::{normalize_pair, QualifiedSlot, SlotPair};
use crate::sgd_data::{
    ActKind, Dialogue, DialogueState, Frame, IntentSchema, ServiceSchema, SlotSchema,
    Span, Speaker, SystemAction, Turn, DONTCARE,
};

const TEMPLATE_DATA: &str = include_str!("../data/synth_templates.json");

const SEGMENT_WEIGHTS: [f64; 3] = [0.3, 0.4, 0.3];
const OPTIONAL_SLOT_RATE: f64 = 0.5;
const DONTCARE_RATE: f64 = 0.15;
const EARLY_CATEGORICAL_RATE: f64 = 0.5;
const REQUEST_RATE: f64 = 0.3;
const FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_dialogues: usize,
    /// Services to draw from; empty means all shipped services.
    pub services: Vec<String>,
    pub cuu_fraction: f64,
    pub psu_fraction: f64,
    /// Older system turns, including the cross-service share.
    pub older_fraction: f64,
    pub cross_service_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_dialogues: 500,
            services: Vec::new(),
            cuu_fraction: 0.40,
            psu_fraction: 0.50,
            older_fraction: 0.10,
            cross_service_fraction: 0.06,
            seed: 7,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("mention fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("fraction '{0}' outside [0, 1]")]
    FractionRange(&'static str),
    #[error("cross-service fraction {cross} exceeds older-turn fraction {older}")]
    CrossExceedsOlder { cross: f64, older: f64 },
    #[error("unknown service '{0}'")]
    UnknownService(String),
    #[error("template data: {0}")]
    Templates(String),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, f) in [
            ("cuu", self.cuu_fraction),
            ("psu", self.psu_fraction),
            ("older", self.older_fraction),
            ("cross_service", self.cross_service_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(SynthError::FractionRange(name));
            }
        }
        let sum = self.cuu_fraction + self.psu_fraction + self.older_fraction;
        if (sum - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(SynthError::FractionSum(sum));
        }
        if self.cross_service_fraction > self.older_fraction {
            return Err(SynthError::CrossExceedsOlder {
                cross: self.cross_service_fraction,
                older: self.older_fraction,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Cuu,
    Psu,
    OlderSameService,
    CrossService,
}

const PLACEMENTS: [Placement; 4] = [
    Placement::Cuu,
    Placement::Psu,
    Placement::OlderSameService,
    Placement::CrossService,
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub non_categorical: usize,
    pub placements: BTreeMap<Placement, usize>,
    /// Slot pairs linked by a cross-service placement.
    pub planted_pairs: BTreeSet<SlotPair>,
}

impl SynthStats {
    fn count(&self, p: Placement) -> usize {
        self.placements.get(&p).copied().unwrap_or(0)
    }

    fn share(&self, n: usize) -> f64 {
        if self.non_categorical == 0 {
            0.0
        } else {
            n as f64 / self.non_categorical as f64
        }
    }

    pub fn cuu_fraction(&self) -> f64 {
        self.share(self.count(Placement::Cuu))
    }

    pub fn psu_fraction(&self) -> f64 {
        self.share(self.count(Placement::Psu))
    }

    pub fn older_fraction(&self) -> f64 {
        self.share(self.count(Placement::OlderSameService) + self.count(Placement::CrossService))
    }

    pub fn cross_service_fraction(&self) -> f64 {
        self.share(self.count(Placement::CrossService))
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub schemas: Vec<ServiceSchema>,
    pub dialogues: Vec<Dialogue>,
    pub stats: SynthStats,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateSlot {
    name: String,
    description: String,
    #[serde(default)]
    possible_values: Vec<String>,
    #[serde(rename = "type", default)]
    kind: Option<String>,
    #[serde(default)]
    result: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateService {
    service_name: String,
    description: String,
    intents: Vec<IntentSchema>,
    slots: Vec<TemplateSlot>,
}

#[derive(Debug, Clone, Deserialize)]
struct Phrases {
    user_intent: Vec<String>,
    user_inform: Vec<String>,
    user_categorical: Vec<String>,
    user_dontcare: Vec<String>,
    user_accept: Vec<String>,
    user_request: Vec<String>,
    user_filler: Vec<String>,
    system_offer: Vec<String>,
    system_request: Vec<String>,
    system_inform: Vec<String>,
    system_success: Vec<String>,
    system_req_more: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateData {
    services: Vec<TemplateService>,
    pools: BTreeMap<String, Vec<String>>,
    templates: Phrases,
}

impl TemplateService {
    fn schema(&self) -> ServiceSchema {
        ServiceSchema {
            service_name: self.service_name.clone(),
            description: self.description.clone(),
            intents: self.intents.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| {
                    if s.possible_values.is_empty() {
                        SlotSchema::non_categorical(&s.name, &s.description)
                    } else {
                        let values: Vec<&str> = s.possible_values.iter().map(String::as_str).collect();
                        SlotSchema::categorical(&s.name, &s.description, &values)
                    }
                })
                .collect(),
            extra: Default::default(),
        }
    }

    fn slot(&self, name: &str) -> &TemplateSlot {
        self.slots.iter().find(|s| s.name == name).expect("intent slot declared")
    }
}

fn load_templates() -> Result<TemplateData, SynthError> {
    let data: TemplateData =
        serde_json::from_str(TEMPLATE_DATA).map_err(|e| SynthError::Templates(e.to_string()))?;
    for service in &data.services {
        service
            .schema()
            .validate()
            .map_err(|e| SynthError::Templates(e.to_string()))?;
        for slot in &service.slots {
            if slot.possible_values.is_empty() {
                let kind = slot.kind.as_deref().unwrap_or_default();
                if data.pools.get(kind).is_none_or(|p| p.is_empty()) {
                    return Err(SynthError::Templates(format!(
                        "slot {}.{} has no value pool",
                        service.service_name, slot.name
                    )));
                }
            }
        }
    }
    Ok(data)
}

/// Schemas of all shipped synthetic services.
pub fn synth_schemas() -> Vec<ServiceSchema> {
    load_templates()
        .expect("shipped template data is valid")
        .services
        .iter()
        .map(TemplateService::schema)
        .collect()
}

/// Fills `{slot}` and `{value}`, returning the text and the code-point
/// offset of the value.
fn fill(template: &str, slot: &str, value: &str) -> (String, Option<usize>) {
    let with_slot = template.replace("{slot}", slot);
    match with_slot.split_once("{value}") {
        Some((before, after)) => (
            format!("{before}{value}{after}"),
            Some(before.chars().count()),
        ),
        None => (with_slot, None),
    }
}

/// Builds an utterance from pieces, tracking code-point offsets of values.
#[derive(Default)]
struct Utterance {
    text: String,
    spans: Vec<Span>,
}

impl Utterance {
    fn push(&mut self, piece: &str) {
        self.text.push_str(piece);
    }

    fn push_filled(&mut self, template: &str, slot_phrase: &str, value: &str, span_slot: Option<&str>) {
        let (text, offset) = fill(template, slot_phrase, value);
        let base = self.text.chars().count();
        if let (Some(slot), Some(off)) = (span_slot, offset) {
            let start = base + off;
            self.spans.push(Span {
                slot: slot.to_string(),
                start,
                end: start + value.chars().count(),
                value: value.to_string(),
            });
        }
        self.text.push_str(&text);
    }
}

struct Mention {
    service: String,
    slot: String,
    kind: String,
    value: String,
}

struct Controller {
    targets: [f64; 4],
    counts: [usize; 4],
    total: usize,
}

impl Controller {
    fn new(spec: &SynthSpec) -> Self {
        Controller {
            targets: [
                spec.cuu_fraction,
                spec.psu_fraction,
                spec.older_fraction - spec.cross_service_fraction,
                spec.cross_service_fraction,
            ],
            counts: [0; 4],
            total: 0,
        }
    }

    /// The feasible placement furthest behind its target share.
    fn next(&mut self, cross_feasible: bool) -> Placement {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, p) in PLACEMENTS.iter().enumerate() {
            if *p == Placement::CrossService && !cross_feasible {
                continue;
            }
            if self.targets[i] <= 0.0 {
                continue;
            }
            let deficit = self.targets[i] * (self.total + 1) as f64 - self.counts[i] as f64;
            if deficit > best_deficit {
                best = i;
                best_deficit = deficit;
            }
        }
        self.counts[best] += 1;
        self.total += 1;
        PLACEMENTS[best]
    }
}

struct Generator<'a> {
    data: &'a TemplateData,
    rng: ChaCha8Rng,
    controller: Controller,
    stats: SynthStats,
}

fn pick<'b, T>(rng: &mut ChaCha8Rng, items: &'b [T]) -> &'b T {
    items.choose(rng).expect("non-empty template list")
}

struct Planned<'a> {
    slot: &'a TemplateSlot,
    value: String,
    placement: Placement,
}

impl<'a> Generator<'a> {
    fn pick_phrase(&mut self, list: fn(&Phrases) -> &Vec<String>) -> String {
        pick(&mut self.rng, list(&self.data.templates)).clone()
    }

    fn segment_count(&mut self, available: usize) -> usize {
        let x: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut n = SEGMENT_WEIGHTS.len();
        for (i, w) in SEGMENT_WEIGHTS.iter().enumerate() {
            acc += w;
            if x < acc {
                n = i + 1;
                break;
            }
        }
        n.min(available)
    }

    fn dialogue(&mut self, id: String, services: &[&'a TemplateService]) -> Dialogue {
        let n = self.segment_count(services.len());
        let mut chosen: Vec<&TemplateService> = services.to_vec();
        chosen.shuffle(&mut self.rng);
        chosen.truncate(n);
        let mut turns = Vec::new();
        let mut mentions: Vec<Mention> = Vec::new();
        for service in &chosen {
            self.segment(service, &mut turns, &mut mentions);
        }
        Dialogue {
            dialogue_id: id,
            services: chosen.iter().map(|s| s.service_name.clone()).collect(),
            turns,
            extra: Default::default(),
        }
    }

    fn segment(&mut self, service: &'a TemplateService, turns: &mut Vec<Turn>, mentions: &mut Vec<Mention>) {
        let name = service.service_name.as_str();
        let intent = pick(&mut self.rng, &service.intents);
        let mut slot_names: Vec<&str> = intent.required_slots.iter().map(String::as_str).collect();
        for opt in intent.optional_slots.names() {
            if self.rng.gen_bool(OPTIONAL_SLOT_RATE) {
                slot_names.push(opt);
            }
        }
        let optional: BTreeSet<&str> = intent.optional_slots.names().into_iter().collect();

        let mut early_cat: Vec<(&TemplateSlot, String)> = Vec::new();
        let mut late_cat: Vec<(&TemplateSlot, String)> = Vec::new();
        let mut planned: Vec<Planned> = Vec::new();
        let mut used_values: BTreeSet<String> = BTreeSet::new();
        for slot_name in slot_names {
            let slot = service.slot(slot_name);
            if slot.result {
                continue;
            }
            if !slot.possible_values.is_empty() {
                let value = if optional.contains(slot_name) && self.rng.gen_bool(DONTCARE_RATE) {
                    DONTCARE.to_string()
                } else {
                    pick(&mut self.rng, &slot.possible_values).clone()
                };
                if self.rng.gen_bool(EARLY_CATEGORICAL_RATE) {
                    early_cat.push((slot, value));
                } else {
                    late_cat.push((slot, value));
                }
                continue;
            }
            let kind = slot.kind.clone().unwrap_or_default();
            let source = mentions
                .iter()
                .rev()
                .find(|m| m.kind == kind && m.service != name);
            let placement = self.controller.next(source.is_some());
            let value = match (placement, source) {
                (Placement::CrossService, Some(src)) => {
                    self.stats.planted_pairs.insert(normalize_pair(
                        QualifiedSlot::new(&src.service, &src.slot),
                        QualifiedSlot::new(name, &slot.name),
                    ));
                    src.value.clone()
                }
                _ => {
                    let pool = &self.data.pools[&kind];
                    let fresh: Vec<&String> = pool.iter().filter(|v| !used_values.contains(*v)).collect();
                    match fresh.choose(&mut self.rng) {
                        Some(v) => (*v).clone(),
                        None => pick(&mut self.rng, pool).clone(),
                    }
                }
            };
            used_values.insert(value.clone());
            *self.stats.placements.entry(placement).or_default() += 1;
            self.stats.non_categorical += 1;
            planned.push(Planned { slot, value, placement });
        }
        let results: Vec<(&TemplateSlot, String)> = service
            .slots
            .iter()
            .filter(|s| s.result)
            .map(|s| (s, pick(&mut self.rng, &self.data.pools[s.kind.as_deref().unwrap_or_default()]).clone()))
            .collect();

        let mut state = DialogueState {
            active_intent: intent.name.clone(),
            ..Default::default()
        };

        // u0: intent and early categorical values
        let mut u = Utterance::default();
        u.push(&self.pick_phrase(|t| &t.user_intent).replace("{intent}", &intent.description));
        for (slot, value) in &early_cat {
            u.push(" ");
            self.push_categorical(&mut u, slot, value);
            u.push(".");
            state.slot_values.insert(slot.name.clone(), vec![value.clone()]);
        }
        turns.push(user_turn(name, u, state.clone()));

        // s0: older same-service mentions and a request for a slot still to come
        let mut s = SystemTurn::new(name);
        for p in planned.iter().filter(|p| p.placement == Placement::OlderSameService) {
            let t = self.pick_phrase(|t| &t.system_offer);
            s.act(ActKind::Offer, &p.slot.name, Some(&p.value), &t, &p.slot.description);
        }
        if let Some(p) = planned.iter().find(|p| p.placement == Placement::Cuu) {
            let t = self.pick_phrase(|t| &t.system_request);
            s.act(ActKind::Request, &p.slot.name, None, &t, &p.slot.description);
        }
        self.finish_system(s, turns, mentions);

        // u1: a question about a result slot, or filler
        let mut u = Utterance::default();
        let requested = if !results.is_empty() && self.rng.gen_bool(REQUEST_RATE) {
            let (slot, _) = pick(&mut self.rng, &results);
            let t = self.pick_phrase(|t| &t.user_request);
            u.push_filled(&t, &slot.description, "", None);
            Some(*slot)
        } else {
            u.push(&self.pick_phrase(|t| &t.user_filler));
            None
        };
        let mut u1_state = state.clone();
        if let Some(slot) = requested {
            u1_state.requested_slots.insert(slot.name.clone());
        }
        turns.push(user_turn(name, u, u1_state));

        // s1: preceding-turn mentions and the answer to the question
        let mut s = SystemTurn::new(name);
        for p in planned.iter().filter(|p| p.placement == Placement::Psu) {
            let t = self.pick_phrase(|t| &t.system_offer);
            s.act(ActKind::Offer, &p.slot.name, Some(&p.value), &t, &p.slot.description);
        }
        if let Some(slot) = requested {
            let value = &results.iter().find(|(r, _)| r.name == slot.name).expect("result slot").1;
            let t = self.pick_phrase(|t| &t.system_inform);
            s.act(ActKind::Inform, &slot.name, Some(value), &t, &slot.description);
        }
        self.finish_system(s, turns, mentions);

        // u2: accept, current-utterance values, remaining categorical values
        let mut u = Utterance::default();
        u.push(&self.pick_phrase(|t| &t.user_accept));
        let mut first = true;
        for p in planned.iter().filter(|p| p.placement == Placement::Cuu) {
            u.push(if first { ", " } else { " and " });
            first = false;
            let t = self.pick_phrase(|t| &t.user_inform);
            u.push_filled(&t, &p.slot.description, &p.value, Some(&p.slot.name));
        }
        for (slot, value) in &late_cat {
            u.push(if first { ", " } else { " and " });
            first = false;
            self.push_categorical(&mut u, slot, value);
            state.slot_values.insert(slot.name.clone(), vec![value.clone()]);
        }
        u.push(".");
        for p in &planned {
            state.slot_values.insert(p.slot.name.clone(), vec![p.value.clone()]);
        }
        turns.push(user_turn(name, u, state));

        // closing: success notice and result slots
        let mut s = SystemTurn::new(name);
        s.bare(ActKind::NotifySuccess, &self.pick_phrase(|t| &t.system_success));
        for (slot, value) in &results {
            let t = self.pick_phrase(|t| &t.system_inform);
            s.act(ActKind::Inform, &slot.name, Some(value), &t, &slot.description);
        }
        self.finish_system(s, turns, mentions);
    }

    fn push_categorical(&mut self, u: &mut Utterance, slot: &TemplateSlot, value: &str) {
        if value == DONTCARE {
            let t = self.pick_phrase(|t| &t.user_dontcare);
            u.push_filled(&t, &slot.description, "", None);
        } else {
            let t = self.pick_phrase(|t| &t.user_categorical);
            u.push_filled(&t, &slot.description, value, None);
        }
    }

    fn finish_system(&mut self, mut s: SystemTurn, turns: &mut Vec<Turn>, mentions: &mut Vec<Mention>) {
        if s.frame.actions.is_empty() {
            s.bare(ActKind::ReqMore, &self.pick_phrase(|t| &t.system_req_more));
        }
        let service = self.data.services.iter().find(|x| x.service_name == s.frame.service).expect("service");
        for a in &s.frame.actions {
            if let (Some(slot), Some(v)) = (&a.slot, a.values.first()) {
                mentions.push(Mention {
                    service: s.frame.service.clone(),
                    slot: slot.clone(),
                    kind: service.slot(slot).kind.clone().unwrap_or_default(),
                    value: v.clone(),
                });
            }
        }
        turns.push(Turn::new(Speaker::System, &s.text.join(" "), vec![s.frame]));
    }
}

struct SystemTurn {
    frame: Frame,
    text: Vec<String>,
}

impl SystemTurn {
    fn new(service: &str) -> Self {
        SystemTurn {
            frame: Frame::new(service),
            text: Vec::new(),
        }
    }

    fn act(&mut self, kind: ActKind, slot: &str, value: Option<&str>, template: &str, phrase: &str) {
        let values: Vec<&str> = value.into_iter().collect();
        self.frame.actions.push(SystemAction::new(kind, Some(slot), &values));
        self.text.push(fill(template, phrase, value.unwrap_or("")).0);
    }

    fn bare(&mut self, kind: ActKind, text: &str) {
        self.frame.actions.push(SystemAction::new(kind, None, &[]));
        self.text.push(text.to_string());
    }
}

fn user_turn(service: &str, u: Utterance, state: DialogueState) -> Turn {
    let mut frame = Frame::new(service);
    frame.spans = u.spans;
    frame.state = Some(state);
    Turn::new(Speaker::User, &u.text, vec![frame])
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let data = load_templates()?;
    let services: Vec<&TemplateService> = if spec.services.is_empty() {
        data.services.iter().collect()
    } else {
        spec.services
            .iter()
            .map(|n| {
                data.services
                    .iter()
                    .find(|s| &s.service_name == n)
                    .ok_or_else(|| SynthError::UnknownService(n.clone()))
            })
            .collect::<Result<_, _>>()?
    };
    let mut generator = Generator {
        data: &data,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        controller: Controller::new(spec),
        stats: SynthStats::default(),
    };
    let dialogues = (0..spec.n_dialogues)
        .map(|i| generator.dialogue(format!("synth_{i:05}"), &services))
        .collect();
    Ok(SynthCorpus {
        schemas: services.iter().map(|s| s.schema()).collect(),
        dialogues,
        stats: generator.stats,
    })
}
