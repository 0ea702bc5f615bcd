//! Intent accuracy, requested-slot F1, average and joint goal accuracy, with
//! a seen/unseen breakdown.
//!
//! Metrics are sums of per-frame (or per-instance) scores divided by counts,
//! computed in any [`Probability`] scalar. With [`crate::Exact`] the
//! results are exact fractions.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use crate::scalar::Probability;
use crate::sgd_data::{DataError, Dialogue, DialoguePredictions, DialogueState, Seen, Speaker};
use crate::text::normalize_value;

/// One user frame with its gold and predicted state.
#[derive(Debug, Clone, Copy)]
pub struct AlignedFrame<'a> {
    pub gold: &'a DialogueState,
    pub pred: &'a DialogueState,
}

fn values_match(pred: Option<&Vec<String>>, gold: &[String]) -> bool {
    let Some(pred) = pred else { return false };
    let gold: BTreeSet<String> = gold.iter().map(|v| normalize_value(v)).collect();
    pred.iter().any(|p| gold.contains(&normalize_value(p)))
}

fn f1<P: Probability>(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> P {
    if pred.is_empty() && gold.is_empty() {
        return P::one();
    }
    let hit = pred.intersection(gold).count();
    // 2PR/(P+R) reduces to 2|hit|/(|pred|+|gold|)
    P::from_count(2 * hit) / P::from_count(pred.len() + gold.len())
}

fn ratio<P: Probability>(sum: P, count: usize) -> P {
    if count == 0 {
        P::one()
    } else {
        sum / P::from_count(count)
    }
}

/// Running sums for one bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tally<P> {
    pub frames: usize,
    pub intent_correct: usize,
    pub requested_f1_sum: P,
    pub slot_instances: usize,
    pub slots_correct: usize,
    pub joint_correct: usize,
}

impl<P: Probability> Default for Tally<P> {
    fn default() -> Self {
        Tally {
            frames: 0,
            intent_correct: 0,
            requested_f1_sum: P::zero(),
            slot_instances: 0,
            slots_correct: 0,
            joint_correct: 0,
        }
    }
}

impl<P: Probability> Tally<P> {
    pub fn add(&mut self, frame: AlignedFrame<'_>) {
        let AlignedFrame { gold, pred } = frame;
        self.frames += 1;
        if pred.active_intent == gold.active_intent {
            self.intent_correct += 1;
        }
        self.requested_f1_sum = self.requested_f1_sum + f1(&pred.requested_slots, &gold.requested_slots);
        let mut all = true;
        for (slot, values) in &gold.slot_values {
            self.slot_instances += 1;
            if values_match(pred.slot_values.get(slot), values) {
                self.slots_correct += 1;
            } else {
                all = false;
            }
        }
        let same_slots = pred.slot_values.keys().eq(gold.slot_values.keys());
        if all && same_slots {
            self.joint_correct += 1;
        }
    }

    pub fn merge(&mut self, other: &Tally<P>) {
        self.frames += other.frames;
        self.intent_correct += other.intent_correct;
        self.requested_f1_sum = self.requested_f1_sum + other.requested_f1_sum;
        self.slot_instances += other.slot_instances;
        self.slots_correct += other.slots_correct;
        self.joint_correct += other.joint_correct;
    }

    pub fn metrics(&self) -> Metrics<P> {
        Metrics {
            intent_accuracy: ratio(P::from_count(self.intent_correct), self.frames),
            requested_slots_f1: ratio(self.requested_f1_sum, self.frames),
            average_goal_accuracy: ratio(P::from_count(self.slots_correct), self.slot_instances),
            joint_goal_accuracy: ratio(P::from_count(self.joint_correct), self.frames),
            frames: self.frames,
            slot_instances: self.slot_instances,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<P> {
    pub intent_accuracy: P,
    pub requested_slots_f1: P,
    pub average_goal_accuracy: P,
    pub joint_goal_accuracy: P,
    pub frames: usize,
    pub slot_instances: usize,
}

fn tally<P: Probability>(frames: &[AlignedFrame<'_>]) -> Metrics<P> {
    let mut t = Tally::default();
    for f in frames {
        t.add(*f);
    }
    t.metrics()
}

pub fn intent_accuracy<P: Probability>(frames: &[AlignedFrame<'_>]) -> P {
    tally::<P>(frames).intent_accuracy
}

pub fn requested_slots_f1<P: Probability>(frames: &[AlignedFrame<'_>]) -> P {
    tally::<P>(frames).requested_slots_f1
}

pub fn average_goal_accuracy<P: Probability>(frames: &[AlignedFrame<'_>]) -> P {
    tally::<P>(frames).average_goal_accuracy
}

pub fn joint_goal_accuracy<P: Probability>(frames: &[AlignedFrame<'_>]) -> P {
    tally::<P>(frames).joint_goal_accuracy
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<P> {
    pub all: Metrics<P>,
    pub seen: Metrics<P>,
    pub unseen: Metrics<P>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("service '{0}' is missing from the seen/unseen partition")]
    Unpartitioned(String),
    #[error("dialogue '{0}' has predictions but no gold dialogue")]
    UnknownDialogue(String),
    #[error("dialogue '{dialogue_id}' turn {turn} service '{service}': prediction for a frame absent from gold")]
    ExtraPrediction {
        dialogue_id: String,
        turn: usize,
        service: String,
    },
}

/// Scores predictions against every gold user frame carrying a state.
pub fn evaluate<P: Probability>(
    gold: &[Dialogue],
    predictions: &[DialoguePredictions],
    partition: &BTreeMap<String, Seen>,
) -> Result<EvalReport<P>, EvalError> {
    let by_id: BTreeMap<&str, &DialoguePredictions> =
        predictions.iter().map(|p| (p.dialogue_id.as_str(), p)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|d| d.dialogue_id.as_str()).collect();
    if let Some(extra) = by_id.keys().find(|id| !gold_ids.contains(*id)) {
        return Err(EvalError::UnknownDialogue(extra.to_string()));
    }
    let mut seen = Tally::default();
    let mut unseen = Tally::default();
    for dialogue in gold {
        let preds = by_id.get(dialogue.dialogue_id.as_str());
        let mut used = 0;
        for (t, turn) in dialogue.turns.iter().enumerate() {
            if turn.speaker != Speaker::User {
                continue;
            }
            for frame in &turn.frames {
                let Some(gold_state) = &frame.state else { continue };
                let pred = preds
                    .and_then(|p| p.states.get(&(t, frame.service.clone())))
                    .ok_or_else(|| DataError::MissingPrediction {
                        dialogue_id: dialogue.dialogue_id.clone(),
                        turn: t,
                        service: frame.service.clone(),
                    })?;
                used += 1;
                let bucket = match partition.get(&frame.service) {
                    Some(Seen::Seen) => &mut seen,
                    Some(Seen::Unseen) => &mut unseen,
                    None => return Err(EvalError::Unpartitioned(frame.service.clone())),
                };
                bucket.add(AlignedFrame { gold: gold_state, pred });
            }
        }
        if let Some(p) = preds.filter(|p| p.states.len() != used) {
            let (turn, service) = p
                .states
                .keys()
                .find(|(t, s)| {
                    dialogue.turns.get(*t).is_none_or(|turn| {
                        turn.speaker != Speaker::User
                            || !turn.frames.iter().any(|f| &f.service == s && f.state.is_some())
                    })
                })
                .cloned()
                .unwrap_or_default();
            return Err(EvalError::ExtraPrediction {
                dialogue_id: dialogue.dialogue_id.clone(),
                turn,
                service,
            });
        }
    }
    let mut all = seen;
    all.merge(&unseen);
    Ok(EvalReport {
        all: all.metrics(),
        seen: seen.metrics(),
        unseen: unseen.metrics(),
    })
}

const METRIC_NAMES: [&str; 4] = [
    "intent_accuracy",
    "requested_slots_f1",
    "average_goal_accuracy",
    "joint_goal_accuracy",
];

fn values<P: Probability>(m: &Metrics<P>) -> [f64; 4] {
    [
        m.intent_accuracy.to_f64_lossy(),
        m.requested_slots_f1.to_f64_lossy(),
        m.average_goal_accuracy.to_f64_lossy(),
        m.joint_goal_accuracy.to_f64_lossy(),
    ]
}

impl<P: Probability> EvalReport<P> {
    fn buckets(&self) -> [(&'static str, &Metrics<P>); 3] {
        [("all", &self.all), ("seen", &self.seen), ("unseen", &self.unseen)]
    }

    pub fn to_json(&self) -> Value {
        let mut out = serde_json::Map::new();
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let mut per = serde_json::Map::new();
            for (bucket, m) in self.buckets() {
                per.insert(bucket.to_string(), json!(values(m)[i]));
            }
            out.insert(name.to_string(), Value::Object(per));
        }
        let mut counts = serde_json::Map::new();
        for (bucket, m) in self.buckets() {
            counts.insert(
                bucket.to_string(),
                json!({"frames": m.frames, "slot_instances": m.slot_instances}),
            );
        }
        out.insert("counts".into(), Value::Object(counts));
        Value::Object(out)
    }

    /// One row per metric, `all (seen/unseen)` per cell.
    pub fn to_table(&self) -> String {
        let header = ["metric", "all", "seen", "unseen"];
        let mut rows: Vec<[String; 4]> = vec![header.map(str::to_string)];
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            rows.push([
                name.to_string(),
                format!("{:.4}", values(&self.all)[i]),
                format!("{:.4}", values(&self.seen)[i]),
                format!("{:.4}", values(&self.unseen)[i]),
            ]);
        }
        rows.push([
            "frames".into(),
            self.all.frames.to_string(),
            self.seen.frames.to_string(),
            self.unseen.frames.to_string(),
        ]);
        let widths: Vec<usize> = (0..4)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
