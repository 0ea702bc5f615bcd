//! Value retrieval from earlier system actions.
//!
//! When a slot is judged active but no value is found in the current user
//! utterance, its value is looked up in the slot mentions of previous system
//! turns, most recent first.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::carryover::QualifiedSlot;
use crate::sgd_data::{Speaker, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalDepth {
    Off,
    /// Only the system turn directly before the current user turn.
    PsuOnly,
    FullHistory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub turn: usize,
    pub service: String,
    pub slot: String,
    pub values: Vec<String>,
}

/// Slot mentions carrying values, in dialogue order.
#[derive(Debug, Clone, Default)]
pub struct ActionHistory {
    entries: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieved {
    pub values: Vec<String>,
    pub turn: usize,
    pub source: QualifiedSlot,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Mention] {
        &self.entries
    }

    /// Appends one entry per valued action of a system turn. User turns and
    /// turns older than the last recorded one are ignored.
    pub fn record_turn(&mut self, turn_index: usize, turn: &Turn) {
        if turn.speaker != Speaker::System {
            return;
        }
        if self.entries.last().is_some_and(|m| m.turn > turn_index) {
            log::warn!("ignoring out-of-order system turn {turn_index}");
            return;
        }
        for frame in &turn.frames {
            for action in &frame.actions {
                let Some(slot) = &action.slot else { continue };
                if action.values.is_empty() {
                    continue;
                }
                self.entries.push(Mention {
                    turn: turn_index,
                    service: frame.service.clone(),
                    slot: slot.clone(),
                    values: action.values.clone(),
                });
            }
        }
    }

    fn scan<'a>(
        &'a self,
        current_turn: usize,
        hit: impl Fn(&Mention) -> bool + 'a,
    ) -> impl Iterator<Item = &'a Mention> + 'a {
        // reversed order makes the last action of a turn win
        self.entries
            .iter()
            .rev()
            .filter(move |m| m.turn < current_turn)
            .filter(move |m| hit(m))
    }

    /// Most recent mention of `service.slot` before `current_turn`.
    pub fn retrieve_value(
        &self,
        service: &str,
        slot: &str,
        current_turn: usize,
        depth: RetrievalDepth,
    ) -> Option<Retrieved> {
        let found = match depth {
            RetrievalDepth::Off => return None,
            RetrievalDepth::FullHistory => self
                .scan(current_turn, |m| m.service == service && m.slot == slot)
                .next(),
            RetrievalDepth::PsuOnly => {
                let psu = current_turn.checked_sub(1)?;
                self.scan(current_turn, |m| m.service == service && m.slot == slot)
                    .find(|m| m.turn == psu)
            }
        }?;
        Some(Retrieved {
            values: found.values.clone(),
            turn: found.turn,
            source: QualifiedSlot::new(&found.service, &found.slot),
        })
    }

    /// Most recent mention of any candidate slot before `current_turn`.
    pub fn retrieve_carryover(
        &self,
        candidates: &BTreeSet<QualifiedSlot>,
        current_turn: usize,
    ) -> Option<Retrieved> {
        if candidates.is_empty() {
            return None;
        }
        let found = self
            .scan(current_turn, |m| {
                candidates
                    .iter()
                    .any(|c| c.service == m.service && c.slot == m.slot)
            })
            .next()?;
        Some(Retrieved {
            values: found.values.clone(),
            turn: found.turn,
            source: QualifiedSlot::new(&found.service, &found.slot),
        })
    }
}
