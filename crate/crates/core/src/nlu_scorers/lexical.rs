//! Deterministic token-overlap baseline. Weak on purpose: it lets the whole
//! pipeline run without a model.

use std::collections::BTreeMap;

use super::{
    IntentCandidate, Scorer, ScorerError, ScoringContext, SpanOutcome, SpanResult,
    StatusDistribution, ValueCandidate, ValueSource,
};
use crate::example_builder::{SequencePair, SCHEMA_SEPARATOR};
use crate::sgd_data::{SlotSchema, NONE_INTENT};
use crate::text::{contains_ignore_case, find_ignore_case, lowercase, token_set, tokens};

/// Token-set Jaccard similarity; 0 when both sides are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a = token_set(a);
    let b = token_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Surface forms per slot, loaded from `slot<TAB>surface` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    entries: BTreeMap<String, Vec<String>>,
}

impl Gazetteer {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (slot, surface) = line
                .split_once('\t')
                .ok_or_else(|| format!("gazetteer line {}: expected slot<TAB>surface", n + 1))?;
            let surface = surface.trim();
            if slot.is_empty() || surface.is_empty() {
                return Err(format!("gazetteer line {}: empty field", n + 1));
            }
            entries.entry(slot.to_string()).or_default().push(surface.to_string());
        }
        Ok(Gazetteer { entries })
    }

    pub fn surfaces(&self, slot: &str) -> &[String] {
        self.entries.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }
}

const DONTCARE_CUES: [&str; 2] = ["dontcare", "don't care"];
const REQUEST_CUES: [&str; 6] = ["what", "which", "where", "when", "how", "whats"];

const STATUS_DONTCARE: (f64, f64, f64) = (0.05, 0.90, 0.05);
const STATUS_ACTIVE: (f64, f64, f64) = (0.10, 0.00, 0.90);
const STATUS_NONE: (f64, f64, f64) = (0.90, 0.05, 0.05);

/// Probability of the top outcome of the span tagger.
pub const LEXICAL_SPAN_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, Default)]
pub struct LexicalScorer {
    gazetteer: Option<Gazetteer>,
}

impl LexicalScorer {
    pub fn new() -> Self {
        LexicalScorer::default()
    }

    pub fn with_gazetteer(gazetteer: Gazetteer) -> Self {
        LexicalScorer {
            gazetteer: Some(gazetteer),
        }
    }

    fn surfaces(&self, slot: &str) -> &[String] {
        self.gazetteer.as_ref().map(|g| g.surfaces(slot)).unwrap_or(&[])
    }

    fn slot_tokens(slot: &SlotSchema) -> Vec<String> {
        slot.name
            .split('_')
            .filter(|t| t.len() > 2)
            .map(lowercase)
            .collect()
    }
}

fn context(ctx: &ScoringContext<'_>) -> String {
    format!("{} {}", ctx.psu, ctx.cuu)
}

fn schema_detail(seq1: &str) -> &str {
    seq1.split_once(SCHEMA_SEPARATOR).map(|(_, d)| d).unwrap_or(seq1)
}

fn triple((n, d, a): (f64, f64, f64)) -> StatusDistribution {
    StatusDistribution::new(n, d, a).expect("constant distribution is valid")
}

impl Scorer for LexicalScorer {
    fn score_intents(
        &self,
        _ctx: &ScoringContext<'_>,
        candidates: &[IntentCandidate],
    ) -> Result<Vec<f64>, ScorerError> {
        let real: Vec<Option<f64>> = candidates
            .iter()
            .map(|c| {
                (c.name != NONE_INTENT).then(|| jaccard(schema_detail(&c.pair.seq1), &c.pair.seq2))
            })
            .collect();
        let best = real.iter().flatten().fold(0.0_f64, |m, s| m.max(*s));
        Ok(real.into_iter().map(|s| s.unwrap_or(1.0 - best)).collect())
    }

    fn score_requested(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pair: &SequencePair,
    ) -> Result<f64, ScorerError> {
        let words = tokens(ctx.cuu);
        let cue = ctx.cuu.contains('?') || words.iter().any(|w| REQUEST_CUES.contains(&w.as_str()));
        let mentions = Self::slot_tokens(slot).iter().any(|t| words.contains(t));
        Ok(if cue && mentions { 0.9 } else { 0.1 })
    }

    fn score_status(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pair: &SequencePair,
    ) -> Result<StatusDistribution, ScorerError> {
        let cuu = lowercase(ctx.cuu);
        let words = tokens(ctx.cuu);
        let dontcare = DONTCARE_CUES.iter().any(|c| cuu.contains(c))
            && Self::slot_tokens(slot).iter().any(|t| words.contains(t));
        if dontcare {
            return Ok(triple(STATUS_DONTCARE));
        }
        let context = context(ctx);
        let mentioned = if slot.is_categorical {
            slot.possible_values.iter().any(|v| contains_ignore_case(&context, v))
        } else {
            self.surfaces(&slot.name).iter().any(|s| contains_ignore_case(&context, s))
        };
        Ok(triple(if mentioned { STATUS_ACTIVE } else { STATUS_NONE }))
    }

    fn score_values(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        _pairs: &[SequencePair],
    ) -> Result<Vec<ValueCandidate>, ScorerError> {
        let context = context(ctx);
        Ok(slot
            .possible_values
            .iter()
            .map(|v| {
                let p = if contains_ignore_case(&context, v) { 1.0 } else { 0.0 };
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
        let hit = self
            .surfaces(&slot.name)
            .iter()
            .find_map(|s| find_ignore_case(ctx.cuu, s));
        Ok(match hit {
            Some((start, end)) => SpanResult {
                n_best: vec![
                    (SpanOutcome::Span { start, end }, LEXICAL_SPAN_CONFIDENCE),
                    (SpanOutcome::NoSpan, 1.0 - LEXICAL_SPAN_CONFIDENCE),
                ],
            },
            None => SpanResult::no_span(LEXICAL_SPAN_CONFIDENCE),
        })
    }
}
