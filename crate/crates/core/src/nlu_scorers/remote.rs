//! HTTP client for an external scoring service.
//!
//! Every scorer call is one `POST {endpoint}/score` whose body is a JSON array
//! of [`ScoreRequest`]s; the service answers with an array of responses in the
//! same order. Intent and value calls send one request per candidate, each
//! naming its candidate in `candidates`, and each response maps the candidate
//! to its score.
//!
//! | kind           | response                                              |
//! |----------------|-------------------------------------------------------|
//! | `INTENT`       | `{"<candidate>": score}`                              |
//! | `SLOT_REQUEST` | `{"probability": p}`                                  |
//! | `SLOT_STATUS`  | `{"p_none": p, "p_dontcare": p, "p_active": p}`       |
//! | `SLOT_VALUE`   | `{"<value>": p}`                                      |
//! | `SLOT_TAGGING` | `{"n_best": [{"start": s, "end": e, "probability": p}]}`, no span as `-1/-1` |

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    IntentCandidate, Scorer, ScorerError, ScoringContext, SpanOutcome, SpanResult,
    StatusDistribution, ValueCandidate, ValueSource, STATUS_SUM_TOLERANCE,
};
use crate::example_builder::{SequenceKind, SequencePair};
use crate::sgd_data::SlotSchema;

/// Status distributions off by at most this much are renormalized.
pub const REMOTE_SUM_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: SequenceKind,
    pub seq1: String,
    pub seq2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
}

impl ScoreRequest {
    fn new(pair: &SequencePair, candidate: Option<&str>) -> Self {
        ScoreRequest {
            kind: pair.kind,
            seq1: pair.seq1.clone(),
            seq2: pair.seq2.clone(),
            candidates: candidate.map(|c| vec![c.to_string()]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub retries: u32,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: &str) -> Self {
        RemoteConfig {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            retries: 2,
            timeout: Duration::from_secs(30),
            max_in_flight: DEFAULT_IN_FLIGHT,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.released.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.released.notify_one();
    }
}

pub struct RemoteScorer {
    config: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
}

enum Failure {
    Retryable(String),
    Fatal(ScorerError),
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits {
            free: Mutex::new(config.max_in_flight.max(1)),
            released: Condvar::new(),
        };
        RemoteScorer {
            config,
            agent,
            permits,
        }
    }

    fn attempt(&self, body: &[ScoreRequest]) -> Result<Vec<Value>, Failure> {
        let _permit = self.permits.acquire();
        let url = format!("{}/score", self.config.endpoint);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status != 200 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(ScorerError::protocol(
                "status",
                format!("HTTP {status}: {text}"),
            )));
        }
        let values: Vec<Value> = response
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(ScorerError::protocol("body", e.to_string())))?;
        if values.len() != body.len() {
            return Err(Failure::Fatal(ScorerError::protocol(
                "body",
                format!("{} responses for {} requests", values.len(), body.len()),
            )));
        }
        Ok(values)
    }

    fn call(&self, ctx: &ScoringContext<'_>, body: Vec<ScoreRequest>) -> Result<Vec<Value>, ScorerError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Ok(values) => return Ok(values),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    log::debug!("scoring attempt {n}/{attempts} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(ScorerError::Transport {
            dialogue_id: ctx.dialogue_id.to_string(),
            turn: ctx.turn_index,
            attempts,
            message: last,
        })
    }
}

fn probability(value: &Value, field: &str) -> Result<f64, ScorerError> {
    let p = value
        .as_f64()
        .ok_or_else(|| ScorerError::protocol(field, "missing or not a number"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(ScorerError::protocol(field, format!("{p} outside [0, 1]")));
    }
    Ok(p)
}

fn candidate_score(response: &Value, index: usize, candidate: &str) -> Result<f64, ScorerError> {
    let field = format!("response[{index}].{candidate}");
    probability(response.get(candidate).unwrap_or(&Value::Null), &field)
}

pub(crate) fn decode_status(response: &Value) -> Result<StatusDistribution, ScorerError> {
    let get = |f: &str| probability(response.get(f).unwrap_or(&Value::Null), f);
    let (n, d, a) = (get("p_none")?, get("p_dontcare")?, get("p_active")?);
    let sum = n + d + a;
    if (sum - 1.0).abs() > REMOTE_SUM_TOLERANCE {
        return Err(ScorerError::protocol(
            "p_none+p_dontcare+p_active",
            format!("sums to {sum}"),
        ));
    }
    let dist = StatusDistribution {
        p_none: n / sum,
        p_dontcare: d / sum,
        p_active: a / sum,
    };
    dist.check(STATUS_SUM_TOLERANCE)?;
    Ok(dist)
}

pub(crate) fn decode_span(response: &Value, utterance_len: usize) -> Result<SpanResult, ScorerError> {
    let items = response
        .get("n_best")
        .and_then(Value::as_array)
        .ok_or_else(|| ScorerError::protocol("n_best", "missing or not an array"))?;
    let mut n_best = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let int = |f: &str| {
            item.get(f)
                .and_then(Value::as_i64)
                .ok_or_else(|| ScorerError::protocol(format!("n_best[{i}].{f}"), "missing or not an integer"))
        };
        let (start, end) = (int("start")?, int("end")?);
        let p = probability(
            item.get("probability").unwrap_or(&Value::Null),
            &format!("n_best[{i}].probability"),
        )?;
        let outcome = match (start, end) {
            (-1, -1) => SpanOutcome::NoSpan,
            (s, e) if s >= 0 && e >= 0 => SpanOutcome::Span {
                start: s as usize,
                end: e as usize,
            },
            _ => {
                return Err(ScorerError::protocol(
                    format!("n_best[{i}]"),
                    "negative offsets other than -1/-1",
                ))
            }
        };
        n_best.push((outcome, p));
    }
    let result = SpanResult { n_best };
    result.check(utterance_len)?;
    Ok(result)
}

impl Scorer for RemoteScorer {
    fn score_intents(
        &self,
        ctx: &ScoringContext<'_>,
        candidates: &[IntentCandidate],
    ) -> Result<Vec<f64>, ScorerError> {
        let body = candidates
            .iter()
            .map(|c| ScoreRequest::new(&c.pair, Some(&c.name)))
            .collect();
        let responses = self.call(ctx, body)?;
        candidates
            .iter()
            .zip(&responses)
            .enumerate()
            .map(|(i, (c, r))| candidate_score(r, i, &c.name))
            .collect()
    }

    fn score_requested(
        &self,
        ctx: &ScoringContext<'_>,
        _slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<f64, ScorerError> {
        let responses = self.call(ctx, vec![ScoreRequest::new(pair, None)])?;
        probability(responses[0].get("probability").unwrap_or(&Value::Null), "probability")
    }

    fn score_status(
        &self,
        ctx: &ScoringContext<'_>,
        _slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<StatusDistribution, ScorerError> {
        let responses = self.call(ctx, vec![ScoreRequest::new(pair, None)])?;
        decode_status(&responses[0])
    }

    fn score_values(
        &self,
        ctx: &ScoringContext<'_>,
        slot: &SlotSchema,
        pairs: &[SequencePair],
    ) -> Result<Vec<ValueCandidate>, ScorerError> {
        if pairs.len() != slot.possible_values.len() {
            return Err(ScorerError::protocol(
                "candidates",
                format!("{} pairs for {} possible values", pairs.len(), slot.possible_values.len()),
            ));
        }
        let body = pairs
            .iter()
            .zip(&slot.possible_values)
            .map(|(p, v)| ScoreRequest::new(p, Some(v)))
            .collect();
        let responses = self.call(ctx, body)?;
        slot.possible_values
            .iter()
            .zip(&responses)
            .enumerate()
            .map(|(i, (v, r))| {
                candidate_score(r, i, v).map(|p| ValueCandidate::new(v, p, ValueSource::Categorical))
            })
            .collect()
    }

    fn tag_span(
        &self,
        ctx: &ScoringContext<'_>,
        _slot: &SlotSchema,
        pair: &SequencePair,
    ) -> Result<SpanResult, ScorerError> {
        let responses = self.call(ctx, vec![ScoreRequest::new(pair, None)])?;
        decode_span(&responses[0], ctx.cuu_len())
    }
}
