use std::collections::BTreeSet;

use proptest::prelude::*;

use sgd_dst::carryover::{heuristic_relation, normalize_pair, CarryoverGraph, QualifiedSlot, SlotPair};
use sgd_dst::decision_combiner::{combine, prob_avg, Combination, NluFrame, SlotDecision};
use sgd_dst::evaluator::{AlignedFrame, Tally};
use sgd_dst::example_builder::{diff_states, SlotLabel};
use sgd_dst::nlu_scorers::{LexicalScorer, Status, StatusDistribution, ValueCandidate, ValueSource};
use sgd_dst::retrieval::{ActionHistory, RetrievalDepth};
use sgd_dst::sgd_data::{ActKind, DialogueState, Frame, SchemaSet, ServiceSchema, SlotSchema, Speaker, SystemAction, Turn, DONTCARE};
use sgd_dst::synth::{generate, SynthSpec};
use sgd_dst::tracker::{track_corpus, update_state, TrackerConfig};
use sgd_dst::Exact;

// -- combiner ---------------------------------------------------------------

/// Status distributions on a grid of hundredths, as exact rationals.
fn status() -> impl Strategy<Value = StatusDistribution<Exact>> {
    (0i64..=100)
        .prop_flat_map(|n| (Just(n), 0..=100 - n))
        .prop_map(|(n, d)| {
            StatusDistribution::new(Exact::new(n, 100), Exact::new(d, 100), Exact::new(100 - n - d, 100)).unwrap()
        })
}

fn candidate() -> impl Strategy<Value = Option<ValueCandidate<Exact>>> {
    proptest::option::of((0i64..=100).prop_map(|p| ValueCandidate::new("v", Exact::new(p, 100), ValueSource::Span)))
}

proptest! {
    #[test]
    fn combiner_is_total_and_consistent(s in status(), vm in candidate(), t in 0i64..=100) {
        let t = Exact::new(t, 100);
        let d = prob_avg(&s, vm.as_ref(), t);
        let p_m = vm.as_ref().map(|c| c.probability).unwrap_or_default();
        let avg = (s.p_active + p_m) / Exact::from_integer(2);
        match &d {
            SlotDecision::Value { value, .. } => {
                prop_assert!(vm.is_some());
                prop_assert_eq!(value.as_str(), "v");
                prop_assert!(avg > t);
            }
            SlotDecision::NoUpdate => prop_assert!(s.argmax() == Status::None && avg <= t),
            SlotDecision::ActiveNoValue => prop_assert!(vm.is_none() || s.argmax() == Status::Active),
            SlotDecision::Dontcare => prop_assert_eq!(s.argmax(), Status::Dontcare),
        }
    }

    #[test]
    fn dontcare_dominates(s in status(), vm in candidate(), t in 0i64..=100) {
        prop_assume!(s.p_dontcare > s.p_none && s.p_dontcare > s.p_active);
        for c in [Combination::ProbAvg, Combination::Pipeline] {
            prop_assert_eq!(combine(c, &s, vm.as_ref(), Exact::new(t, 100)), SlotDecision::Dontcare);
        }
    }
}

// -- retrieval --------------------------------------------------------------

const SERVICES: [&str; 3] = ["A", "B", "C"];
const SLOTS: [&str; 3] = ["x", "y", "z"];

/// (service, slot, value) actions per system turn; user turns sit between.
fn action_turns() -> impl Strategy<Value = Vec<Vec<(usize, usize, u8)>>> {
    prop::collection::vec(prop::collection::vec((0..3usize, 0..3usize, 0..4u8), 0..4), 0..8)
}

fn system_turn(actions: &[(usize, usize, u8)]) -> Turn {
    let mut frames: Vec<Frame> = Vec::new();
    for &(sv, sl, v) in actions {
        let service = SERVICES[sv];
        let action = if v == 0 {
            SystemAction::new(ActKind::Request, Some(SLOTS[sl]), &[])
        } else {
            SystemAction::new(ActKind::Offer, Some(SLOTS[sl]), &[&format!("v{v}")])
        };
        match frames.iter_mut().find(|f| f.service == service) {
            Some(f) => f.actions.push(action),
            None => {
                let mut f = Frame::new(service);
                f.actions.push(action);
                frames.push(f);
            }
        }
    }
    Turn::new(Speaker::System, "", frames)
}

/// Every system turn at an odd index, numbered in dialogue order.
fn history(turns: &[Vec<(usize, usize, u8)>]) -> (ActionHistory, Vec<(usize, Turn)>) {
    let mut h = ActionHistory::new();
    let mut all = Vec::new();
    for (i, acts) in turns.iter().enumerate() {
        let t = 2 * i + 1;
        let turn = system_turn(acts);
        h.record_turn(t, &turn);
        all.push((t, turn));
    }
    (h, all)
}

/// Latest valued action for the slot strictly before `current`, scanning
/// turns and then actions in dialogue order.
fn brute_force(turns: &[(usize, Turn)], service: &str, slot: &str, current: usize, psu_only: bool) -> Option<(usize, Vec<String>)> {
    let mut best = None;
    for (t, turn) in turns {
        if *t >= current || (psu_only && *t + 1 != current) {
            continue;
        }
        for f in turn.frames.iter().filter(|f| f.service == service) {
            for a in &f.actions {
                if a.slot.as_deref() == Some(slot) && !a.values.is_empty() {
                    best = Some((*t, a.values.clone()));
                }
            }
        }
    }
    best
}

proptest! {
    #[test]
    fn retrieval_matches_brute_force(turns in action_turns(), current in 0usize..18, sv in 0..3usize, sl in 0..3usize) {
        let (h, all) = history(&turns);
        let (service, slot) = (SERVICES[sv], SLOTS[sl]);
        for (depth, psu) in [(RetrievalDepth::FullHistory, false), (RetrievalDepth::PsuOnly, true)] {
            let got = h.retrieve_value(service, slot, current, depth).map(|r| (r.turn, r.values));
            prop_assert_eq!(got, brute_force(&all, service, slot, current, psu));
        }
        prop_assert!(h.retrieve_value(service, slot, current, RetrievalDepth::Off).is_none());
    }

    #[test]
    fn later_turns_do_not_change_earlier_retrievals(turns in action_turns(), extra in action_turns(), current in 0usize..18) {
        let (h, _) = history(&turns);
        let (mut longer, _) = history(&turns);
        let base = 2 * turns.len() + 1;
        for (i, acts) in extra.iter().enumerate() {
            longer.record_turn(base + 2 * i, &system_turn(acts));
        }
        let cutoff = current.min(base);
        for service in SERVICES {
            for slot in SLOTS {
                prop_assert_eq!(
                    h.retrieve_value(service, slot, cutoff, RetrievalDepth::FullHistory),
                    longer.retrieve_value(service, slot, cutoff, RetrievalDepth::FullHistory)
                );
            }
        }
    }

    #[test]
    fn psu_only_is_a_restriction_of_full_history(turns in action_turns(), current in 0usize..18) {
        let (h, _) = history(&turns);
        for service in SERVICES {
            for slot in SLOTS {
                if let Some(r) = h.retrieve_value(service, slot, current, RetrievalDepth::PsuOnly) {
                    prop_assert_eq!(Some(r), h.retrieve_value(service, slot, current, RetrievalDepth::FullHistory));
                }
            }
        }
    }

    #[test]
    fn carryover_retrieval_matches_brute_force(turns in action_turns(), current in 0usize..18, picks in prop::collection::btree_set((0..3usize, 0..3usize), 0..4)) {
        let (h, all) = history(&turns);
        let cands: BTreeSet<QualifiedSlot> = picks.iter().map(|&(a, b)| QualifiedSlot::new(SERVICES[a], SLOTS[b])).collect();
        // the latest (turn, position) over all candidates
        let mut best: Option<(usize, usize, Vec<String>)> = None;
        for (t, turn) in &all {
            if *t >= current {
                continue;
            }
            let mut pos = 0;
            for f in &turn.frames {
                for a in &f.actions {
                    pos += 1;
                    let hit = a.slot.as_deref().is_some_and(|s| cands.contains(&QualifiedSlot::new(&f.service, s)));
                    if hit && !a.values.is_empty() {
                        best = Some((*t, pos, a.values.clone()));
                    }
                }
            }
        }
        let got = h.retrieve_carryover(&cands, current).map(|r| (r.turn, r.values));
        prop_assert_eq!(got, best.map(|(t, _, v)| (t, v)));
    }
}

// -- carryover closure ------------------------------------------------------

fn slot_pool() -> Vec<QualifiedSlot> {
    (0..5).flat_map(|s| (0..4).map(move |k| QualifiedSlot::new(&format!("S{s}"), &format!("k{k}")))).collect()
}

fn pairs() -> impl Strategy<Value = Vec<SlotPair>> {
    let pool = slot_pool();
    prop::collection::vec((0..pool.len(), 0..pool.len()), 0..25)
        .prop_map(move |v| v.into_iter().map(|(a, b)| normalize_pair(pool[a].clone(), pool[b].clone())).collect())
}

/// Reflexive transitive closure by Warshall's algorithm.
fn warshall(pool: &[QualifiedSlot], pairs: &[SlotPair]) -> Vec<Vec<bool>> {
    let n = pool.len();
    let idx = |s: &QualifiedSlot| pool.iter().position(|p| p == s).unwrap();
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for (a, b) in pairs {
        let (i, j) = (idx(a), idx(b));
        r[i][j] = true;
        r[j][i] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

proptest! {
    #[test]
    fn closure_matches_warshall(ps in pairs()) {
        let pool = slot_pool();
        let g = CarryoverGraph::closure(&ps);
        let r = warshall(&pool, &ps);
        for (i, a) in pool.iter().enumerate() {
            for (j, b) in pool.iter().enumerate() {
                prop_assert_eq!(g.related(a, b), r[i][j], "{} {}", a, b);
            }
            let want: BTreeSet<QualifiedSlot> = pool
                .iter()
                .enumerate()
                .filter(|(j, b)| r[i][*j] && b.service != a.service)
                .map(|(_, b)| b.clone())
                .collect();
            prop_assert_eq!(g.candidate_set(a), want);
        }
        prop_assert!(g.classes().iter().all(|c| c.len() > 1));
    }

    #[test]
    fn closure_is_idempotent(ps in pairs()) {
        let g = CarryoverGraph::closure(&ps);
        prop_assert_eq!(CarryoverGraph::closure(&g.edges()), g.clone());
        let doubled: Vec<SlotPair> = ps.iter().chain(g.edges().iter()).cloned().collect();
        prop_assert_eq!(CarryoverGraph::closure(&doubled), g);
    }

    #[test]
    fn candidate_sets_are_symmetric(ps in pairs()) {
        let g = CarryoverGraph::closure(&ps);
        for a in slot_pool() {
            for b in g.candidate_set(&a) {
                prop_assert!(g.candidate_set(&b).contains(&a));
            }
        }
    }

    #[test]
    fn heuristic_is_symmetric(n1 in "[a-z_]{1,12}", d1 in "[a-z ]{0,30}", n2 in "[a-z_]{1,12}", d2 in "[a-z ]{0,30}", theta in 0.0f64..1.0) {
        prop_assert_eq!(
            heuristic_relation(&n1, &d1, &n2, &d2, theta),
            heuristic_relation(&n2, &d2, &n1, &d1, theta)
        );
        if n1.chars().any(|c| c.is_ascii_alphabetic()) {
            prop_assert!(heuristic_relation(&n1, &d1, &n1, &d1, theta));
        }
    }
}

// -- label round trip -------------------------------------------------------

fn round_trip_schema() -> ServiceSchema {
    ServiceSchema {
        service_name: "Svc".into(),
        description: String::new(),
        intents: vec![],
        slots: vec![
            SlotSchema::non_categorical("a", ""),
            SlotSchema::non_categorical("b", ""),
            SlotSchema::categorical("c", "", &["on", "off"]),
        ],
        extra: Default::default(),
    }
}

/// Per turn and slot: 0 keep, 1 dontcare, otherwise a fresh value.
fn state_sequence() -> impl Strategy<Value = Vec<DialogueState>> {
    prop::collection::vec(prop::collection::vec(0u8..5, 3), 1..12).prop_map(|steps| {
        let mut cur = DialogueState::default();
        let mut out = Vec::new();
        for step in steps {
            for (slot, op) in ["a", "b", "c"].iter().zip(step) {
                let value = match (op, *slot) {
                    (0, _) => continue,
                    (1, _) => DONTCARE.to_string(),
                    (op, "c") => ["on", "off"][op as usize % 2].to_string(),
                    (op, s) => format!("{s}{op}"),
                };
                cur.slot_values.insert(slot.to_string(), vec![value]);
            }
            out.push(cur.clone());
        }
        out
    })
}

proptest! {
    #[test]
    fn labels_replay_to_the_same_states(states in state_sequence()) {
        let schema = round_trip_schema();
        let history = ActionHistory::new();
        let mut prev = DialogueState::default();
        for (t, gold) in states.iter().enumerate() {
            let label = diff_states(&prev, gold, &[]);
            let decisions = schema
                .slots
                .iter()
                .map(|s| {
                    let d = match label.slot(&s.name) {
                        SlotLabel::None => SlotDecision::NoUpdate,
                        SlotLabel::Dontcare => SlotDecision::Dontcare,
                        SlotLabel::Active(v) => SlotDecision::Value { value: v[0].clone(), source: ValueSource::Span },
                    };
                    (s.name.clone(), d)
                })
                .collect();
            let frame = NluFrame {
                service: "Svc".into(),
                active_intent: label.active_intent.clone(),
                requested_slots: label.requested_slots.clone(),
                decisions,
            };
            let (next, _) = update_state(&prev, &frame, &schema, &history, &TrackerConfig::default(), 2 * t);
            prop_assert_eq!(&next, gold);
            prev = next;
        }
    }
}

// -- evaluator --------------------------------------------------------------

fn dialogue_state() -> impl Strategy<Value = DialogueState> {
    (
        prop::sample::select(vec!["NONE", "FindX", "BookX"]),
        prop::collection::btree_set(prop::sample::select(vec!["x", "y", "z"]), 0..3),
        prop::collection::btree_map(prop::sample::select(vec!["x", "y", "z"]), prop::sample::select(vec!["v1", "V1", "v2", "v 3"]), 0..3),
    )
        .prop_map(|(i, r, m)| DialogueState {
            active_intent: i.to_string(),
            requested_slots: r.into_iter().map(String::from).collect(),
            slot_values: m.into_iter().map(|(k, v)| (k.to_string(), vec![v.to_string()])).collect(),
        })
}

fn frame_pairs() -> impl Strategy<Value = Vec<(DialogueState, DialogueState, bool)>> {
    prop::collection::vec((dialogue_state(), dialogue_state(), any::<bool>()), 0..20)
}

fn tally(frames: &[(DialogueState, DialogueState, bool)], pick: impl Fn(bool) -> bool) -> Tally<Exact> {
    let mut t = Tally::default();
    for (g, p, seen) in frames {
        if pick(*seen) {
            t.add(AlignedFrame { gold: g, pred: p });
        }
    }
    t
}

proptest! {
    #[test]
    fn buckets_decompose(frames in frame_pairs()) {
        let mut merged = tally(&frames, |s| s);
        merged.merge(&tally(&frames, |s| !s));
        prop_assert_eq!(merged, tally(&frames, |_| true));
    }

    #[test]
    fn metrics_ignore_frame_order(frames in frame_pairs(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = frames.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(tally(&frames, |_| true).metrics(), tally(&shuffled, |_| true).metrics());
    }

    #[test]
    fn perfect_joint_accuracy_implies_perfect_average(frames in frame_pairs()) {
        let m = tally(&frames, |_| true).metrics();
        if m.joint_goal_accuracy == Exact::from_integer(1) {
            prop_assert_eq!(m.average_goal_accuracy, Exact::from_integer(1));
        }
        for v in [m.intent_accuracy, m.requested_slots_f1, m.average_goal_accuracy, m.joint_goal_accuracy] {
            prop_assert!(v >= Exact::from_integer(0) && v <= Exact::from_integer(1));
        }
    }

    #[test]
    fn self_prediction_is_perfect(states in prop::collection::vec(dialogue_state(), 0..10)) {
        let frames: Vec<_> = states.iter().map(|s| (s.clone(), s.clone(), true)).collect();
        let m = tally(&frames, |_| true).metrics();
        let one = Exact::from_integer(1);
        prop_assert_eq!((m.intent_accuracy, m.requested_slots_f1, m.average_goal_accuracy, m.joint_goal_accuracy), (one, one, one, one));
    }
}

// -- tracker ----------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn tracking_is_independent_of_jobs(seed in any::<u64>(), jobs in 2usize..9) {
        let c = generate(&SynthSpec { n_dialogues: 8, seed, ..Default::default() }).unwrap();
        let schemas = SchemaSet::new(c.schemas);
        let scorer = LexicalScorer::new();
        let serial = track_corpus(&c.dialogues, &schemas, &scorer, &TrackerConfig::default()).unwrap();
        let parallel = track_corpus(&c.dialogues, &schemas, &scorer, &TrackerConfig { jobs, ..Default::default() }).unwrap();
        prop_assert_eq!(serial, parallel);
    }
}

