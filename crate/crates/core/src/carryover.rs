//! Cross-service slot relations.
//!
//! Pairs of related slots come either from mining a training corpus or from
//! a name/description similarity heuristic. The relation is closed under
//! symmetry and transitivity with a union-find, and queried for the
//! candidate slots of another service.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::nlu_scorers::jaccard;
use crate::sgd_data::{Dialogue, SchemaSet, Speaker, DONTCARE};

pub const DEFAULT_HEURISTIC_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QualifiedSlot {
    pub service: String,
    pub slot: String,
}

impl QualifiedSlot {
    pub fn new(service: &str, slot: &str) -> Self {
        QualifiedSlot {
            service: service.to_string(),
            slot: slot.to_string(),
        }
    }

    /// Parses `service.slot`, splitting at the first dot.
    pub fn parse(s: &str) -> Option<Self> {
        let (service, slot) = s.split_once('.')?;
        if service.is_empty() || slot.is_empty() {
            return None;
        }
        Some(QualifiedSlot::new(service, slot))
    }
}

impl fmt::Display for QualifiedSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.service, self.slot)
    }
}

/// An unordered pair, stored with the smaller slot first.
pub type SlotPair = (QualifiedSlot, QualifiedSlot);

pub fn normalize_pair(a: QualifiedSlot, b: QualifiedSlot) -> SlotPair {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Plain union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Equivalence classes of related slots. Slots never mentioned in a pair
/// are implicit singletons.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CarryoverGraph {
    class_of: BTreeMap<QualifiedSlot, usize>,
    classes: Vec<BTreeSet<QualifiedSlot>>,
}

impl CarryoverGraph {
    pub fn closure<'a>(pairs: impl IntoIterator<Item = &'a SlotPair>) -> Self {
        let mut index: BTreeMap<QualifiedSlot, usize> = BTreeMap::new();
        let mut edges = Vec::new();
        for (a, b) in pairs {
            let mut id = |s: &QualifiedSlot| {
                let next = index.len();
                *index.entry(s.clone()).or_insert(next)
            };
            edges.push((id(a), id(b)));
        }
        let mut dsu = DisjointSets::new(index.len());
        for (a, b) in edges {
            dsu.union(a, b);
        }
        let mut by_root: BTreeMap<usize, BTreeSet<QualifiedSlot>> = BTreeMap::new();
        for (slot, &i) in &index {
            by_root.entry(dsu.find(i)).or_default().insert(slot.clone());
        }
        // order classes by their smallest member so the layout is canonical
        let mut classes: Vec<BTreeSet<QualifiedSlot>> =
            by_root.into_values().filter(|c| c.len() > 1).collect();
        classes.sort();
        let mut class_of = BTreeMap::new();
        for (c, members) in classes.iter().enumerate() {
            for m in members {
                class_of.insert(m.clone(), c);
            }
        }
        CarryoverGraph { class_of, classes }
    }

    /// Classes with at least two members.
    pub fn classes(&self) -> &[BTreeSet<QualifiedSlot>] {
        &self.classes
    }

    pub fn related(&self, a: &QualifiedSlot, b: &QualifiedSlot) -> bool {
        a == b || matches!((self.class_of.get(a), self.class_of.get(b)), (Some(x), Some(y)) if x == y)
    }

    /// Classmates of `target` belonging to other services.
    pub fn candidate_set(&self, target: &QualifiedSlot) -> BTreeSet<QualifiedSlot> {
        let Some(&c) = self.class_of.get(target) else {
            return BTreeSet::new();
        };
        self.classes[c]
            .iter()
            .filter(|s| s.service != target.service)
            .cloned()
            .collect()
    }

    /// A spanning edge list whose closure reproduces this graph.
    pub fn edges(&self) -> BTreeSet<SlotPair> {
        let mut out = BTreeSet::new();
        for class in &self.classes {
            let mut it = class.iter();
            let Some(first) = it.next() else { continue };
            for other in it {
                out.insert(normalize_pair(first.clone(), other.clone()));
            }
        }
        out
    }
}

/// Mines related slot pairs. A pair `(A.x, B.y)` with `A != B` is emitted when
/// a value newly enters `B.y` in a user turn without a span for `B.y` in that
/// utterance, and the identical value was earlier held by `A.x` in a state or
/// mentioned for `A.x` by the system.
pub fn mine_relations(corpus: &[Dialogue]) -> BTreeSet<SlotPair> {
    let mut out = BTreeSet::new();
    for dialogue in corpus {
        // value -> slots that held or were offered it so far
        let mut seen: HashMap<&str, BTreeSet<QualifiedSlot>> = HashMap::new();
        let mut prev: HashMap<&str, &BTreeMap<String, Vec<String>>> = HashMap::new();
        for turn in &dialogue.turns {
            let mut learned: Vec<(&str, QualifiedSlot)> = Vec::new();
            for frame in &turn.frames {
                if turn.speaker == Speaker::System {
                    for action in &frame.actions {
                        let Some(slot) = &action.slot else { continue };
                        for v in &action.values {
                            learned.push((v, QualifiedSlot::new(&frame.service, slot)));
                        }
                    }
                    continue;
                }
                let Some(state) = &frame.state else { continue };
                let before = prev.get(frame.service.as_str());
                for (slot, values) in &state.slot_values {
                    let target = QualifiedSlot::new(&frame.service, slot);
                    let has_span = frame.spans.iter().any(|s| &s.slot == slot);
                    for v in values {
                        learned.push((v, target.clone()));
                        let already = before
                            .and_then(|b| b.get(slot))
                            .is_some_and(|old| old.contains(v));
                        if already || has_span || v == DONTCARE {
                            continue;
                        }
                        for source in seen.get(v.as_str()).into_iter().flatten() {
                            if source.service != target.service {
                                out.insert(normalize_pair(source.clone(), target.clone()));
                            }
                        }
                    }
                }
                prev.insert(&frame.service, &state.slot_values);
            }
            for (v, slot) in learned {
                seen.entry(v).or_default().insert(slot);
            }
        }
    }
    out
}

fn slot_text(name: &str, description: &str) -> String {
    format!("{name} {description}")
}

pub fn heuristic_relation(
    name1: &str,
    description1: &str,
    name2: &str,
    description2: &str,
    threshold: f64,
) -> bool {
    jaccard(&slot_text(name1, description1), &slot_text(name2, description2)) >= threshold
}

/// Heuristic pairs between slots of different services.
pub fn heuristic_relations(schemas: &SchemaSet, threshold: f64) -> BTreeSet<SlotPair> {
    let services: Vec<_> = schemas.iter().collect();
    let mut out = BTreeSet::new();
    for (i, a) in services.iter().enumerate() {
        for b in &services[i + 1..] {
            for x in &a.slots {
                for y in &b.slots {
                    if heuristic_relation(&x.name, &x.description, &y.name, &y.description, threshold) {
                        out.insert(normalize_pair(
                            QualifiedSlot::new(&a.service_name, &x.name),
                            QualifiedSlot::new(&b.service_name, &y.name),
                        ));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("pair file line {line}: {message}")]
pub struct PairFileError {
    pub line: usize,
    pub message: String,
}

/// One `serviceA.slotA<TAB>serviceB.slotB` line per pair, sorted.
pub fn write_pairs(pairs: &BTreeSet<SlotPair>) -> String {
    let mut out = String::new();
    for (a, b) in pairs {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    out
}

/// Reads a pair file. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeSet<SlotPair>, PairFileError> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| PairFileError {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(err("expected two tab-separated slots"));
        }
        let a = QualifiedSlot::parse(fields[0].trim()).ok_or_else(|| err("malformed slot, expected service.slot"))?;
        let b = QualifiedSlot::parse(fields[1].trim()).ok_or_else(|| err("malformed slot, expected service.slot"))?;
        out.insert(normalize_pair(a, b));
    }
    Ok(out)
}

/// Checks that every slot named by a pair exists in the schemas.
pub fn check_pairs(pairs: &BTreeSet<SlotPair>, schemas: &SchemaSet) -> Result<(), String> {
    for s in pairs.iter().flat_map(|(a, b)| [a, b]) {
        let ok = schemas.get(&s.service).is_some_and(|svc| svc.slot(&s.slot).is_some());
        if !ok {
            return Err(format!("unknown slot '{s}'"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgd_data::{DialogueState, Frame, Span, Turn};

    fn q(s: &str) -> QualifiedSlot {
        QualifiedSlot::parse(s).unwrap()
    }

    fn pairs(list: &[(&str, &str)]) -> BTreeSet<SlotPair> {
        list.iter().map(|(a, b)| normalize_pair(q(a), q(b))).collect()
    }

    #[test]
    fn closure_examples() {
        let g = CarryoverGraph::closure(&pairs(&[("A.x", "B.y"), ("B.y", "C.z")]));
        assert_eq!(g.classes().len(), 1);
        assert_eq!(g.classes()[0], BTreeSet::from([q("A.x"), q("B.y"), q("C.z")]));
        assert!(CarryoverGraph::closure(&BTreeSet::new()).classes().is_empty());
        let g = CarryoverGraph::closure(&pairs(&[("A.a", "B.b"), ("C.c", "D.d")]));
        assert_eq!(g.classes().len(), 2);
        assert!(!g.related(&q("A.a"), &q("C.c")));
    }

    #[test]
    fn candidate_sets() {
        let g = CarryoverGraph::closure(&pairs(&[("A.x", "B.y"), ("B.y", "C.z")]));
        assert_eq!(g.candidate_set(&q("A.x")), BTreeSet::from([q("B.y"), q("C.z")]));
        assert!(g.candidate_set(&q("Q.q")).is_empty());
        let g = CarryoverGraph::closure(&pairs(&[("A.x", "A.w"), ("A.w", "B.y")]));
        assert_eq!(g.candidate_set(&q("A.x")), BTreeSet::from([q("B.y")]));
    }

    #[test]
    fn heuristic_examples() {
        assert!(heuristic_relation("city", "city of event", "city", "city of event", 0.5));
        assert!(!heuristic_relation("alpha", "beta", "gamma", "delta", 0.5));
        // {numberofseats number of people for the reservation} against
        // {numberofriders number of people riding}: 3 shared over 9
        let a = ("number_of_seats", "number of people for the reservation");
        let b = ("number_of_riders", "number of people riding");
        assert!(heuristic_relation(a.0, a.1, b.0, b.1, 1.0 / 3.0));
        assert!(!heuristic_relation(a.0, a.1, b.0, b.1, 0.34));
        assert!(!heuristic_relation(a.0, a.1, b.0, b.1, DEFAULT_HEURISTIC_THRESHOLD));
    }

    #[test]
    fn pair_file_round_trip() {
        let p = pairs(&[("B.y", "A.x"), ("C.z", "A.x")]);
        let text = write_pairs(&p);
        assert_eq!(text, "A.x\tB.y\nA.x\tC.z\n");
        assert_eq!(parse_pairs(&text).unwrap(), p);
        assert_eq!(parse_pairs("# c\n\nB.y\tA.x\n").unwrap(), pairs(&[("A.x", "B.y")]));
        assert_eq!(parse_pairs("A.x B.y\n").unwrap_err().line, 1);
        assert!(parse_pairs("A.x\tBy\n").is_err());
    }

    fn user(service: &str, values: &[(&str, &[&str])], spans: Vec<Span>) -> Turn {
        let mut f = Frame::new(service);
        f.state = Some(DialogueState::with_values(values.iter().copied()));
        f.spans = spans;
        Turn::new(Speaker::User, "", vec![f])
    }

    fn system() -> Turn {
        Turn::new(Speaker::System, "", vec![])
    }

    fn dialogue(turns: Vec<Turn>) -> Dialogue {
        Dialogue {
            dialogue_id: "d".into(),
            services: vec![],
            turns,
            extra: Default::default(),
        }
    }

    #[test]
    fn mining() {
        let d = dialogue(vec![
            user("Restaurant", &[("number_of_seats", &["2"])], vec![]),
            system(),
            user("Taxi", &[("number_of_riders", &["2"])], vec![]),
        ]);
        assert_eq!(
            mine_relations(&[d]),
            pairs(&[("Restaurant.number_of_seats", "Taxi.number_of_riders")])
        );

        let single = dialogue(vec![
            user("A", &[("x", &["v"])], vec![]),
            system(),
            user("A", &[("x", &["v"]), ("y", &["v"])], vec![]),
        ]);
        assert!(mine_relations(&[single]).is_empty());

        let span = Span { slot: "number_of_riders".into(), start: 0, end: 1, value: "2".into() };
        let explained = dialogue(vec![
            user("Restaurant", &[("number_of_seats", &["2"])], vec![]),
            system(),
            user("Taxi", &[("number_of_riders", &["2"])], vec![span]),
        ]);
        assert!(mine_relations(&[explained]).is_empty());
    }
}
