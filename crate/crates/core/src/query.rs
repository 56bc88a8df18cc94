//! Secure graph traversal over the merged universe.
//!
//! A traverser holds shared 0/1 location indicators (scaled to fixed-point
//! one) over the global entity ids and the remaining instructions. Each
//! step runs SExecute, producing a shared indicator, and Filter, which makes
//! it the next location vector. Only the final locations are reconstructed.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::kgstore::Direction;
use crate::merge::{plain_merge, MergedUniverse};
use crate::mpc::{Mpc, MpcError, RingMatrix, ShareMatrix, ShareVector};
use crate::numeric::RingValue;
use crate::runtime::{MessageKind, PartyId};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("instruction {index}: {msg}")]
    Parse { index: usize, msg: String },
    #[error("programs must start with exactly one `start`")]
    BadProgram,
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("unknown entity {0:?}")]
    UnknownEntityName(String),
    #[error("slot {0} is not a numeric property slot")]
    BadSlot(usize),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cmp {
    Ge,
    Lt,
    Eq,
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Instruction {
    /// `None` starts from every entity.
    Start(Option<String>),
    /// Relation token (label or id); `None` follows every relation.
    Out(Option<String>),
    In(Option<String>),
    /// 1-based property slot.
    Where { slot: usize, cmp: Cmp, value: f64 },
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = |r: &Option<String>| r.clone().unwrap_or_else(|| "*".into());
        match self {
            Instruction::Start(e) => write!(f, "start {}", e.clone().unwrap_or_else(|| "*".into())),
            Instruction::Out(r) => write!(f, "out {}", rel(r)),
            Instruction::In(r) => write!(f, "in {}", rel(r)),
            Instruction::Where { slot, cmp, value } => write!(f, "where {slot} {cmp} {value}"),
        }
    }
}

/// Parses `start Alice; out 2; where 1 >= 0.5`.
pub fn parse_program(src: &str) -> Result<Vec<Instruction>, QueryError> {
    let mut out = Vec::new();
    for (index, raw) in src.split(';').enumerate() {
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let err = |msg: &str| QueryError::Parse {
            index,
            msg: format!("{msg} in {text:?}"),
        };
        let (op, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let rest = rest.trim();
        let rel = |r: &str| -> Result<Option<String>, QueryError> {
            match r {
                "" => Err(err("missing relation")),
                "*" => Ok(None),
                r if r.split_whitespace().count() == 1 => Ok(Some(r.to_string())),
                _ => Err(err("relation must be one token")),
            }
        };
        let ins = match op {
            "start" => match rest {
                "" => return Err(err("missing entity")),
                "*" => Instruction::Start(None),
                name => Instruction::Start(Some(name.to_string())),
            },
            "out" => Instruction::Out(rel(rest)?),
            "in" => Instruction::In(rel(rest)?),
            "where" => {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(err("expected `where <slot> <op> <value>`"));
                }
                let slot: usize = toks[0].parse().map_err(|_| err("bad slot"))?;
                let cmp = match toks[1] {
                    ">=" | "≥" => Cmp::Ge,
                    "<" => Cmp::Lt,
                    "=" | "==" => Cmp::Eq,
                    _ => return Err(err("comparison must be >=, < or =")),
                };
                let value: f64 = toks[2].parse().map_err(|_| err("bad constant"))?;
                Instruction::Where { slot, cmp, value }
            }
            _ => return Err(err("unknown instruction")),
        };
        out.push(ins);
    }
    check_program(&out)?;
    Ok(out)
}

fn check_program(p: &[Instruction]) -> Result<(), QueryError> {
    let starts = p.iter().filter(|i| matches!(i, Instruction::Start(_))).count();
    if starts != 1 || !matches!(p.first(), Some(Instruction::Start(_))) {
        return Err(QueryError::BadProgram);
    }
    Ok(())
}

/// Traversal state: shared locations plus the remaining program.
#[derive(Debug, Clone)]
pub struct Traverser {
    pub locations: ShareVector,
    pub program: VecDeque<Instruction>,
}

/// Shared 0/1 indicator over the universe.
#[derive(Debug, Clone)]
pub struct IndicatorVector(pub ShareVector);

/// Filter: the universe is positional, so the indicator itself is the new
/// location vector.
pub fn filter(b: IndicatorVector) -> ShareVector {
    b.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub entities: Vec<String>,
    pub ids: Vec<usize>,
}

/// Query evaluation over a merged universe with cached local adjacencies.
pub struct QueryEngine<'a> {
    universe: &'a MergedUniverse,
    adjacency: HashMap<(Option<u32>, Direction), Vec<RingMatrix>>,
    properties: HashMap<usize, ShareVector>,
}

impl<'a> QueryEngine<'a> {
    pub fn new(universe: &'a MergedUniverse) -> Self {
        Self {
            universe,
            adjacency: HashMap::new(),
            properties: HashMap::new(),
        }
    }

    fn one(mpc: &Mpc) -> RingValue {
        mpc.cfg().one()
    }

    fn resolve_entity(&self, name: &str) -> Result<usize, QueryError> {
        if let Some(id) = self.universe.id_of(name) {
            return Ok(id);
        }
        let key = crate::kgstore::canonical_key(name);
        self.universe
            .entities
            .iter()
            .find(|e| e.key == key || e.members.values().any(|l| l == name))
            .map(|e| e.global_id)
            .ok_or_else(|| QueryError::UnknownEntityName(name.into()))
    }

    fn resolve_relation(&self, token: &Option<String>) -> Result<Option<u32>, QueryError> {
        match token {
            None => Ok(None),
            Some(t) => self
                .universe
                .relations
                .resolve(t)
                .map(Some)
                .ok_or_else(|| QueryError::UnknownRelation(t.clone())),
        }
    }

    /// Party-local matrices `M_i` with `next = Σ_i M_i · U`.
    fn step_matrices(&mut self, relation: Option<u32>, dir: Direction) -> &[RingMatrix] {
        let u = self.universe;
        self.adjacency.entry((relation, dir)).or_insert_with(|| {
            // out: next[v] = Σ_u U[u] [u -> v], i.e. the In-oriented matrix.
            let orient = match dir {
                Direction::Out => Direction::In,
                Direction::In => Direction::Out,
            };
            u.views
                .iter()
                .map(|kg| kg.adjacency(&u.ids, u.len(), &u.relations, relation, orient))
                .collect()
        })
    }

    fn property_vector(&mut self, mpc: &Mpc, slot: usize) -> Result<ShareVector, QueryError> {
        if let Some(v) = self.properties.get(&slot) {
            return Ok(v.clone());
        }
        let kind = self.universe.schema.slot(slot).map(|s| s.kind).ok_or(QueryError::BadSlot(slot))?;
        if !kind.is_numeric() {
            return Err(QueryError::BadSlot(slot));
        }
        let v = self.universe.property_column(slot, mpc.cfg())?;
        self.properties.insert(slot, v.clone());
        Ok(v)
    }

    /// SExecute: the indicator of entities reached by `ins` from `t`.
    pub fn sexecute(&mut self, mpc: &mut Mpc, t: &Traverser, ins: &Instruction) -> Result<IndicatorVector, QueryError> {
        let n_ent = self.universe.len();
        let one = Self::one(mpc);
        match ins {
            Instruction::Start(name) => {
                let bits: Vec<RingValue> = match name {
                    None => vec![one; n_ent],
                    Some(nm) => {
                        let id = self.resolve_entity(nm)?;
                        (0..n_ent).map(|k| if k == id { one } else { RingValue::ZERO }).collect()
                    }
                };
                Ok(IndicatorVector(mpc.constant(&bits)))
            }
            Instruction::Out(r) | Instruction::In(r) => {
                let relation = self.resolve_relation(r)?;
                let dir = if matches!(ins, Instruction::Out(_)) {
                    Direction::Out
                } else {
                    Direction::In
                };
                let mats = self.step_matrices(relation, dir).to_vec();
                let u = ShareMatrix::new(n_ent, 1, t.locations.clone())?;
                let counts = mpc.private_matmul(&mats, &u)?.into_vector();
                let ones = mpc.constant(&vec![one; n_ent]);
                let bits = mpc.compare_ge(&counts, &ones)?;
                let fresh: Vec<RingValue> = bits.iter().map(|&b| if b { one } else { RingValue::ZERO }).collect();
                Ok(IndicatorVector(mpc.constant(&fresh)))
            }
            Instruction::Where { slot, cmp, value } => {
                let x = self.property_vector(mpc, *slot)?;
                let c = mpc.cfg().encode(*value).map_err(MpcError::from)?;
                let cv = mpc.constant(&vec![c; n_ent]);
                let ge = mpc.compare_ge(&x, &cv)?;
                let bits: Vec<bool> = match cmp {
                    Cmp::Ge => ge,
                    Cmp::Lt => ge.into_iter().map(|b| !b).collect(),
                    Cmp::Eq => {
                        let le = mpc.compare_ge(&cv, &x)?;
                        ge.into_iter().zip(le).map(|(a, b)| a && b).collect()
                    }
                };
                let mask = mpc.public_bits_to_ring(&bits);
                Ok(IndicatorVector(mpc.scale_public_vec(&t.locations, &mask)?))
            }
        }
    }

    /// Runs the whole program and reconstructs only the final locations.
    pub fn run(&mut self, mpc: &mut Mpc, program: &[Instruction]) -> Result<QueryResult, QueryError> {
        check_program(program)?;
        let n_ent = self.universe.len();
        let mut t = Traverser {
            locations: ShareVector::zeros(mpc.n(), n_ent),
            program: program.iter().cloned().collect(),
        };
        while let Some(ins) = t.program.pop_front() {
            let b = self.sexecute(mpc, &t, &ins)?;
            t.locations = filter(b);
        }
        let opened = mpc.open(&t.locations, MessageKind::Output, "query.result")?;
        let one = Self::one(mpc);
        let mut ids = Vec::new();
        for (k, v) in opened.iter().enumerate() {
            debug_assert!(*v == one || *v == RingValue::ZERO, "indicator closure");
            if *v == one {
                ids.push(k);
            }
        }
        let mut entities: Vec<String> = ids.iter().map(|&i| self.universe.entities[i].name.clone()).collect();
        entities.sort();
        Ok(QueryResult { entities, ids })
    }
}

pub fn run_query(mpc: &mut Mpc, universe: &MergedUniverse, program: &[Instruction]) -> Result<QueryResult, QueryError> {
    QueryEngine::new(universe).run(mpc, program)
}

/// Plaintext union graph used as the traversal oracle.
#[derive(Debug, Clone)]
pub struct PlainGraph {
    pub names: Vec<String>,
    pub ids: HashMap<String, usize>,
    /// `(head, relation id, tail)`.
    pub edges: BTreeSet<(usize, u32, usize)>,
    /// Merged plaintext value per entity and slot; `None` for categorical.
    pub props: Vec<Vec<Option<f64>>>,
}

impl PlainGraph {
    /// Builds the union graph from the parties' ORIGINAL tables and the
    /// merged entity membership, merging properties in plaintext.
    pub fn from_parts(universe: &MergedUniverse, originals: &[crate::kgstore::KnowledgeGraph]) -> Self {
        let names: Vec<String> = universe.entities.iter().map(|e| e.name.clone()).collect();
        let mut local_to_global: HashMap<(PartyId, String), usize> = HashMap::new();
        for e in &universe.entities {
            for (p, l) in &e.members {
                local_to_global.insert((*p, l.clone()), e.global_id);
            }
        }
        let mut edges = BTreeSet::new();
        for kg in originals {
            for t in &kg.triples {
                let h = local_to_global[&(kg.party, t.head.clone())];
                let tl = local_to_global[&(kg.party, t.tail.clone())];
                let r = universe.relations.id(&t.relation).expect("relation in dictionary");
                edges.insert((h, r, tl));
            }
        }
        let slots = universe.schema.len();
        let props = universe
            .entities
            .iter()
            .map(|e| {
                (1..=slots)
                    .map(|s| {
                        let slot = universe.schema.slot(s).expect("slot");
                        if !slot.kind.is_numeric() {
                            return None;
                        }
                        let vals: Vec<f64> = e
                            .members
                            .iter()
                            .map(|(p, l)| originals[p.index()].plain_number(l, s).expect("plain value"))
                            .collect();
                        if vals.len() == 1 {
                            Some(vals[0])
                        } else {
                            Some(plain_merge(&universe.policy.rules[s - 1], &vals, 0))
                        }
                    })
                    .collect()
            })
            .collect();
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, ids, edges, props }
    }

    /// Plaintext traversal with the same semantics as the secure engine.
    pub fn run(&self, universe: &MergedUniverse, program: &[Instruction]) -> Result<BTreeSet<String>, QueryError> {
        check_program(program)?;
        let n = self.names.len();
        let mut cur: BTreeSet<usize> = BTreeSet::new();
        for ins in program {
            cur = match ins {
                Instruction::Start(None) => (0..n).collect(),
                Instruction::Start(Some(name)) => {
                    let engine = QueryEngine::new(universe);
                    [engine.resolve_entity(name)?].into()
                }
                Instruction::Out(r) | Instruction::In(r) => {
                    let rel = QueryEngine::new(universe).resolve_relation(r)?;
                    let out = matches!(ins, Instruction::Out(_));
                    self.edges
                        .iter()
                        .filter(|(_, er, _)| rel.is_none_or(|x| x == *er))
                        .filter_map(|&(h, _, t)| {
                            if out && cur.contains(&h) {
                                Some(t)
                            } else if !out && cur.contains(&t) {
                                Some(h)
                            } else {
                                None
                            }
                        })
                        .collect()
                }
                Instruction::Where { slot, cmp, value } => {
                    let s = universe.schema.slot(*slot).ok_or(QueryError::BadSlot(*slot))?;
                    if !s.kind.is_numeric() {
                        return Err(QueryError::BadSlot(*slot));
                    }
                    cur.iter()
                        .copied()
                        .filter(|&e| {
                            let x = self.props[e][slot - 1].expect("numeric");
                            match cmp {
                                Cmp::Ge => x >= *value,
                                Cmp::Lt => x < *value,
                                Cmp::Eq => x == *value,
                            }
                        })
                        .collect()
                }
            };
        }
        Ok(cur.into_iter().map(|i| self.names[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_dsl() {
        let p = parse_program("start Alice; out 2; where 1 >= 0.5").unwrap();
        assert_eq!(
            p,
            vec![
                Instruction::Start(Some("Alice".into())),
                Instruction::Out(Some("2".into())),
                Instruction::Where {
                    slot: 1,
                    cmp: Cmp::Ge,
                    value: 0.5
                },
            ]
        );
        assert_eq!(parse_program("start Jim Butler; in *").unwrap()[0], Instruction::Start(Some("Jim Butler".into())));
        assert_eq!(parse_program("out 1"), Err(QueryError::BadProgram));
        assert_eq!(parse_program("start a; start b"), Err(QueryError::BadProgram));
        assert!(matches!(parse_program("start a; jump 2"), Err(QueryError::Parse { index: 1, .. })));
        assert!(matches!(parse_program("start a; where 1 > 2"), Err(QueryError::Parse { .. })));
        let text: Vec<String> = p.iter().map(|i| i.to_string()).collect();
        assert_eq!(text.join("; "), "start Alice; out 2; where 1 >= 0.5");
    }

    #[test]
    fn filter_passes_indicators_through() {
        let v = ShareVector::zeros(2, 3);
        assert_eq!(filter(IndicatorVector(v.clone())), v);
    }

    fn merged_example(seed: u64) -> (Mpc, MergedUniverse, Vec<crate::kgstore::KnowledgeGraph>) {
        let kgs = crate::fixtures::example_pair();
        let mut m = Mpc::new(2, crate::numeric::FixedPointConfig::default(), seed).unwrap();
        let u = crate::merge::merge_kgs(&mut m, &kgs, None, &Default::default(), seed).unwrap();
        (m, u, kgs)
    }

    fn secure(m: &mut Mpc, u: &MergedUniverse, src: &str) -> Vec<String> {
        run_query(m, u, &parse_program(src).unwrap()).unwrap().entities
    }

    #[test]
    fn example_queries_match_union_oracle() {
        let (mut m, u, kgs) = merged_example(11);
        let oracle = PlainGraph::from_parts(&u, &kgs);
        for (src, want) in [
            ("start Alice; out 2", vec!["Jim Butler"]),
            // C1 comes from A's edge, C2 only through B's copy of the person.
            ("start Alice; out 2; out 1", vec!["C1", "C2"]),
            ("start Bob; out 2", vec![]),
            ("start Sam; out 2; out 1", vec!["C1", "C2"]),
            ("start C2; in 1", vec!["Jim Butler", "Lee"]),
            ("start *; where 1 >= 0.75", vec!["Alice", "Jim Butler"]),
            ("start *; out *; where 2 = 0", vec!["Lee"]),
            ("start *; where 1 < 0.4", vec!["Lee", "Sam"]),
        ] {
            let got = secure(&mut m, &u, src);
            let o: Vec<String> = oracle.run(&u, &parse_program(src).unwrap()).unwrap().into_iter().collect();
            assert_eq!(got, want, "{src}");
            assert_eq!(o, want, "oracle {src}");
        }
    }

    #[test]
    fn only_the_final_locations_are_output() {
        let (mut m, u, _) = merged_example(12);
        m.take_transcript();
        secure(&mut m, &u, "start Alice; out 2; out 1; where 1 >= 0.5");
        let t = m.transcript();
        assert_eq!(t.count_kind(MessageKind::Output), 2);
        assert_eq!(t.count_tag("query.result"), 2);
        assert!(t.disallowed(&crate::runtime::Disclosure::ALLOWED).is_empty());
    }

    #[test]
    fn resolution_errors() {
        let (mut m, u, _) = merged_example(13);
        let run = |m: &mut Mpc, s: &str| run_query(m, &u, &parse_program(s).unwrap());
        assert_eq!(run(&mut m, "start Nobody"), Err(QueryError::UnknownEntityName("Nobody".into())));
        assert_eq!(run(&mut m, "start Alice; out 9"), Err(QueryError::UnknownRelation("9".into())));
        assert_eq!(run(&mut m, "start Alice; where 3 >= 0"), Err(QueryError::BadSlot(3)));
        // Local names resolve through the member map.
        assert_eq!(run(&mut m, "start Butler; out 1").unwrap().entities, vec!["C1".to_string(), "C2".to_string()]);
    }
}
