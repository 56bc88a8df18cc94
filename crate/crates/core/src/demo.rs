//! Guarantee-loop screening: before bank B adds the guarantee
//! `guarantor -> guaranteed`, check whether `guaranteed` already reaches
//! `guarantor` through existing guarantees, which would close a loop.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::kgstore::KnowledgeGraph;
use crate::merge::MergedUniverse;
use crate::mpc::Mpc;
use crate::query::{run_query, Instruction, PlainGraph, QueryError};

pub const GUARANTEE_RELATION: &str = "guarantees";
pub const DEFAULT_LOOP_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Allow,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopCheck {
    pub verdict: Verdict,
    /// Shortest existing path length that the new edge would close.
    pub depth: Option<usize>,
    pub oracle: Verdict,
}

fn program(start: &str, hops: usize) -> Vec<Instruction> {
    std::iter::once(Instruction::Start(Some(start.to_string())))
        .chain((0..hops).map(|_| Instruction::Out(Some(GUARANTEE_RELATION.to_string()))))
        .collect()
}

/// Secure check on the merged universe: one query per depth, each opening
/// only its final location set. The plaintext verdict from the union graph
/// is computed alongside for comparison.
pub fn check_guarantee_loop(
    mpc: &mut Mpc,
    universe: &MergedUniverse,
    originals: &[KnowledgeGraph],
    guarantor: &str,
    guaranteed: &str,
    max_depth: usize,
) -> Result<LoopCheck, QueryError> {
    let known = |name: &str| universe.id_of(name).is_some();
    let has_relation = universe.relations.id(GUARANTEE_RELATION).is_some();
    if !(known(guarantor) && known(guaranteed) && has_relation) {
        return Ok(LoopCheck {
            verdict: Verdict::Allow,
            depth: None,
            oracle: Verdict::Allow,
        });
    }
    let plain = PlainGraph::from_parts(universe, originals);
    let mut depth = None;
    let mut oracle_depth = None;
    for hops in 1..=max_depth {
        let p = program(guaranteed, hops);
        if depth.is_none() && run_query(mpc, universe, &p)?.entities.iter().any(|e| e == guarantor) {
            depth = Some(hops);
        }
        if oracle_depth.is_none() && plain.run(universe, &p)?.contains(guarantor) {
            oracle_depth = Some(hops);
        }
    }
    let verdict = |d: Option<usize>| if d.is_some() { Verdict::Reject } else { Verdict::Allow };
    Ok(LoopCheck {
        verdict: verdict(depth),
        depth,
        oracle: verdict(oracle_depth),
    })
}

/// Plaintext reachability on one party's own graph, for the single-bank view.
pub fn local_loop_verdict(kg: &KnowledgeGraph, guarantor: &str, guaranteed: &str, max_depth: usize) -> Verdict {
    let mut frontier: BTreeSet<&str> = [guaranteed].into();
    for _ in 0..max_depth {
        frontier = kg
            .triples
            .iter()
            .filter(|t| t.relation == GUARANTEE_RELATION && frontier.contains(t.head.as_str()))
            .map(|t| t.tail.as_str())
            .collect();
        if frontier.contains(guarantor) {
            return Verdict::Reject;
        }
    }
    Verdict::Allow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{guarantee_banks, PROPOSED_GUARANTEE};
    use crate::kgstore::Schema;
    use crate::numeric::FixedPointConfig;
    use crate::runtime::PartyId;

    #[test]
    fn merged_view_rejects_and_single_view_allows() {
        let kgs = guarantee_banks();
        let mut m = Mpc::new(2, FixedPointConfig::default(), 5).unwrap();
        let u = crate::merge::merge_kgs(&mut m, &kgs, None, &Default::default(), 5).unwrap();
        let (g, t) = PROPOSED_GUARANTEE;
        let c = check_guarantee_loop(&mut m, &u, &kgs, g, t, DEFAULT_LOOP_DEPTH).unwrap();
        assert_eq!(c.verdict, Verdict::Reject);
        assert_eq!(c.oracle, Verdict::Reject);
        assert_eq!(c.depth, Some(2));
        assert_eq!(local_loop_verdict(&kgs[1], g, t, DEFAULT_LOOP_DEPTH), Verdict::Allow);
    }

    #[test]
    fn empty_graph_allows() {
        let schema = Schema::new(vec![]);
        let kgs = vec![
            KnowledgeGraph::new(PartyId(1), schema.clone()),
            KnowledgeGraph::new(PartyId(2), schema),
        ];
        let mut m = Mpc::new(2, FixedPointConfig::default(), 6).unwrap();
        let u = crate::merge::merge_kgs(&mut m, &kgs, None, &Default::default(), 6).unwrap();
        let c = check_guarantee_loop(&mut m, &u, &kgs, "E3", "E1", 3).unwrap();
        assert_eq!(c.verdict, Verdict::Allow);
        assert_eq!(local_loop_verdict(&kgs[0], "E3", "E1", 3), Verdict::Allow);
    }
}
