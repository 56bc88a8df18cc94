//! Plaintext merge over pooled inputs: exact key intersection, greedy Dice
//! linking and the merge rules in double precision. Mirrors the grouping and
//! naming of [`merge_kgs`](super::merge_kgs).

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::{agree_schema, plain_merge, MergeError, MergeOptions, MergePolicy, UnionFind};
use crate::kgstore::{KnowledgeGraph, PlainValue, PropertyCell};
use crate::merge::linking::{dice, trigram_features};
use crate::runtime::PartyId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlainEntity {
    pub name: String,
    pub members: BTreeMap<PartyId, String>,
    /// Merged values of common entities; `None` for single-owner rows.
    pub row: Option<Vec<f64>>,
}

pub fn plain_universe(
    kgs: &[KnowledgeGraph],
    policy: Option<&MergePolicy>,
    opts: &MergeOptions,
) -> Result<Vec<PlainEntity>, MergeError> {
    let schema = agree_schema(kgs)?;
    let policy = policy.cloned().unwrap_or_else(|| MergePolicy::default_for(&schema));
    policy.validate(&schema)?;
    let n = kgs.len();
    let mut nodes: Vec<(PartyId, String, String)> = Vec::new();
    let mut by_key: Vec<HashMap<String, usize>> = vec![HashMap::new(); n];
    for kg in kgs {
        for name in kg.entities() {
            let key = kg.key_of(name);
            if by_key[kg.party.index()].insert(key.clone(), nodes.len()).is_some() {
                return Err(MergeError::DuplicateKey { party: kg.party, key });
            }
            nodes.push((kg.party, name.to_string(), key));
        }
    }
    let mut uf = UnionFind((0..nodes.len()).collect());
    for i in 0..n {
        for j in i + 1..n {
            let mut keys_i: Vec<&String> = by_key[i].keys().collect();
            let mut keys_j: Vec<&String> = by_key[j].keys().collect();
            keys_i.sort();
            keys_j.sort();
            for k in keys_i.iter().filter(|k| by_key[j].contains_key(**k)) {
                uf.union(by_key[i][*k], by_key[j][*k]);
            }
            if !opts.link {
                continue;
            }
            let targets: Vec<&String> = keys_i.iter().copied().filter(|k| !by_key[j].contains_key(*k)).collect();
            let mut available: Vec<&String> = keys_j.iter().copied().filter(|k| !by_key[i].contains_key(*k)).collect();
            for t in targets {
                let ft = trigram_features(t, opts.feature_dim);
                let mut best: Option<(usize, f64)> = None;
                for (c, key) in available.iter().enumerate() {
                    let s = dice(&ft, &trigram_features(key, opts.feature_dim));
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((c, s));
                    }
                }
                if let Some((c, s)) = best {
                    if s >= opts.link_threshold {
                        uf.union(by_key[i][t], by_key[j][available.remove(c)]);
                    }
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..nodes.len() {
        let r = uf.find(k);
        groups.entry(r).or_default().push(k);
    }
    let mut keyed: Vec<(String, Vec<usize>)> = groups
        .into_values()
        .map(|m| (m.iter().map(|&x| nodes[x].2.clone()).min().expect("non-empty"), m))
        .collect();
    keyed.sort();
    keyed
        .into_iter()
        .map(|(key, members)| {
            let rep = members
                .iter()
                .copied()
                .filter(|&m| nodes[m].2 == key)
                .min_by_key(|&m| nodes[m].0)
                .expect("key comes from a member");
            let name = kgs[nodes[rep].0.index()].full_name(&nodes[rep].1).to_string();
            let members: BTreeMap<PartyId, String> = members.iter().map(|&m| (nodes[m].0, nodes[m].1.clone())).collect();
            let row = if members.len() < 2 {
                None
            } else {
                let merged = (1..=schema.len())
                    .map(|s| {
                        let slot = schema.slot(s).expect("slot");
                        let vals = members
                            .iter()
                            .map(|(p, l)| plain_value(&kgs[p.index()], l, s, &slot.categories))
                            .collect::<Result<Vec<f64>, _>>()?;
                        Ok(plain_merge(&policy.rules[s - 1], &vals, slot.categories.len()))
                    })
                    .collect::<Result<Vec<f64>, MergeError>>()?;
                Some(merged)
            };
            Ok(PlainEntity { name, members, row })
        })
        .collect()
}

/// Categorical cells map to their index in the agreed category list.
fn plain_value(kg: &KnowledgeGraph, local: &str, slot: usize, categories: &[String]) -> Result<f64, MergeError> {
    let missing = || MergeError::MissingRow(local.to_string());
    match kg.row(local).and_then(|r| r.get(slot - 1)).ok_or_else(missing)? {
        PropertyCell::Plain(PlainValue::Number(x)) => Ok(*x),
        PropertyCell::Plain(PlainValue::Category(c)) => {
            categories.iter().position(|k| k == c).map(|i| i as f64).ok_or_else(missing)
        }
        PropertyCell::Shared(_) => Err(missing()),
    }
}
