//! Private KG merging: PSI alignment, secure linking and type-aware
//! property merging into one global entity space.

pub mod linking;
pub mod psi;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{
    load_saved, save_kg, KgError, KnowledgeGraph, PlainValue, PropertyCell, PropertyKind, PropertySlot, RelationDict, Schema,
};
use crate::mpc::{Mpc, MpcError, ShareVector};
use crate::numeric::{FixedPointConfig, RingValue};
use crate::runtime::{PartyId, ProtocolError};

pub use linking::{dice, link_entities, trigram_features, trigrams, Link};
pub use psi::psi_align;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("slot {slot}: rule {rule} is incompatible with a {kind:?} property")]
    IncompatibleRule {
        slot: String,
        rule: String,
        kind: PropertyKind,
    },
    #[error("weights must be one per row and sum to 1 ({0})")]
    BadWeights(String),
    #[error("policy has {policy} rules for {slots} slots")]
    PolicyLength { policy: usize, slots: usize },
    #[error("party schemas disagree: {0}")]
    SchemaConflict(String),
    #[error("party {party} has two entities with key {key:?}")]
    DuplicateKey { party: PartyId, key: String },
    #[error("{0} knowledge graphs for an engine of {1} parties")]
    PartyCount(usize, usize),
    #[error("row of {0:?} is missing or already shared")]
    MissingRow(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Merging rule of one property slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum MergeRule {
    Max,
    Min,
    Average,
    /// Public weights, one per contributing row in party order.
    WeightedAverage { weights: Vec<f64> },
    Majority,
}

impl MergeRule {
    pub fn name(&self) -> &'static str {
        match self {
            MergeRule::Max => "max",
            MergeRule::Min => "min",
            MergeRule::Average => "average",
            MergeRule::WeightedAverage { .. } => "weighted-average",
            MergeRule::Majority => "majority",
        }
    }

    fn compatible(&self, kind: PropertyKind) -> bool {
        matches!(self, MergeRule::Majority) != kind.is_numeric()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergePolicy {
    pub rules: Vec<MergeRule>,
}

impl MergePolicy {
    /// Average for numeric slots, majority for categorical ones.
    pub fn default_for(schema: &Schema) -> Self {
        Self {
            rules: schema
                .slots
                .iter()
                .map(|s| {
                    if s.kind.is_numeric() {
                        MergeRule::Average
                    } else {
                        MergeRule::Majority
                    }
                })
                .collect(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), MergeError> {
        if self.rules.len() != schema.len() {
            return Err(MergeError::PolicyLength {
                policy: self.rules.len(),
                slots: schema.len(),
            });
        }
        for (rule, slot) in self.rules.iter().zip(&schema.slots) {
            if !rule.compatible(slot.kind) {
                return Err(MergeError::IncompatibleRule {
                    slot: slot.name.clone(),
                    rule: rule.name().into(),
                    kind: slot.kind,
                });
            }
        }
        Ok(())
    }
}

/// An owner's row in shared form: one share vector per slot, of length 1
/// for numeric slots and one-hot over the categories for categorical ones.
#[derive(Debug, Clone)]
pub struct SharedRow {
    pub owner: PartyId,
    pub cells: Vec<ShareVector>,
}

fn plain_encoding(slot: &PropertySlot, cell: &PlainValue, mpc: &Mpc) -> Result<Vec<RingValue>, MergeError> {
    match (slot.kind.is_numeric(), cell) {
        (true, PlainValue::Number(x)) => Ok(vec![mpc.cfg().encode(*x).map_err(MpcError::from)?]),
        (false, PlainValue::Category(c)) => {
            let idx = slot.category_index(c).ok_or_else(|| KgError::UnknownCategory {
                slot: slot.name.clone(),
                value: c.clone(),
            })?;
            Ok((0..slot.categories.len()).map(|k| RingValue((k == idx) as u64)).collect())
        }
        _ => Err(KgError::SchemaMismatch(format!("slot {} holds a value of the wrong kind", slot.name)).into()),
    }
}

/// Shares the owners' plaintext rows in one round.
pub fn share_rows(
    mpc: &mut Mpc,
    schema: &Schema,
    rows: &[(PartyId, Vec<PlainValue>)],
) -> Result<Vec<SharedRow>, MergeError> {
    let mut items = Vec::new();
    let mut lens = Vec::new();
    for (owner, row) in rows {
        let mut flat = Vec::new();
        let mut l = Vec::new();
        for (slot, cell) in schema.slots.iter().zip(row) {
            let enc = plain_encoding(slot, cell, mpc)?;
            l.push(enc.len());
            flat.extend(enc);
        }
        items.push((*owner, flat));
        lens.push(l);
    }
    let shared = mpc.input_many(&items)?;
    Ok(shared
        .into_iter()
        .zip(lens)
        .zip(rows)
        .map(|((v, l), (owner, _))| {
            let mut off = 0;
            let cells = l
                .into_iter()
                .map(|len| {
                    let c = v.slice(off, len);
                    off += len;
                    c
                })
                .collect();
            SharedRow { owner: *owner, cells }
        })
        .collect())
}

/// Extra fraction bits for averaging weights. A convex combination of
/// values below `B` stays below `B`, so `value * weight` needs at most
/// `bound_bits + 2f + k` bits; one bit is kept as truncation headroom.
fn averaging_bits(cfg: &FixedPointConfig) -> u32 {
    62u32.saturating_sub(cfg.bound_bits() + 2 * cfg.frac_bits + 1)
}

fn fine_weight(w: f64, bits: u32) -> RingValue {
    RingValue::from_signed((w * 2f64.powi(bits as i32)).round() as i64)
}

/// Merges the rows of one common entity slot by slot. Numeric results are
/// fixed-point values, categorical results the encoded category index.
pub fn merge_properties(
    mpc: &mut Mpc,
    schema: &Schema,
    rows: &[SharedRow],
    policy: &MergePolicy,
) -> Result<ShareVector, MergeError> {
    policy.validate(schema)?;
    let cfg = *mpc.cfg();
    let mut out: Vec<ShareVector> = Vec::with_capacity(schema.len());
    for (s, (slot, rule)) in schema.slots.iter().zip(&policy.rules).enumerate() {
        let cells: Vec<&ShareVector> = rows.iter().map(|r| &r.cells[s]).collect();
        let m = cells.len();
        if let MergeRule::WeightedAverage { weights } = rule {
            let total: f64 = weights.iter().sum();
            if weights.len() != m || (total - 1.0).abs() > 1e-9 {
                return Err(MergeError::BadWeights(format!(
                    "slot {}: {} weights summing to {total} for {m} rows",
                    slot.name,
                    weights.len()
                )));
            }
        }
        if m == 1 && slot.kind.is_numeric() {
            out.push(cells[0].clone());
            continue;
        }
        let merged = match rule {
            MergeRule::Average => {
                let mut sum = cells[0].clone();
                for c in &cells[1..] {
                    sum = mpc.add(&sum, c)?;
                }
                let k = averaging_bits(&cfg);
                let scaled = mpc.scale_public(&sum, fine_weight(1.0 / m as f64, cfg.frac_bits + k));
                mpc.truncate(&scaled, cfg.frac_bits + k)?
            }
            MergeRule::WeightedAverage { weights } => {
                let k = averaging_bits(&cfg);
                let mut acc = ShareVector::zeros(mpc.n(), 1);
                for (c, &w) in cells.iter().zip(weights) {
                    let scaled = mpc.scale_public(c, fine_weight(w, cfg.frac_bits + k));
                    acc = mpc.add(&acc, &scaled)?;
                }
                mpc.truncate(&acc, cfg.frac_bits + k)?
            }
            MergeRule::Max | MergeRule::Min => {
                let all = ShareVector::concat(&cells);
                let (_, v) = if matches!(rule, MergeRule::Max) {
                    mpc.argmax(&all)?
                } else {
                    mpc.argmin(&all)?
                };
                v
            }
            MergeRule::Majority => {
                let mut counts = cells[0].clone();
                for c in &cells[1..] {
                    counts = mpc.add(&counts, c)?;
                }
                let (idx, _) = mpc.argmax(&counts)?;
                // The winning index is already public through the comparison
                // bits; party 1 re-shares it so the stored cell is a share.
                mpc.input(PartyId(1), &[cfg.encode(idx as f64).map_err(MpcError::from)?])?
            }
        };
        out.push(merged);
    }
    let refs: Vec<&ShareVector> = out.iter().collect();
    Ok(ShareVector::concat(&refs))
}

/// Plaintext reference of a merge rule on decoded inputs.
pub fn plain_merge(rule: &MergeRule, values: &[f64], categories: usize) -> f64 {
    match rule {
        MergeRule::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        MergeRule::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        MergeRule::Average => values.iter().sum::<f64>() / values.len() as f64,
        MergeRule::WeightedAverage { weights } => values.iter().zip(weights).map(|(v, w)| v * w).sum(),
        MergeRule::Majority => {
            let mut counts = vec![0usize; categories];
            for &v in values {
                counts[v as usize] += 1;
            }
            let mut best = 0;
            for (k, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = k;
                }
            }
            best as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Aligned,
    Linked,
}

/// One matched pair between two parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub left: (PartyId, String),
    pub right: (PartyId, String),
    pub kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

/// Entity of the merged universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub global_id: usize,
    /// Display name used in every party's merged view.
    pub name: String,
    pub key: String,
    /// Local names by owning party.
    pub members: BTreeMap<PartyId, String>,
}

impl Entity {
    pub fn owners(&self) -> BTreeSet<PartyId> {
        self.members.keys().copied().collect()
    }

    pub fn is_common(&self) -> bool {
        self.members.len() >= 2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeOptions {
    pub link: bool,
    pub link_threshold: f64,
    pub feature_dim: usize,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            link: true,
            link_threshold: linking::DEFAULT_LINK_THRESHOLD,
            feature_dim: linking::DEFAULT_FEATURE_DIM,
        }
    }
}

/// Result of merging: the global entity space and every party's view.
#[derive(Debug, Clone)]
pub struct MergedUniverse {
    pub entities: Vec<Entity>,
    pub ids: HashMap<String, usize>,
    /// Per-party tables after merging: entities renamed to their display
    /// names, common rows replaced by shares.
    pub views: Vec<KnowledgeGraph>,
    pub schema: Schema,
    pub relations: RelationDict,
    pub matches: Vec<MatchedPair>,
    pub common: BTreeSet<String>,
    pub policy: MergePolicy,
}

impl MergedUniverse {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn parties(&self) -> usize {
        self.views.len()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.id_of(name).map(|i| &self.entities[i])
    }

    /// Shares of a common entity's merged row, one vector per party.
    pub fn shared_row(&self, name: &str) -> Option<ShareVector> {
        let parts = self
            .views
            .iter()
            .map(|v| {
                v.row(name)?
                    .iter()
                    .map(|c| match c {
                        PropertyCell::Shared(x) => Some(*x),
                        PropertyCell::Plain(_) => None,
                    })
                    .collect::<Option<Vec<_>>>()
            })
            .collect::<Option<Vec<_>>>()?;
        ShareVector::from_parts(parts).ok()
    }

    /// Shares of one slot (1-based) over every global entity. Common rows use
    /// the stored shares; a private entity's owner holds its value (category
    /// index for categorical slots) as its share, the others hold zero.
    pub fn property_column(&self, slot: usize, cfg: &FixedPointConfig) -> Result<ShareVector, MpcError> {
        let n = self.parties();
        let mut parts = vec![vec![RingValue::ZERO; self.len()]; n];
        for e in &self.entities {
            for (p, view) in self.views.iter().enumerate() {
                match view.row(&e.name).and_then(|r| r.get(slot - 1)) {
                    Some(PropertyCell::Shared(v)) => parts[p][e.global_id] = *v,
                    Some(PropertyCell::Plain(_)) => {
                        let x = view.plain_number(&e.name, slot).expect("declared category");
                        parts[p][e.global_id] = cfg.encode(x)?;
                    }
                    None => {}
                }
            }
        }
        ShareVector::from_parts(parts)
    }

    /// JSON report: matched pairs, rules per slot and the global id mapping.
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "entities": self.entities.iter().map(|e| serde_json::json!({
                "global_id": e.global_id,
                "name": e.name,
                "owners": e.owners().iter().map(|p| p.0).collect::<Vec<_>>(),
                "local_names": e.members.iter().map(|(p, n)| (p.to_string(), n.clone())).collect::<BTreeMap<_, _>>(),
            })).collect::<Vec<_>>(),
            "matches": self.matches,
            "rules": self.schema.slots.iter().zip(&self.policy.rules).map(|(s, r)| serde_json::json!({
                "slot": s.name,
                "kind": s.kind,
                "rule": r,
            })).collect::<Vec<_>>(),
            "relations": self.relations.labels(),
        })
    }
}

/// Agreed schema: slots must match by name and kind; category lists are
/// the sorted union.
fn agree_schema(kgs: &[KnowledgeGraph]) -> Result<Schema, MergeError> {
    let first = &kgs[0].schema;
    let mut slots = first.slots.clone();
    for kg in &kgs[1..] {
        if kg.schema.len() != slots.len() {
            return Err(MergeError::SchemaConflict(format!(
                "{} has {} slots, {} has {}",
                kgs[0].party,
                slots.len(),
                kg.party,
                kg.schema.len()
            )));
        }
        for (s, o) in slots.iter_mut().zip(&kg.schema.slots) {
            if s.name != o.name || s.kind != o.kind {
                return Err(MergeError::SchemaConflict(format!("slot {} vs {}", s.name, o.name)));
            }
            let mut set: BTreeSet<String> = s.categories.drain(..).collect();
            set.extend(o.categories.iter().cloned());
            s.categories = set.into_iter().collect();
        }
    }
    Ok(Schema::new(slots))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Merges the parties' KGs. Pairwise PSI aligns identical keys, linking
/// matches remaining entities, transitive closure forms the global
/// entities, and common rows are merged and stored as shares by every party.
pub fn merge_kgs(
    mpc: &mut Mpc,
    kgs: &[KnowledgeGraph],
    policy: Option<&MergePolicy>,
    opts: &MergeOptions,
    seed: u64,
) -> Result<MergedUniverse, MergeError> {
    let n = mpc.n();
    if kgs.len() != n {
        return Err(MergeError::PartyCount(kgs.len(), n));
    }
    let schema = agree_schema(kgs)?;
    let policy = policy.cloned().unwrap_or_else(|| MergePolicy::default_for(&schema));
    policy.validate(&schema)?;

    // Nodes are (party, local entity); keys per party must be unique.
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
    let mut matches = Vec::new();

    for i in 0..n {
        for j in i + 1..n {
            let (pi, pj) = (PartyId::from_index(i), PartyId::from_index(j));
            let mut keys_i: Vec<String> = by_key[i].keys().cloned().collect();
            let mut keys_j: Vec<String> = by_key[j].keys().cloned().collect();
            keys_i.sort();
            keys_j.sort();
            let (common, t) = psi_align(pi, &keys_i, pj, &keys_j, seed)?;
            mpc.absorb(t);
            let common_set: BTreeSet<&String> = common.iter().collect();
            for key in &common {
                let (a, b) = (by_key[i][key], by_key[j][key]);
                uf.union(a, b);
                matches.push(MatchedPair {
                    left: (pi, nodes[a].1.clone()),
                    right: (pj, nodes[b].1.clone()),
                    kind: MatchKind::Aligned,
                    similarity: None,
                });
            }
            if opts.link {
                let targets: Vec<String> = keys_i.iter().filter(|k| !common_set.contains(k)).cloned().collect();
                let cands: Vec<String> = keys_j.iter().filter(|k| !common_set.contains(k)).cloned().collect();
                let links = link_entities(mpc, pi, &targets, pj, &cands, opts.feature_dim, opts.link_threshold)?;
                for l in links {
                    let (a, b) = (by_key[i][&targets[l.target]], by_key[j][&cands[l.candidate]]);
                    uf.union(a, b);
                    matches.push(MatchedPair {
                        left: (pi, nodes[a].1.clone()),
                        right: (pj, nodes[b].1.clone()),
                        kind: MatchKind::Linked,
                        similarity: Some(l.similarity),
                    });
                }
            }
        }
    }

    // Groups keyed by their smallest canonical key.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..nodes.len() {
        let r = uf.find(k);
        groups.entry(r).or_default().push(k);
    }
    let mut keyed: Vec<(String, Vec<usize>)> = groups
        .into_values()
        .map(|members| {
            let key = members.iter().map(|&m| nodes[m].2.clone()).min().expect("non-empty group");
            (key, members)
        })
        .collect();
    keyed.sort();

    let mut entities = Vec::with_capacity(keyed.len());
    let mut ids = HashMap::new();
    let mut views: Vec<KnowledgeGraph> = kgs.to_vec();
    for v in &mut views {
        v.schema = schema.clone();
    }
    for (gid, (key, members)) in keyed.iter().enumerate() {
        let rep = members
            .iter()
            .copied()
            .filter(|&m| &nodes[m].2 == key)
            .min_by_key(|&m| nodes[m].0)
            .expect("key comes from a member");
        let (rep_party, rep_local, _) = &nodes[rep];
        let name = kgs[rep_party.index()].full_name(rep_local).to_string();
        let mut member_map = BTreeMap::new();
        for &m in members {
            let (p, local, _) = &nodes[m];
            member_map.insert(*p, local.clone());
            views[p.index()].rename(local, &name);
        }
        ids.insert(name.clone(), gid);
        entities.push(Entity {
            global_id: gid,
            name,
            key: key.clone(),
            members: member_map,
        });
    }

    let common: BTreeSet<String> = entities.iter().filter(|e| e.is_common()).map(|e| e.name.clone()).collect();
    // Share every common row in one round, then merge entity by entity.
    let mut plain_rows = Vec::new();
    let mut spans = Vec::new();
    for e in entities.iter().filter(|e| e.is_common()) {
        let start = plain_rows.len();
        for &p in e.members.keys() {
            let row = views[p.index()]
                .row(&e.name)
                .ok_or_else(|| MergeError::MissingRow(e.name.clone()))?
                .iter()
                .map(|c| match c {
                    PropertyCell::Plain(v) => Ok(v.clone()),
                    PropertyCell::Shared(_) => Err(MergeError::MissingRow(e.name.clone())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            plain_rows.push((p, row));
        }
        spans.push((e.name.clone(), start..plain_rows.len()));
    }
    let shared = share_rows(mpc, &schema, &plain_rows)?;
    for (name, span) in spans {
        let merged = merge_properties(mpc, &schema, &shared[span], &policy)?;
        for p in PartyId::all(n) {
            views[p.index()].to_shared(&name, merged.part(p).to_vec(), &common)?;
        }
    }

    Ok(MergedUniverse {
        entities,
        ids,
        views,
        relations: RelationDict::from_kgs(kgs),
        schema,
        matches,
        common,
        policy,
    })
}

pub const UNIVERSE_FILE: &str = "universe.json";

#[derive(Serialize, Deserialize)]
struct UniverseMeta {
    parties: usize,
    entities: Vec<Entity>,
    matches: Vec<MatchedPair>,
    common: BTreeSet<String>,
    policy: MergePolicy,
}

/// Directory of party `p`'s merged view inside a store.
pub fn party_dir(dir: &Path, p: PartyId) -> PathBuf {
    dir.join(format!("party{}", p.0))
}

/// Writes every party's view (shares included) and the public entity map.
pub fn save_universe(u: &MergedUniverse, dir: &Path) -> Result<(), MergeError> {
    for v in &u.views {
        save_kg(v, &party_dir(dir, v.party))?;
    }
    let meta = UniverseMeta {
        parties: u.parties(),
        entities: u.entities.clone(),
        matches: u.matches.clone(),
        common: u.common.clone(),
        policy: u.policy.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("serializable metadata");
    std::fs::write(dir.join(UNIVERSE_FILE), text + "\n").map_err(KgError::from)?;
    Ok(())
}

pub fn load_universe(dir: &Path) -> Result<MergedUniverse, MergeError> {
    let path = dir.join(UNIVERSE_FILE);
    let text = std::fs::read_to_string(&path).map_err(KgError::from)?;
    let meta: UniverseMeta = serde_json::from_str(&text).map_err(|e| KgError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let views = PartyId::all(meta.parties)
        .map(|p| load_saved(p, &party_dir(dir, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let schema = views.first().map(|v| v.schema.clone()).unwrap_or_default();
    let ids = meta.entities.iter().map(|e| (e.name.clone(), e.global_id)).collect();
    Ok(MergedUniverse {
        relations: RelationDict::from_kgs(&views),
        entities: meta.entities,
        ids,
        views,
        schema,
        matches: meta.matches,
        common: meta.common,
        policy: meta.policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::FixedPointConfig;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    #[test]
    fn average_of_ages() {
        let schema = Schema::new(vec![PropertySlot::discrete("age")]);
        let mut m = Mpc::new(2, cfg(), 1).unwrap();
        let rows = share_rows(
            &mut m,
            &schema,
            &[
                (PartyId(1), vec![PlainValue::Number(23.0)]),
                (PartyId(2), vec![PlainValue::Number(15.0)]),
            ],
        )
        .unwrap();
        let merged = merge_properties(&mut m, &schema, &rows, &MergePolicy::default_for(&schema)).unwrap();
        assert_eq!(cfg().decode(merged.reconstruct_local()[0]), 19.0);
    }

    #[test]
    fn majority_of_genders() {
        let schema = Schema::new(vec![PropertySlot::categorical("gender", &["F", "M"])]);
        let mut m = Mpc::new(3, cfg(), 2).unwrap();
        let g = |s: &str| vec![PlainValue::Category(s.into())];
        let rows = share_rows(&mut m, &schema, &[(PartyId(1), g("M")), (PartyId(2), g("F")), (PartyId(3), g("F"))])
            .unwrap();
        let merged = merge_properties(&mut m, &schema, &rows, &MergePolicy::default_for(&schema)).unwrap();
        let idx = cfg().decode(merged.reconstruct_local()[0]) as usize;
        assert_eq!(schema.slots[0].categories[idx], "F");
    }

    #[test]
    fn single_row_is_identity_and_rules_are_checked() {
        let schema = Schema::new(vec![PropertySlot::continuous("h"), PropertySlot::categorical("c", &["a", "b"])]);
        let mut m = Mpc::new(2, cfg(), 3).unwrap();
        let rows = share_rows(
            &mut m,
            &schema,
            &[(PartyId(1), vec![PlainValue::Number(1.25), PlainValue::Category("b".into())])],
        )
        .unwrap();
        let merged = merge_properties(&mut m, &schema, &rows, &MergePolicy::default_for(&schema)).unwrap();
        let dec: Vec<f64> = merged.reconstruct_local().iter().map(|&v| cfg().decode(v)).collect();
        assert_eq!(dec, vec![1.25, 1.0]);
        let bad = MergePolicy {
            rules: vec![MergeRule::Majority, MergeRule::Majority],
        };
        assert!(matches!(
            merge_properties(&mut m, &schema, &rows, &bad),
            Err(MergeError::IncompatibleRule { .. })
        ));
        let bad_w = MergePolicy {
            rules: vec![MergeRule::WeightedAverage { weights: vec![0.5] }, MergeRule::Majority],
        };
        assert!(matches!(
            merge_properties(&mut m, &schema, &rows, &bad_w),
            Err(MergeError::BadWeights(_))
        ));
    }

    #[test]
    fn numeric_rules_match_plaintext() {
        let schema = Schema::new(vec![
            PropertySlot::continuous("a"),
            PropertySlot::continuous("b"),
            PropertySlot::continuous("c"),
            PropertySlot::continuous("d"),
        ]);
        let policy = MergePolicy {
            rules: vec![
                MergeRule::Max,
                MergeRule::Min,
                MergeRule::Average,
                MergeRule::WeightedAverage {
                    weights: vec![0.2, 0.3, 0.5],
                },
            ],
        };
        let vals = [[1.5, -2.0, 3.0, 4.0], [0.5, 7.0, 1.0, -1.0], [2.5, 1.0, 2.0, 10.0]];
        let mut m = Mpc::new(3, cfg(), 4).unwrap();
        let rows: Vec<(PartyId, Vec<PlainValue>)> = vals
            .iter()
            .enumerate()
            .map(|(i, r)| (PartyId::from_index(i), r.iter().map(|&x| PlainValue::Number(x)).collect()))
            .collect();
        let shared = share_rows(&mut m, &schema, &rows).unwrap();
        let merged = merge_properties(&mut m, &schema, &shared, &policy).unwrap();
        for (s, v) in merged.reconstruct_local().iter().enumerate() {
            let col: Vec<f64> = vals.iter().map(|r| r[s]).collect();
            let want = plain_merge(&policy.rules[s], &col, 0);
            assert!((cfg().decode(*v) - want).abs() <= 2f64.powi(-15), "slot {s}");
        }
    }

    #[test]
    fn store_reloads_the_universe() {
        let kgs = crate::fixtures::example_pair();
        let mut m = Mpc::new(2, cfg(), 8).unwrap();
        let u = merge_kgs(&mut m, &kgs, None, &MergeOptions::default(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_universe(&u, dir.path()).unwrap();
        let back = load_universe(dir.path()).unwrap();
        assert_eq!(back.entities, u.entities);
        assert_eq!(back.views, u.views);
        assert_eq!(back.ids, u.ids);
        assert_eq!(back.relations, u.relations);
        assert_eq!(back.shared_row("Jim Butler"), u.shared_row("Jim Butler"));
    }

    #[test]
    fn plaintext_oracle_agrees_on_fixture() {
        let kgs = crate::fixtures::example_pair();
        let c = cfg();
        let mut m = Mpc::new(2, c, 12).unwrap();
        let u = merge_kgs(&mut m, &kgs, None, &MergeOptions::default(), 12).unwrap();
        let plain = oracle::plain_universe(&kgs, None, &MergeOptions::default()).unwrap();
        assert_eq!(plain.len(), u.len());
        for (p, e) in plain.iter().zip(&u.entities) {
            assert_eq!((&p.name, &p.members), (&e.name, &e.members));
            match (&p.row, u.shared_row(&e.name)) {
                (Some(want), Some(got)) => {
                    for (w, g) in want.iter().zip(got.reconstruct_local()) {
                        assert!((w - c.decode(g)).abs() <= c.ulp(), "{}", e.name);
                    }
                }
                (None, None) => {}
                other => panic!("row mismatch for {}: {other:?}", e.name),
            }
        }
    }
}
