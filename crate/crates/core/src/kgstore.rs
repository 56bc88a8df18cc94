//! Per-party knowledge graphs: a triple table plus a property table whose
//! cells are either plaintext or this party's additive share.
//!
//! Graph structure always stays local and plaintext. Only the property rows
//! of common entities become shared after merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::RingMatrix;
use crate::numeric::RingValue;
use crate::runtime::PartyId;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: entity {name:?} has no property row")]
    UnknownEntity { file: String, line: usize, name: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{0:?} is not a common entity")]
    NotCommonEntity(String),
    #[error("slot {slot}: unknown category {value:?}")]
    UnknownCategory { slot: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Continuous,
    Discrete,
    Categorical,
}

impl PropertyKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, PropertyKind::Categorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySlot {
    pub name: String,
    pub kind: PropertyKind,
    /// Ordered category labels of a categorical slot. Shared categorical
    /// cells hold the encoded index into this list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl PropertySlot {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: PropertyKind::Continuous,
            categories: Vec::new(),
        }
    }

    pub fn discrete(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: PropertyKind::Discrete,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: PropertyKind::Categorical,
            categories: categories.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub slots: Vec<PropertySlot>,
}

impl Schema {
    pub fn new(slots: Vec<PropertySlot>) -> Self {
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// 1-based slot lookup.
    pub fn slot(&self, slot: usize) -> Option<&PropertySlot> {
        slot.checked_sub(1).and_then(|i| self.slots.get(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlainValue {
    Number(f64),
    Category(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyCell {
    Plain(PlainValue),
    /// This party's share of the merged value.
    Shared(RingValue),
}

impl PropertyCell {
    pub fn number(x: f64) -> Self {
        PropertyCell::Plain(PlainValue::Number(x))
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, PropertyCell::Shared(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Full-name canonical key: lowercase with whitespace runs collapsed.
pub fn canonical_key(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub party: PartyId,
    pub triples: Vec<Triple>,
    pub properties: BTreeMap<String, Vec<PropertyCell>>,
    pub schema: Schema,
    /// Local name to full name, used for alignment keys.
    pub aliases: BTreeMap<String, String>,
}

impl KnowledgeGraph {
    pub fn new(party: PartyId, schema: Schema) -> Self {
        Self {
            party,
            triples: Vec::new(),
            properties: BTreeMap::new(),
            schema,
            aliases: BTreeMap::new(),
        }
    }

    pub fn with_entity(mut self, name: &str, row: Vec<PropertyCell>) -> Self {
        self.properties.insert(name.into(), row);
        self
    }

    pub fn with_triple(mut self, head: &str, relation: &str, tail: &str) -> Self {
        self.triples.push(Triple::new(head, relation, tail));
        self
    }

    pub fn with_alias(mut self, local: &str, full: &str) -> Self {
        self.aliases.insert(local.into(), full.into());
        self
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.properties.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    pub fn full_name<'a>(&'a self, local: &'a str) -> &'a str {
        self.aliases.get(local).map(String::as_str).unwrap_or(local)
    }

    pub fn key_of(&self, local: &str) -> String {
        canonical_key(self.full_name(local))
    }

    pub fn row(&self, entity: &str) -> Option<&[PropertyCell]> {
        self.properties.get(entity).map(Vec::as_slice)
    }

    pub fn relation_labels(&self) -> BTreeSet<&str> {
        self.triples.iter().map(|t| t.relation.as_str()).collect()
    }

    /// Plain value of a slot (1-based) as a number; categorical cells map to
    /// their category index. `None` for shared or missing cells.
    pub fn plain_number(&self, entity: &str, slot: usize) -> Option<f64> {
        let cell = self.row(entity)?.get(slot.checked_sub(1)?)?;
        match cell {
            PropertyCell::Plain(PlainValue::Number(x)) => Some(*x),
            PropertyCell::Plain(PlainValue::Category(c)) => {
                self.schema.slot(slot)?.category_index(c).map(|i| i as f64)
            }
            PropertyCell::Shared(_) => None,
        }
    }

    /// Structural checks: every triple endpoint has a row, rows match the
    /// schema, categorical values are declared.
    pub fn validate(&self) -> Result<(), KgError> {
        for (line, t) in self.triples.iter().enumerate() {
            for name in [&t.head, &t.tail] {
                if !self.properties.contains_key(name) {
                    return Err(KgError::UnknownEntity {
                        file: "triples".into(),
                        line: line + 1,
                        name: name.clone(),
                    });
                }
            }
        }
        for (entity, row) in &self.properties {
            if row.len() != self.schema.len() {
                return Err(KgError::SchemaMismatch(format!(
                    "row {entity:?} has {} cells, schema has {}",
                    row.len(),
                    self.schema.len()
                )));
            }
            for (cell, slot) in row.iter().zip(&self.schema.slots) {
                match cell {
                    PropertyCell::Plain(PlainValue::Category(c)) => {
                        if slot.kind != PropertyKind::Categorical {
                            return Err(KgError::SchemaMismatch(format!(
                                "slot {} of {entity:?} is numeric but holds {c:?}",
                                slot.name
                            )));
                        }
                        if slot.category_index(c).is_none() {
                            return Err(KgError::UnknownCategory {
                                slot: slot.name.clone(),
                                value: c.clone(),
                            });
                        }
                    }
                    PropertyCell::Plain(PlainValue::Number(_)) if slot.kind == PropertyKind::Categorical => {
                        return Err(KgError::SchemaMismatch(format!(
                            "slot {} of {entity:?} is categorical but holds a number",
                            slot.name
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Replaces (or creates) the row of a common entity by this party's
    /// shares of the merged values.
    pub fn to_shared(
        &mut self,
        entity: &str,
        shares: Vec<RingValue>,
        common: &BTreeSet<String>,
    ) -> Result<(), KgError> {
        if !common.contains(entity) {
            return Err(KgError::NotCommonEntity(entity.into()));
        }
        if shares.len() != self.schema.len() {
            return Err(KgError::SchemaMismatch(format!(
                "{} shares for a schema of {} slots",
                shares.len(),
                self.schema.len()
            )));
        }
        self.properties
            .insert(entity.into(), shares.into_iter().map(PropertyCell::Shared).collect());
        Ok(())
    }

    /// Renames an entity everywhere in this party's tables.
    pub fn rename(&mut self, from: &str, to: &str) {
        if from == to {
            return;
        }
        if let Some(row) = self.properties.remove(from) {
            self.properties.insert(to.into(), row);
        }
        for t in &mut self.triples {
            if t.head == from {
                t.head = to.into();
            }
            if t.tail == from {
                t.tail = to.into();
            }
        }
        if let Some(a) = self.aliases.remove(from) {
            self.aliases.insert(to.into(), a);
        }
    }

    /// Local plaintext 0/1 adjacency over the global id space.
    /// `Out`: `A[u][v] = 1` iff `u -r-> v`; `In` is the transpose.
    pub fn adjacency(
        &self,
        ids: &HashMap<String, usize>,
        universe: usize,
        relations: &RelationDict,
        relation: Option<u32>,
        dir: Direction,
    ) -> RingMatrix {
        let mut m = RingMatrix::zeros(universe, universe);
        for t in &self.triples {
            if let Some(r) = relation {
                if relations.id(&t.relation) != Some(r) {
                    continue;
                }
            }
            let (Some(&h), Some(&tl)) = (ids.get(&t.head), ids.get(&t.tail)) else {
                continue;
            };
            let (u, v) = match dir {
                Direction::Out => (h, tl),
                Direction::In => (tl, h),
            };
            m.data[u * universe + v] = RingValue(1);
        }
        m
    }

    /// Neighbour sets over all relations and both directions, by global id.
    pub fn undirected_neighbors(&self, ids: &HashMap<String, usize>, universe: usize) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); universe];
        for t in &self.triples {
            if let (Some(&h), Some(&tl)) = (ids.get(&t.head), ids.get(&t.tail)) {
                if h != tl {
                    out[h].insert(tl);
                    out[tl].insert(h);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

/// Public relation dictionary: the sorted union of relation labels, ids from
/// 1. Integer labels sort numerically before other labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RelationDict {
    labels: Vec<String>,
}

impl RelationDict {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        let mut labels: Vec<String> = set.into_iter().map(String::from).collect();
        labels.sort_by(|a, b| match (a.parse::<u64>(), b.parse::<u64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            _ => a.cmp(b),
        });
        Self { labels }
    }

    pub fn from_kgs(kgs: &[KnowledgeGraph]) -> Self {
        Self::from_labels(kgs.iter().flat_map(|k| k.relation_labels()))
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32 + 1)
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.labels.get(i as usize))
            .map(String::as_str)
    }

    /// Resolves a query token: a label first, else a numeric id.
    pub fn resolve(&self, token: &str) -> Option<u32> {
        self.id(token).or_else(|| {
            token
                .parse::<u32>()
                .ok()
                .filter(|&i| self.label(i).is_some())
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Options for [`load_kg`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub allow_self_loops: bool,
    pub aliases_path: Option<std::path::PathBuf>,
}

fn read_text(path: &Path) -> Result<String, KgError> {
    let mut s = String::new();
    fs::File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// Loads a party's triples (TSV) and properties (CSV with an `entity`
/// header column). A schema is inferred when `schema` is `None`: numeric
/// columns become continuous, others categorical.
pub fn load_kg(
    party: PartyId,
    triples_path: &Path,
    props_path: &Path,
    schema: Option<Schema>,
    opts: &LoadOptions,
) -> Result<KnowledgeGraph, KgError> {
    let props_text = read_text(props_path)?;
    let triples_text = read_text(triples_path)?;
    let aliases_text = match &opts.aliases_path {
        Some(p) => Some((file_label(p), read_text(p)?)),
        None => None,
    };
    parse_kg(
        party,
        (&file_label(triples_path), &triples_text),
        (&file_label(props_path), &props_text),
        aliases_text.as_ref().map(|(l, t)| (l.as_str(), t.as_str())),
        schema,
        opts.allow_self_loops,
    )
}

/// [`load_kg`] over in-memory file contents, each paired with a label used
/// in error messages.
pub fn parse_kg(
    party: PartyId,
    triples: (&str, &str),
    props: (&str, &str),
    aliases: Option<(&str, &str)>,
    schema: Option<Schema>,
    allow_self_loops: bool,
) -> Result<KnowledgeGraph, KgError> {
    let (props_file, props_text) = props;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(props_text.as_bytes());
    let headers: Vec<String> = if props_text.trim().is_empty() {
        Vec::new()
    } else {
        reader
            .headers()
            .map_err(|e| KgError::Parse {
                file: props_file.into(),
                line: 1,
                msg: e.to_string(),
            })?
            .iter()
            .map(String::from)
            .collect()
    };
    if !headers.is_empty() && headers[0] != "entity" {
        return Err(KgError::Parse {
            file: props_file.into(),
            line: 1,
            msg: "first column must be `entity`".into(),
        });
    }
    let mut raw_rows: Vec<(usize, String, Vec<String>)> = Vec::new();
    if !headers.is_empty() {
        for rec in reader.records() {
            let rec = rec.map_err(|e| KgError::Parse {
                file: props_file.into(),
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != headers.len() {
                return Err(KgError::Parse {
                    file: props_file.into(),
                    line,
                    msg: format!("expected {} fields, got {}", headers.len(), rec.len()),
                });
            }
            let entity = rec[0].to_string();
            if entity.is_empty() {
                return Err(KgError::Parse {
                    file: props_file.into(),
                    line,
                    msg: "empty entity name".into(),
                });
            }
            raw_rows.push((line, entity, rec.iter().skip(1).map(String::from).collect()));
        }
    }
    let columns = headers.len().saturating_sub(1);
    let mut schema = match schema {
        Some(s) => {
            if !headers.is_empty() && s.len() != columns {
                return Err(KgError::SchemaMismatch(format!(
                    "{props_file} has {columns} property columns, schema has {}",
                    s.len()
                )));
            }
            s
        }
        None => Schema::new(
            (0..columns)
                .map(|c| {
                    let numeric = raw_rows.iter().all(|(_, _, r)| r[c].parse::<f64>().is_ok());
                    let name = &headers[c + 1];
                    if numeric {
                        PropertySlot::continuous(name)
                    } else {
                        PropertySlot::categorical(name, &[])
                    }
                })
                .collect(),
        ),
    };
    // Categorical slots without declared labels take the sorted local values.
    for (c, slot) in schema.slots.iter_mut().enumerate() {
        if slot.kind == PropertyKind::Categorical && slot.categories.is_empty() {
            let set: BTreeSet<&str> = raw_rows.iter().map(|(_, _, r)| r[c].as_str()).collect();
            slot.categories = set.into_iter().map(String::from).collect();
        }
    }
    let mut kg = KnowledgeGraph::new(party, schema);
    for (line, entity, cells) in raw_rows {
        let mut row = Vec::with_capacity(cells.len());
        for (c, raw) in cells.iter().enumerate() {
            let slot = &kg.schema.slots[c];
            let cell = if slot.kind.is_numeric() {
                let x: f64 = raw.parse().map_err(|_| KgError::Parse {
                    file: props_file.into(),
                    line,
                    msg: format!("slot {} expects a number, got {raw:?}", slot.name),
                })?;
                PropertyCell::number(x)
            } else {
                if slot.category_index(raw).is_none() {
                    return Err(KgError::UnknownCategory {
                        slot: slot.name.clone(),
                        value: raw.clone(),
                    });
                }
                PropertyCell::Plain(PlainValue::Category(raw.clone()))
            };
            row.push(cell);
        }
        if kg.properties.insert(entity.clone(), row).is_some() {
            return Err(KgError::Parse {
                file: props_file.into(),
                line,
                msg: format!("duplicate entity {entity:?}"),
            });
        }
    }

    let (triples_file, triples_text) = triples;
    for (i, line) in triples_text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::Parse {
                file: triples_file.into(),
                line: lineno,
                msg: "expected head<TAB>relation<TAB>tail".into(),
            });
        }
        for name in [fields[0], fields[2]] {
            if !kg.properties.contains_key(name) {
                return Err(KgError::UnknownEntity {
                    file: triples_file.into(),
                    line: lineno,
                    name: name.into(),
                });
            }
        }
        if fields[0] == fields[2] && !allow_self_loops {
            return Err(KgError::Parse {
                file: triples_file.into(),
                line: lineno,
                msg: format!("self-loop on {:?}", fields[0]),
            });
        }
        kg.triples.push(Triple::new(fields[0], fields[1], fields[2]));
    }

    if let Some((aliases_file, text)) = aliases {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((local, full)) = line.split_once('\t') else {
                return Err(KgError::Parse {
                    file: aliases_file.into(),
                    line: i + 1,
                    msg: "expected local<TAB>full name".into(),
                });
            };
            let local = local.trim();
            if !kg.properties.contains_key(local) {
                return Err(KgError::UnknownEntity {
                    file: aliases_file.into(),
                    line: i + 1,
                    name: local.into(),
                });
            }
            kg.aliases.insert(local.into(), full.trim().into());
        }
    }
    Ok(kg)
}

const TRIPLES_FILE: &str = "triples.tsv";
const PROPS_FILE: &str = "props.csv";
const SHARES_FILE: &str = "shares.csv";
const SCHEMA_FILE: &str = "schema.json";
const ALIASES_FILE: &str = "aliases.tsv";

/// Writes the party's tables: plain rows to `props.csv`, shared rows to
/// `shares.csv` (`entity,slot,hexshare`), plus schema and aliases.
pub fn save_kg(kg: &KnowledgeGraph, dir: &Path) -> Result<(), KgError> {
    fs::create_dir_all(dir)?;
    let mut triples = String::new();
    for t in &kg.triples {
        triples.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
    }
    fs::write(dir.join(TRIPLES_FILE), triples)?;

    let mut props = csv::Writer::from_writer(Vec::new());
    let mut shares = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("entity")
        .chain(kg.schema.slots.iter().map(|s| s.name.as_str()))
        .collect();
    props.write_record(&header).map_err(csv_io)?;
    shares.write_record(["entity", "slot", "hexshare"]).map_err(csv_io)?;
    for (entity, row) in &kg.properties {
        if row.iter().all(PropertyCell::is_shared) && !row.is_empty() {
            for (slot, cell) in row.iter().enumerate() {
                if let PropertyCell::Shared(v) = cell {
                    shares
                        .write_record([entity.as_str(), &(slot + 1).to_string(), &v.to_hex()])
                        .map_err(csv_io)?;
                }
            }
            continue;
        }
        let mut rec = vec![entity.clone()];
        for cell in row {
            rec.push(match cell {
                PropertyCell::Plain(PlainValue::Number(x)) => format!("{x:?}"),
                PropertyCell::Plain(PlainValue::Category(c)) => c.clone(),
                PropertyCell::Shared(_) => {
                    return Err(KgError::SchemaMismatch(format!(
                        "row {entity:?} mixes plain and shared cells"
                    )))
                }
            });
        }
        props.write_record(&rec).map_err(csv_io)?;
    }
    fs::write(dir.join(PROPS_FILE), props.into_inner().map_err(|e| csv_io(e.into_error().into()))?)?;
    fs::write(dir.join(SHARES_FILE), shares.into_inner().map_err(|e| csv_io(e.into_error().into()))?)?;
    fs::write(
        dir.join(SCHEMA_FILE),
        serde_json::to_string_pretty(&kg.schema).expect("schema serializes"),
    )?;
    let mut aliases = String::new();
    for (l, f) in &kg.aliases {
        aliases.push_str(&format!("{l}\t{f}\n"));
    }
    fs::write(dir.join(ALIASES_FILE), aliases)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> KgError {
    KgError::Io(std::io::Error::other(e.to_string()))
}

/// Reads back a directory written by [`save_kg`].
pub fn load_saved(party: PartyId, dir: &Path) -> Result<KnowledgeGraph, KgError> {
    let schema: Schema = serde_json::from_str(&read_text(&dir.join(SCHEMA_FILE))?).map_err(|e| KgError::Parse {
        file: SCHEMA_FILE.into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let shared = parse_shares(&read_text(&dir.join(SHARES_FILE))?, schema.len())?;
    // Triples may reference shared entities; check endpoints after merging rows.
    let mut kg = parse_kg(
        party,
        (TRIPLES_FILE, ""),
        (PROPS_FILE, &read_text(&dir.join(PROPS_FILE))?),
        Some((ALIASES_FILE, "")),
        Some(schema),
        true,
    )?;
    for (entity, row) in shared {
        kg.properties.insert(entity, row.into_iter().map(PropertyCell::Shared).collect());
    }
    let triples = read_text(&dir.join(TRIPLES_FILE))?;
    for (i, line) in triples.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(KgError::Parse {
                file: TRIPLES_FILE.into(),
                line: i + 1,
                msg: "expected head<TAB>relation<TAB>tail".into(),
            });
        }
        kg.triples.push(Triple::new(f[0], f[1], f[2]));
    }
    for line in read_text(&dir.join(ALIASES_FILE))?.lines() {
        if let Some((l, f)) = line.split_once('\t') {
            kg.aliases.insert(l.into(), f.into());
        }
    }
    kg.validate()?;
    Ok(kg)
}

/// Parses a share file into complete rows.
pub fn parse_shares(text: &str, slots: usize) -> Result<BTreeMap<String, Vec<RingValue>>, KgError> {
    let mut partial: BTreeMap<String, Vec<Option<RingValue>>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for rec in reader.records() {
        let rec = rec.map_err(|e| KgError::Parse {
            file: SHARES_FILE.into(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |msg: String| KgError::Parse {
            file: SHARES_FILE.into(),
            line,
            msg,
        };
        if rec.len() != 3 {
            return Err(bad("expected entity,slot,hexshare".into()));
        }
        let slot: usize = rec[1].parse().map_err(|_| bad(format!("bad slot {:?}", &rec[1])))?;
        if slot == 0 || slot > slots {
            return Err(bad(format!("slot {slot} outside 1..={slots}")));
        }
        let v = RingValue::from_hex(&rec[2]).map_err(|e| bad(e.to_string()))?;
        partial.entry(rec[0].to_string()).or_insert_with(|| vec![None; slots])[slot - 1] = Some(v);
    }
    partial
        .into_iter()
        .map(|(e, row)| {
            let full: Option<Vec<RingValue>> = row.into_iter().collect();
            full.map(|r| (e.clone(), r))
                .ok_or_else(|| KgError::SchemaMismatch(format!("shared row {e:?} is incomplete")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(vec![PropertySlot::continuous("p1"), PropertySlot::discrete("p2")])
    }

    const A_TRIPLES: &str = "Alice\t1\tC1\nAlice\t2\tJim\nBob\t1\tC1\nJim\t1\tC1\n";
    const A_PROPS: &str = "entity,p1,p2\nAlice,0.8,1\nBob,0.5,1\nJim,0.8,1\nC1,0.7,1\n";

    fn party_a() -> KnowledgeGraph {
        parse_kg(PartyId(1), ("t", A_TRIPLES), ("p", A_PROPS), None, Some(schema()), false).unwrap()
    }

    #[test]
    fn loads_party_a_tables() {
        let kg = party_a();
        assert_eq!(kg.triples.len(), 4);
        assert_eq!(kg.row("Alice").unwrap(), &[PropertyCell::number(0.8), PropertyCell::number(1.0)]);
        assert_eq!(kg.plain_number("C1", 1), Some(0.7));
        kg.validate().unwrap();
    }

    #[test]
    fn empty_files_give_empty_kg() {
        let kg = parse_kg(PartyId(1), ("t", ""), ("p", ""), None, None, false).unwrap();
        assert!(kg.is_empty());
        assert!(kg.triples.is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_kg(PartyId(1), ("t", "Alice\t1\tZed\n"), ("p", A_PROPS), None, Some(schema()), false)
            .unwrap_err();
        assert!(matches!(err, KgError::UnknownEntity { line: 1, ref name, .. } if name == "Zed"));
        let err = parse_kg(PartyId(1), ("t", "\nAlice 1 C1\n"), ("p", A_PROPS), None, Some(schema()), false)
            .unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 2, .. }));
        let err = parse_kg(
            PartyId(1),
            ("t", ""),
            ("p", "entity,p1,p2\nAlice,0.8,1\nBob,x,1\n"),
            None,
            Some(schema()),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 3, .. }), "{err}");
        let err = parse_kg(PartyId(1), ("t", "Bob\t1\tBob\n"), ("p", A_PROPS), None, Some(schema()), false)
            .unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 1, .. }));
    }

    #[test]
    fn adjacency_follows_triples() {
        let kg = party_a();
        let names = ["Alice", "Bob", "C1", "Jim"];
        let ids: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
        let dict = RelationDict::from_kgs(std::slice::from_ref(&kg));
        let out2 = kg.adjacency(&ids, 4, &dict, dict.resolve("2"), Direction::Out);
        assert_eq!(out2.get(0, 3), RingValue(1));
        assert_eq!(out2.data.iter().filter(|v| v.0 == 1).count(), 1);
        let in2 = kg.adjacency(&ids, 4, &dict, Some(2), Direction::In);
        assert_eq!(in2, out2.transpose());
        let empty = KnowledgeGraph::new(PartyId(1), schema());
        assert_eq!(empty.adjacency(&ids, 4, &dict, None, Direction::Out), RingMatrix::zeros(4, 4));
    }

    #[test]
    fn relation_dict_orders_numbers_first() {
        let d = RelationDict::from_labels(["10", "knows", "2", "1"]);
        assert_eq!(d.labels(), &["1", "2", "10", "knows"]);
        assert_eq!(d.id("10"), Some(3));
        assert_eq!(d.resolve("knows"), Some(4));
        assert_eq!(d.resolve("4"), Some(4));
        assert_eq!(d.resolve("9"), None);
    }

    #[test]
    fn to_shared_and_round_trip() {
        let mut kg = party_a().with_alias("Jim", "Jim Butler");
        kg.rename("Jim", "Jim Butler");
        let common: BTreeSet<String> = ["Jim Butler".to_string()].into();
        assert!(matches!(
            kg.to_shared("Alice", vec![RingValue(1), RingValue(2)], &common),
            Err(KgError::NotCommonEntity(_))
        ));
        kg.to_shared("Jim Butler", vec![RingValue(0xabc), RingValue(u64::MAX)], &common)
            .unwrap();
        assert_eq!(kg.row("Alice").unwrap()[0], PropertyCell::number(0.8));
        assert!(kg.row("Jim Butler").unwrap().iter().all(PropertyCell::is_shared));

        let dir = tempfile::tempdir().unwrap();
        save_kg(&kg, dir.path()).unwrap();
        let back = load_saved(PartyId(1), dir.path()).unwrap();
        assert_eq!(back, kg);
    }

    #[test]
    fn categorical_inference_and_keys() {
        let kg = parse_kg(
            PartyId(2),
            ("t", ""),
            ("p", "entity,gender\n\"Sam\",\"M\"\nLee,F\n"),
            Some(("a", "Sam\tSam  R. Smith\n")),
            None,
            false,
        )
        .unwrap();
        assert_eq!(kg.schema.slots[0].categories, vec!["F", "M"]);
        assert_eq!(kg.plain_number("Sam", 1), Some(1.0));
        assert_eq!(kg.key_of("Sam"), "sam r. smith");
        assert_eq!(canonical_key("  Jim\tBUTLER "), "jim butler");
    }
}
