//! Built-in demo graphs, embedded from `fixtures/` at the workspace root.

use crate::kgstore::{parse_kg, KgError, KnowledgeGraph, Schema};
use crate::runtime::PartyId;

struct Files {
    triples: &'static str,
    props: &'static str,
    aliases: Option<&'static str>,
}

fn load(party: PartyId, name: &str, f: &Files, schema: &str) -> Result<KnowledgeGraph, KgError> {
    let schema: Schema = serde_json::from_str(schema).expect("embedded schema parses");
    parse_kg(
        party,
        (&format!("{name}/triples.tsv"), f.triples),
        (&format!("{name}/props.csv"), f.props),
        f.aliases.map(|a| ("aliases.tsv", a)),
        Some(schema),
        false,
    )
}

const EXAMPLE_SCHEMA: &str = include_str!("../../../fixtures/example/schema.json");
const EXAMPLE_A: Files = Files {
    triples: include_str!("../../../fixtures/example/a/triples.tsv"),
    props: include_str!("../../../fixtures/example/a/props.csv"),
    aliases: Some(include_str!("../../../fixtures/example/a/aliases.tsv")),
};
const EXAMPLE_B: Files = Files {
    triples: include_str!("../../../fixtures/example/b/triples.tsv"),
    props: include_str!("../../../fixtures/example/b/props.csv"),
    aliases: Some(include_str!("../../../fixtures/example/b/aliases.tsv")),
};

/// Two company graphs sharing one person: A's `Jim` and B's `Butler` are
/// both "Jim Butler".
pub fn example_pair() -> Vec<KnowledgeGraph> {
    vec![
        load(PartyId(1), "example/a", &EXAMPLE_A, EXAMPLE_SCHEMA).expect("fixture A"),
        load(PartyId(2), "example/b", &EXAMPLE_B, EXAMPLE_SCHEMA).expect("fixture B"),
    ]
}

const GUARANTEE_SCHEMA: &str = include_str!("../../../fixtures/guarantee/schema.json");
const GUARANTEE_A: Files = Files {
    triples: include_str!("../../../fixtures/guarantee/a/triples.tsv"),
    props: include_str!("../../../fixtures/guarantee/a/props.csv"),
    aliases: None,
};
const GUARANTEE_B: Files = Files {
    triples: include_str!("../../../fixtures/guarantee/b/triples.tsv"),
    props: include_str!("../../../fixtures/guarantee/b/props.csv"),
    aliases: None,
};

/// Two banks' guarantee graphs. Bank A holds E1 -> E2 -> E3; bank B
/// considers the new guarantee E3 -> E1 and cannot see A's chain.
pub fn guarantee_banks() -> Vec<KnowledgeGraph> {
    vec![
        load(PartyId(1), "guarantee/a", &GUARANTEE_A, GUARANTEE_SCHEMA).expect("bank A"),
        load(PartyId(2), "guarantee/b", &GUARANTEE_B, GUARANTEE_SCHEMA).expect("bank B"),
    ]
}

/// The edge bank B proposes in the guarantee demo: `(guarantor, guaranteed)`.
pub const PROPOSED_GUARANTEE: (&str, &str) = ("E3", "E1");
