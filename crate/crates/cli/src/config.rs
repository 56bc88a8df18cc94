//! Run configuration: the parties' input files, schema, fixed-point
//! parameters, merge policy, seed and dealer mode. Relative paths resolve
//! against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;

use ppkg::fixtures;
use ppkg::kgstore::{load_kg, KnowledgeGraph, LoadOptions, Schema};
use ppkg::merge::{MergeOptions, MergePolicy};
use ppkg::mpc::{derive_seed, Dealer, Mpc};
use ppkg::numeric::FixedPointConfig;
use ppkg::runtime::PartyId;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyFiles {
    #[serde(alias = "triples_path")]
    pub triples: PathBuf,
    #[serde(alias = "props_path")]
    pub props: PathBuf,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    File(PathBuf),
    Inline(Schema),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DealerMode {
    #[default]
    Online,
    File,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DealerConfig {
    #[serde(default)]
    pub mode: DealerMode,
    /// Directory of per-party material files, for `file` mode.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub parties: Vec<PartyFiles>,
    /// Inferred from the property files when absent.
    #[serde(default)]
    pub schema: Option<SchemaSource>,
    #[serde(default, rename = "fixed_point")]
    pub fixed_point: FixedPointConfig,
    #[serde(default)]
    pub policy: Option<MergePolicy>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dealer: DealerConfig,
    #[serde(default)]
    pub merge: MergeOptions,
    #[serde(default)]
    pub allow_self_loops: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    /// Two company graphs sharing one person.
    Example,
    /// Two banks' guarantee graphs.
    Guarantee,
}

/// Everything a subcommand needs, resolved from a config or a fixture.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub kgs: Vec<KnowledgeGraph>,
    pub cfg: FixedPointConfig,
    pub policy: Option<MergePolicy>,
    pub merge: MergeOptions,
    pub seed: u64,
    pub dealer: DealerConfig,
}

impl Inputs {
    pub fn from_fixture(f: Fixture) -> Self {
        let kgs = match f {
            Fixture::Example => fixtures::example_pair(),
            Fixture::Guarantee => fixtures::guarantee_banks(),
        };
        Self {
            kgs,
            cfg: FixedPointConfig::default(),
            policy: None,
            merge: MergeOptions::default(),
            seed: DEFAULT_SEED,
            dealer: DealerConfig::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let rc: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if rc.parties.len() < 2 {
            bail!("config lists {} parties, at least 2 are required", rc.parties.len());
        }
        let schema = match &rc.schema {
            None => None,
            Some(SchemaSource::Inline(s)) => Some(s.clone()),
            Some(SchemaSource::File(p)) => {
                let p = at(p);
                let text = fs::read_to_string(&p).with_context(|| format!("reading schema {}", p.display()))?;
                Some(serde_json::from_str(&text).with_context(|| format!("parsing schema {}", p.display()))?)
            }
        };
        let kgs = rc
            .parties
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let opts = LoadOptions {
                    allow_self_loops: rc.allow_self_loops,
                    aliases_path: f.aliases.as_deref().map(at),
                };
                load_kg(PartyId(i + 1), &at(&f.triples), &at(&f.props), schema.clone(), &opts)
                    .with_context(|| format!("loading party {}", i + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dealer = rc.dealer.clone();
        dealer.dir = dealer.dir.as_deref().map(at);
        Ok(Self {
            kgs,
            cfg: rc.fixed_point,
            policy: rc.policy,
            merge: rc.merge,
            seed: rc.seed.unwrap_or(DEFAULT_SEED),
            dealer,
        })
    }

    pub fn parties(&self) -> usize {
        self.kgs.len()
    }

    /// The engine for one run. Online dealers record their material when
    /// `record` is set so it can be written out afterwards.
    pub fn engine(&self, record: bool) -> Result<Mpc> {
        let n = self.parties();
        let dealer = match self.dealer.mode {
            DealerMode::Online => {
                let d = Dealer::online(n, derive_seed(self.seed, "dealer"));
                if record {
                    d.recording()
                } else {
                    d
                }
            }
            DealerMode::File => {
                let dir = self.dealer.dir.as_deref().context("dealer mode `file` needs `dealer.dir`")?;
                Dealer::replay_dir(dir, n)?
            }
        };
        Ok(Mpc::with_dealer(self.cfg, self.seed, dealer)?)
    }
}
