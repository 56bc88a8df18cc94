mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ppkg::complete::{self, rank_candidates, PropertyHead, TripleScorer};
use ppkg::demo::{self, check_guarantee_loop, local_loop_verdict};
use ppkg::embed::{self, Aggregator, EmbeddingStore, GnnConfig, GnnWeights, PolyActivation};
use ppkg::merge::{self, load_universe, merge_kgs, save_universe, MergedUniverse};
use ppkg::mpc::{Mpc, RingMatrix, ShareMatrix, ShareVector};
use ppkg::numeric::RingValue;
use ppkg::query::{parse_program, run_query, PlainGraph};
use ppkg::runtime::{MessageKind, PartyId};
use ppkg::selftest::{self, SelftestOptions};

use config::{Fixture, Inputs};

/// Exit code for a failed acceptance run; protocol and config errors use 1.
const EXIT_ACCEPTANCE: u8 = 2;

#[derive(Parser)]
#[command(name = "ppkg", version, about = "Multi-party knowledge graph merging, query, embedding and completion")]
struct Cli {
    /// JSON run config; the example fixture is used when neither this nor
    /// `--fixture` is given.
    #[arg(long, global = true, conflicts_with = "fixture")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    fixture: Option<Fixture>,
    /// Expected party count; all parties run in-process.
    #[arg(long, global = true)]
    parties: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Writes the run's message transcript as JSON lines.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// Writes the dealer material consumed by the run, one file per party.
    #[arg(long, global = true)]
    record_dealer: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct StoreArg {
    /// Merged store written by `merge`; the inputs are merged in-process
    /// when absent.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct GnnArgs {
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value = "mean")]
    agg: Aggregator,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Property,
    Triple,
}

#[derive(Subcommand)]
enum Command {
    /// Aligns, links and merges the parties' graphs into a shared store.
    Merge {
        #[arg(long, required_unless_present = "oracle")]
        out: Option<PathBuf>,
        /// Also prints the reconstructed merged rows.
        #[arg(long)]
        debug_reconstruct: bool,
        /// Prints the plaintext merge of the pooled inputs instead.
        #[arg(long)]
        oracle: bool,
    },
    /// Runs a traversal program and prints the matching entities.
    Query {
        #[command(flatten)]
        store: StoreArg,
        /// Semicolon-separated instructions, e.g. `start Alice; out 2; where 1 >= 0.5`.
        #[arg(long)]
        program: String,
        /// Plaintext answer from the pooled inputs, for diffing.
        #[arg(long)]
        oracle: bool,
    },
    /// Computes entity embeddings.
    Embed {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        gnn: GnnArgs,
        /// CSV of opened embeddings, or a directory of share files with
        /// `--keep-shared`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "oracle")]
        keep_shared: bool,
        /// Plaintext answer from the pooled inputs, for diffing.
        #[arg(long)]
        oracle: bool,
    },
    /// Predicts properties or ranks tail candidates for an entity.
    Complete {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        gnn: GnnArgs,
        #[arg(long, value_enum)]
        task: Task,
        /// Target entity by display name.
        #[arg(long)]
        entity: String,
        /// Relation label selecting the scorer weights for the triple task.
        #[arg(long)]
        relation: Option<String>,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Opens the ranked candidates' scores.
        #[arg(long)]
        open_scores: bool,
        /// Plaintext answer from the pooled inputs, for diffing.
        #[arg(long)]
        oracle: bool,
    },
    /// Checks whether a proposed guarantee closes a loop.
    DemoLoop {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, default_value = ppkg::fixtures::PROPOSED_GUARANTEE.0)]
        guarantor: String,
        #[arg(long, default_value = ppkg::fixtures::PROPOSED_GUARANTEE.1)]
        guaranteed: String,
        #[arg(long, default_value_t = demo::DEFAULT_LOOP_DEPTH)]
        depth: usize,
        /// Plaintext answer from the pooled inputs, for diffing.
        #[arg(long)]
        oracle: bool,
    },
    /// Runs the acceptance suite.
    Selftest {
        #[arg(long)]
        json: bool,
        /// Negative control: corrupts the dealer's triples in the MUL check.
        #[arg(long)]
        corrupt_triples: bool,
        /// Criterion ids to run, comma separated.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_inputs(cli: &Cli) -> Result<Inputs> {
    let mut inputs = match (&cli.config, cli.fixture) {
        (Some(path), _) => Inputs::from_file(path)?,
        (None, f) => Inputs::from_fixture(f.unwrap_or(Fixture::Example)),
    };
    if let Some(n) = cli.parties {
        if n != inputs.parties() {
            bail!("--parties {n} but the inputs hold {} parties", inputs.parties());
        }
    }
    if let Some(s) = cli.seed {
        inputs.seed = s;
    }
    Ok(inputs)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Selftest { json, corrupt_triples, only } = &cli.cmd {
        let results = selftest::run_selftest(&SelftestOptions {
            corrupt_triples: *corrupt_triples,
            only: only.clone(),
        });
        if *json {
            println!("{}", serde_json::to_string_pretty(&results)?);
        } else {
            println!("{}", selftest::render(&results));
        }
        return Ok(if selftest::all_passed(&results) {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_ACCEPTANCE)
        });
    }

    let inputs = load_inputs(&cli)?;
    let mut mpc = inputs.engine(cli.record_dealer.is_some())?;
    let stdout = match &cli.cmd {
        Command::Merge { out, debug_reconstruct, oracle } => {
            cmd_merge(&mut mpc, &inputs, out.as_deref(), *debug_reconstruct, *oracle)?
        }
        Command::Query { store, program, oracle } => {
            let u = universe(&mut mpc, &inputs, store)?;
            let program = parse_program(program)?;
            let names: Vec<String> = if *oracle {
                PlainGraph::from_parts(&u, &inputs.kgs).run(&u, &program)?.into_iter().collect()
            } else {
                run_query(&mut mpc, &u, &program)?.entities
            };
            names.iter().map(|n| format!("{n}\n")).collect()
        }
        Command::Embed { store, gnn, out, keep_shared, oracle } => {
            let u = universe(&mut mpc, &inputs, store)?;
            cmd_embed(&mut mpc, &inputs, &u, gnn, out, *keep_shared, *oracle)?
        }
        Command::Complete { store, gnn, task, entity, relation, topk, open_scores, oracle } => {
            let u = universe(&mut mpc, &inputs, store)?;
            let req = CompleteRequest {
                task: *task,
                entity,
                relation: relation.as_deref(),
                topk: *topk,
                open_scores: *open_scores,
            };
            cmd_complete(&mut mpc, &inputs, &u, gnn, &req, *oracle)?
        }
        Command::DemoLoop { store, guarantor, guaranteed, depth, oracle } => {
            let u = universe(&mut mpc, &inputs, store)?;
            let check = check_guarantee_loop(&mut mpc, &u, &inputs.kgs, guarantor, guaranteed, *depth)?;
            let single: BTreeMap<String, _> = inputs
                .kgs
                .iter()
                .map(|kg| (kg.party.to_string(), local_loop_verdict(kg, guarantor, guaranteed, *depth)))
                .collect();
            let report = if *oracle {
                json!({ "verdict": check.oracle })
            } else {
                json!({ "verdict": check.verdict, "depth": check.depth, "oracle": check.oracle, "single_party": single })
            };
            format!("{}\n", serde_json::to_string_pretty(&report)?)
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    };
    print!("{stdout}");

    if let Some(path) = &cli.transcript {
        fs::write(path, mpc.transcript().to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = &cli.record_dealer {
        mpc.dealer().write_files(dir).with_context(|| format!("writing dealer files to {}", dir.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn universe(mpc: &mut Mpc, inputs: &Inputs, store: &StoreArg) -> Result<MergedUniverse> {
    let u = match &store.store {
        Some(dir) => load_universe(dir).with_context(|| format!("loading store {}", dir.display()))?,
        None => merge_kgs(mpc, &inputs.kgs, inputs.policy.as_ref(), &inputs.merge, inputs.seed)?,
    };
    if u.parties() != mpc.n() {
        bail!("store holds {} parties, the run has {}", u.parties(), mpc.n());
    }
    Ok(u)
}

fn cmd_merge(mpc: &mut Mpc, inputs: &Inputs, out: Option<&Path>, debug: bool, oracle: bool) -> Result<String> {
    if oracle {
        let plain = merge::oracle::plain_universe(&inputs.kgs, inputs.policy.as_ref(), &inputs.merge)?;
        return Ok(format!("{}\n", serde_json::to_string_pretty(&plain)?));
    }
    let out = out.expect("clap requires --out without --oracle");
    let u = merge_kgs(mpc, &inputs.kgs, inputs.policy.as_ref(), &inputs.merge, inputs.seed)?;
    save_universe(&u, out)?;
    let mut report = u.report();
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out.join("transcript.jsonl"), mpc.transcript().to_jsonl())?;
    if debug {
        // Simulator-side reconstruction of the stored shares; no messages.
        let cfg = *mpc.cfg();
        let rows: BTreeMap<&str, Vec<f64>> = u
            .common
            .iter()
            .filter_map(|name| {
                let row = u.shared_row(name)?;
                Some((name.as_str(), row.reconstruct_local().into_iter().map(|v| cfg.decode(v)).collect()))
            })
            .collect();
        report["reconstructed"] = json!(rows);
    }
    Ok(format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn gnn_weights(inputs: &Inputs, u: &MergedUniverse, gnn: &GnnArgs) -> Result<GnnWeights> {
    if gnn.depth == 0 || gnn.dim == 0 {
        bail!("--depth and --dim must be at least 1");
    }
    Ok(GnnWeights::seeded(u.schema.len(), gnn.dim, gnn.depth, inputs.seed, &inputs.cfg))
}

fn secure_embeddings(mpc: &mut Mpc, inputs: &Inputs, u: &MergedUniverse, gnn: &GnnArgs) -> Result<EmbeddingStore> {
    let weights = gnn_weights(inputs, u, gnn)?;
    let g = GnnConfig::share(mpc, &weights, gnn.agg, PolyActivation::default(), PartyId(1))?;
    Ok(embed::secure_embed(mpc, u, &g)?)
}

/// `h^K` from the plaintext fixed-point forward pass over pooled inputs.
fn oracle_embeddings(inputs: &Inputs, u: &MergedUniverse, gnn: &GnnArgs) -> Result<RingMatrix> {
    let weights = gnn_weights(inputs, u, gnn)?;
    let x = embed::oracle::plain_features(u, &inputs.kgs, &inputs.cfg);
    let nb = embed::neighbor_sets(u);
    let mut hs = embed::oracle::forward_fx(&x, &weights, &nb, gnn.agg, &PolyActivation::default(), &inputs.cfg);
    Ok(hs.pop().expect("h0 present"))
}

fn embedding_csv(u: &MergedUniverse, h: &RingMatrix, inputs: &Inputs) -> String {
    let mut s = String::from("entity");
    for k in 1..=h.cols {
        let _ = write!(s, ",h{k}");
    }
    s.push('\n');
    for e in &u.entities {
        s.push_str(&csv_field(&e.name));
        for k in 0..h.cols {
            let _ = write!(s, ",{}", inputs.cfg.decode(h.get(e.global_id, k)));
        }
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_embed(
    mpc: &mut Mpc,
    inputs: &Inputs,
    u: &MergedUniverse,
    gnn: &GnnArgs,
    out: &Path,
    keep_shared: bool,
    oracle: bool,
) -> Result<String> {
    if oracle {
        let h = oracle_embeddings(inputs, u, gnn)?;
        fs::write(out, embedding_csv(u, &h, inputs))?;
        return Ok(format!("wrote {}\n", out.display()));
    }
    let store = secure_embeddings(mpc, inputs, u, gnn)?;
    let h = store.last();
    if keep_shared {
        fs::create_dir_all(out)?;
        for p in PartyId::all(mpc.n()) {
            let block = h.block(p);
            let mut s = String::from("entity,slot,hexshare\n");
            for e in &u.entities {
                for k in 0..h.cols {
                    let _ = writeln!(s, "{},{},{}", csv_field(&e.name), k + 1, block.get(e.global_id, k).to_hex());
                }
            }
            fs::write(merge::party_dir(out, p).with_extension("csv"), s)?;
        }
        return Ok(format!("wrote {} share files to {}\n", mpc.n(), out.display()));
    }
    let opened = mpc.open(h.as_vector(), MessageKind::Output, "embed.h")?;
    let h = RingMatrix::new(h.rows, h.cols, opened);
    fs::write(out, embedding_csv(u, &h, inputs))?;
    Ok(format!("wrote {}\n", out.display()))
}

struct CompleteRequest<'a> {
    task: Task,
    entity: &'a str,
    relation: Option<&'a str>,
    topk: usize,
    open_scores: bool,
}

fn cmd_complete(
    mpc: &mut Mpc,
    inputs: &Inputs,
    u: &MergedUniverse,
    gnn: &GnnArgs,
    req: &CompleteRequest,
    oracle: bool,
) -> Result<String> {
    let cfg = inputs.cfg;
    let act = PolyActivation::default();
    let target = u.id_of(req.entity).with_context(|| format!("unknown entity {:?}", req.entity))?;
    let relation = match req.relation {
        Some(r) => Some(u.relations.resolve(r).with_context(|| format!("unknown relation {r:?}"))?),
        None => None,
    };
    let candidates: Vec<usize> = (0..u.len()).filter(|&c| c != target).collect();
    let name = |id: usize| csv_field(&u.entities[id].name);
    let w_pro = complete::seeded_matrix(gnn.dim, u.schema.len(), embed::WEIGHT_RANGE, inputs.seed, "complete.w_pro", &cfg);
    let w_tri = TripleScorer::seeded_weights(gnn.dim, relation, inputs.seed, &cfg);

    // (property values) or (ranked candidate ids, their scores if opened)
    let (props, ranked, scores): (Vec<RingValue>, Vec<usize>, Option<Vec<RingValue>>) = if oracle {
        let h = oracle_embeddings(inputs, u, gnn)?;
        let row = |r: usize| (0..h.cols).map(|k| h.get(r, k)).collect::<Vec<_>>();
        match req.task {
            Task::Property => {
                let x = RingMatrix::new(1, h.cols, row(target));
                (complete::oracle::property_fx(&x, &w_pro, &act, &cfg).data, vec![], None)
            }
            Task::Triple => {
                let s: Vec<RingValue> = candidates
                    .iter()
                    .map(|&c| complete::oracle::score_fx(&row(target), &row(c), &w_tri, &act, &cfg))
                    .collect();
                let order: Vec<usize> = complete::oracle::rank_fx(&s).into_iter().take(req.topk).collect();
                let top = req.open_scores.then(|| order.iter().map(|&i| s[i]).collect());
                (vec![], order.into_iter().map(|i| candidates[i]).collect(), top)
            }
        }
    } else {
        let store = secure_embeddings(mpc, inputs, u, gnn)?;
        let h = store.last();
        match req.task {
            Task::Property => {
                let head = PropertyHead::share(mpc, &w_pro, act, PartyId(1))?;
                let x = ShareMatrix::new(1, h.cols, h.row(target))?;
                let y = complete::complete_property(mpc, &x, &head)?;
                (mpc.open(y.as_vector(), MessageKind::Output, "complete.property")?, vec![], None)
            }
            Task::Triple => {
                let scorer = TripleScorer::share(mpc, &w_tri, act, PartyId(1))?;
                let rows: Vec<ShareVector> = candidates.iter().map(|&c| h.row(c)).collect();
                let cands = ShareMatrix::rows_of(&rows)?;
                let (order, s) = rank_candidates(mpc, &h.row(target), &cands, &scorer, req.topk)?;
                let top = if req.open_scores {
                    Some(mpc.open(&s.gather(&order), MessageKind::Output, "complete.scores")?)
                } else {
                    None
                };
                (vec![], order.into_iter().map(|i| candidates[i]).collect(), top)
            }
        }
    };

    let mut s = String::new();
    match req.task {
        Task::Property => {
            s.push_str("slot,value\n");
            for (slot, v) in u.schema.slots.iter().zip(props) {
                let _ = writeln!(s, "{},{}", csv_field(&slot.name), cfg.decode(v));
            }
        }
        Task::Triple => {
            s.push_str(if scores.is_some() { "candidate,rank,score\n" } else { "candidate,rank\n" });
            for (rank, &c) in ranked.iter().enumerate() {
                let _ = write!(s, "{},{}", name(c), rank + 1);
                if let Some(sc) = &scores {
                    let _ = write!(s, ",{}", cfg.decode(sc[rank]));
                }
                s.push('\n');
            }
        }
    }
    Ok(s)
}
