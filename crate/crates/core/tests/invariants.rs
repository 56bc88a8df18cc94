use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;

use ppkg::complete::{oracle as cor, score_triple, TripleScorer};
use ppkg::embed::PolyActivation;
use ppkg::fixtures::example_pair;
use ppkg::kgstore::{load_saved, save_kg, KnowledgeGraph, PlainValue, PropertyCell, PropertySlot, Schema};
use ppkg::merge::{link_entities, merge_kgs, merge_properties, plain_merge, share_rows, MergeOptions, MergePolicy, MergeRule};
use ppkg::mpc::{reconstruct, share, Dealer, DivisorBound, Mpc, RingMatrix, ShareVector};
use ppkg::numeric::{FixedPointConfig, RingValue};
use ppkg::query::{filter, parse_program, run_query, Instruction, QueryEngine, Traverser};
use ppkg::runtime::{MessageKind, PartyId};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn cfg() -> FixedPointConfig {
    FixedPointConfig::default()
}

fn grid(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo * 256..=hi * 256).prop_map(|k| k as f64 / 256.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn share_then_reconstruct_is_identity(x in any::<u64>(), n in 2usize..6, seed in any::<u64>()) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let s = share(RingValue(x), n, &mut r).unwrap();
        prop_assert_eq!(reconstruct(&s, n).unwrap(), RingValue(x));
    }

    #[test]
    fn linear_ops_send_nothing(xs in prop::collection::vec(grid(-64, 64), 1..16), k in -8i64..8) {
        let c = cfg();
        let mut m = Mpc::new(3, c, 4).unwrap();
        let a = m.input_f64(PartyId(1), &xs).unwrap();
        let b = m.input_f64(PartyId(3), &xs).unwrap();
        let before = m.transcript().len();
        let s = m.add(&a, &b).unwrap();
        let d = m.sub(&s, &a).unwrap();
        let e = m.scale_public(&d, RingValue::from_signed(k));
        let consts: Vec<RingValue> = xs.iter().map(|&x| c.encode(x).unwrap()).collect();
        let f = m.add_public(&e, &consts);
        prop_assert_eq!(m.transcript().len(), before);
        for ((got, x), cst) in f.reconstruct_local().iter().zip(&xs).zip(&consts) {
            prop_assert_eq!(*got, c.encode(x * k as f64).unwrap() + *cst);
        }
    }

    #[test]
    fn mul_uses_one_triple_per_element(xs in prop::collection::vec((grid(-256, 256), grid(-256, 256)), 1..32), n in 2usize..5) {
        let c = cfg();
        let mut m = Mpc::new(n, c, 9).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = xs.iter().copied().unzip();
        let sa = m.input_f64(PartyId(1), &a).unwrap();
        let sb = m.input_f64(PartyId(n), &b).unwrap();
        let before = m.dealer_stats().triples;
        let p = m.mul(&sa, &sb).unwrap();
        prop_assert_eq!(m.dealer_stats().triples - before, xs.len() as u64);
        for (got, (x, y)) in p.reconstruct_local().iter().zip(&xs) {
            prop_assert!((c.decode(*got) - x * y).abs() <= 2f64.powi(1 - 16));
        }
    }

    #[test]
    fn argmax_matches_plaintext_with_lowest_index_ties(xs in prop::collection::vec(-6i64..6, 1..20)) {
        let c = cfg();
        let mut m = Mpc::new(2, c, 2).unwrap();
        let v = m.input_f64(PartyId(2), &xs.iter().map(|&x| x as f64 * 0.5).collect::<Vec<_>>()).unwrap();
        let (idx, best) = m.argmax(&v).unwrap();
        let max = *xs.iter().max().unwrap();
        prop_assert_eq!(idx, xs.iter().position(|&x| x == max).unwrap());
        prop_assert_eq!(c.decode(best.reconstruct_local()[0]), max as f64 * 0.5);
    }

    #[test]
    fn div_relative_error_is_bounded(e in -4i32..=8, t in 0.0f64..1.0, q in 1.0f64..16.0, neg in any::<bool>()) {
        let c = cfg();
        let mut m = Mpc::new(2, c, 3).unwrap();
        let b = 2f64.powi(e - 1) * (1.0 + t);
        let a = b * q * if neg { -1.0 } else { 1.0 };
        let (ae, be) = (c.encode(a).unwrap(), c.encode(b).unwrap());
        let sa = m.input(PartyId(1), &[ae]).unwrap();
        let sb = m.input(PartyId(2), &[be]).unwrap();
        let got = c.decode(m.div(&sa, &sb, DivisorBound::Window(e)).unwrap().reconstruct_local()[0]);
        let want = c.decode(ae) / c.decode(be);
        prop_assert!(((got - want) / want).abs() <= 2f64.powi(-16 + 2));
    }

    #[test]
    fn merge_rules_match_plaintext(
        vals in prop::collection::vec(grid(-100, 100), 2..5),
        cats in prop::collection::vec(0usize..3, 2..5),
        which in 0usize..4,
    ) {
        let c = cfg();
        let n = vals.len().max(cats.len());
        let vals: Vec<f64> = (0..n).map(|i| vals[i % vals.len()]).collect();
        let cats: Vec<usize> = (0..n).map(|i| cats[i % cats.len()]).collect();
        let names = ["a", "b", "c"];
        let schema = Schema::new(vec![PropertySlot::continuous("x"), PropertySlot::categorical("k", &names)]);
        let weights: Vec<f64> = (0..n).map(|_| 1.0 / n as f64).collect();
        let numeric = [MergeRule::Max, MergeRule::Min, MergeRule::Average, MergeRule::WeightedAverage { weights }][which].clone();
        let policy = MergePolicy { rules: vec![numeric.clone(), MergeRule::Majority] };
        let mut m = Mpc::new(n, c, 5).unwrap();
        let rows: Vec<(PartyId, Vec<PlainValue>)> = (0..n)
            .map(|i| (PartyId(i + 1), vec![PlainValue::Number(vals[i]), PlainValue::Category(names[cats[i]].to_string())]))
            .collect();
        let shared = share_rows(&mut m, &schema, &rows).unwrap();
        let out = merge_properties(&mut m, &schema, &shared, &policy).unwrap().reconstruct_local();
        let want = plain_merge(&numeric, &vals, 0);
        prop_assert!((c.decode(out[0]) - want).abs() <= 2f64.powi(1 - 16), "{:?}: {} vs {want}", numeric, c.decode(out[0]));
        let majority = plain_merge(&MergeRule::Majority, &cats.iter().map(|&k| k as f64).collect::<Vec<_>>(), names.len());
        prop_assert_eq!(c.decode(out[1]), majority);
    }

    #[test]
    fn saved_graph_reloads_bit_exact(
        ents in prop::collection::btree_map("[a-z]{1,6}", (grid(-50, 50), 0usize..3), 1..10),
        edges in prop::collection::vec((0usize..10, 0usize..10, 1u8..4), 0..20),
    ) {
        let cats = ["lo", "mid", "hi"];
        let schema = Schema::new(vec![PropertySlot::continuous("v"), PropertySlot::categorical("band", &cats)]);
        let names: Vec<&String> = ents.keys().collect();
        let mut kg = KnowledgeGraph::new(PartyId(1), schema);
        for (name, &(v, k)) in &ents {
            kg = kg.with_entity(name, vec![PropertyCell::number(v), PropertyCell::Plain(PlainValue::Category(cats[k].to_string()))]);
        }
        for &(h, t, r) in &edges {
            let (h, t) = (names[h % names.len()], names[t % names.len()]);
            if h != t {
                kg = kg.with_triple(h, &r.to_string(), t);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        save_kg(&kg, dir.path()).unwrap();
        let back = load_saved(PartyId(1), dir.path()).unwrap();
        prop_assert_eq!(&back.schema, &kg.schema);
        prop_assert_eq!(&back.properties, &kg.properties);
        let set = |g: &KnowledgeGraph| g.triples.iter().cloned().collect::<BTreeSet<_>>();
        prop_assert_eq!(set(&back), set(&kg));
    }

    #[test]
    fn scores_match_oracle(
        head in prop::collection::vec(grid(-1, 1), 4),
        tail in prop::collection::vec(grid(-1, 1), 4),
        seed in any::<u64>(),
    ) {
        let c = cfg();
        let act = PolyActivation::default();
        let mut m = Mpc::new(2, c, seed).unwrap();
        let w = TripleScorer::seeded_weights(4, None, seed, &c);
        let scorer = TripleScorer::share(&mut m, &w, act, PartyId(1)).unwrap();
        let hh = m.input_f64(PartyId(1), &head).unwrap();
        let ht = m.input_f64(PartyId(2), &tail).unwrap();
        let got = score_triple(&mut m, &hh, &ht, &scorer).unwrap().reconstruct_local()[0];
        let enc = |v: &[f64]| v.iter().map(|&x| c.encode(x).unwrap()).collect::<Vec<_>>();
        let want = cor::score_fx(&enc(&head), &enc(&tail), &w, &act, &c);
        prop_assert!((c.decode(got) - c.decode(want)).abs() <= 2f64.powi(-16 + 5));
    }

    /// The default activation is linear with a positive slope, so scaling
    /// the pre-activation by a positive constant cannot move the winner.
    #[test]
    fn scaled_scorer_keeps_the_argmax(
        cands in prop::collection::vec(prop::collection::vec(grid(-1, 1), 3), 2..6),
        scale in 1i64..4,
        seed in any::<u64>(),
    ) {
        let c = cfg();
        let act = PolyActivation::default();
        let w = TripleScorer::seeded_weights(3, None, seed, &c);
        let enc = |v: &[f64]| v.iter().map(|&x| c.encode(x).unwrap()).collect::<Vec<_>>();
        let head = [0.25, -0.5, 0.75];
        let plain: Vec<RingValue> = cands.iter().map(|t| cor::score_fx(&enc(&head), &enc(t), &w, &act, &c)).collect();
        let order = cor::rank_fx(&plain);
        prop_assume!((plain[order[0]].signed() - plain[order[1]].signed()).abs() > 16);

        let scaled = RingMatrix::new(w.rows, w.cols, w.data.iter().map(|&x| x * RingValue::from_signed(scale)).collect());
        let mut m = Mpc::new(2, c, seed).unwrap();
        let scorer = TripleScorer::share(&mut m, &scaled, act, PartyId(1)).unwrap();
        let hh = m.input_f64(PartyId(1), &head).unwrap();
        let mut scores = Vec::new();
        for t in &cands {
            let ht = m.input_f64(PartyId(2), t).unwrap();
            scores.push(score_triple(&mut m, &hh, &ht, &scorer).unwrap());
        }
        let refs: Vec<&ShareVector> = scores.iter().collect();
        let (winner, _) = m.argmax(&ShareVector::concat(&refs)).unwrap();
        prop_assert_eq!(winner, order[0]);
    }
}

#[test]
fn opened_beaver_masks_look_uniform() {
    let c = cfg();
    let mut m = Mpc::new(2, c, 77).unwrap();
    let xs = vec![1.5; 4096];
    let a = m.input_f64(PartyId(1), &xs).unwrap();
    let b = m.input_f64(PartyId(2), &xs).unwrap();
    let before = m.transcript().len();
    m.mul(&a, &b).unwrap();
    let words: Vec<u64> = m.transcript().messages()[before..]
        .iter()
        .filter(|msg| msg.kind == MessageKind::BeaverMask)
        .flat_map(|msg| msg.payload.chunks_exact(8).map(|w| u64::from_le_bytes(w.try_into().unwrap())))
        .collect();
    assert!(words.len() >= 2 * xs.len());
    // Every bit of the opened values is a fair coin despite constant secrets.
    let sigma = (words.len() as f64 * 0.25).sqrt();
    for bit in 0..64 {
        let ones = words.iter().filter(|&&w| w >> bit & 1 == 1).count() as f64;
        assert!((ones - words.len() as f64 / 2.0).abs() < 6.0 * sigma, "bit {bit}: {ones} of {}", words.len());
    }
}

fn pipeline(m: &mut Mpc) -> Vec<Vec<String>> {
    let kgs = example_pair();
    let u = merge_kgs(m, &kgs, None, &MergeOptions::default(), 3).unwrap();
    ["start Alice; out 2; out 1", "start *; where 1 >= 0.5; in *", "start *; where 2 = 1"]
        .iter()
        .map(|p| run_query(m, &u, &parse_program(p).unwrap()).unwrap().entities)
        .collect()
}

#[test]
fn same_seed_gives_identical_transcripts() {
    let mut a = Mpc::new(2, cfg(), 31).unwrap();
    let mut b = Mpc::new(2, cfg(), 31).unwrap();
    assert_eq!(pipeline(&mut a), pipeline(&mut b));
    assert_eq!(a.transcript().to_jsonl(), b.transcript().to_jsonl());
}

#[test]
fn recorded_dealer_replays_with_identical_party_traffic() {
    let c = cfg();
    let mut live = Mpc::with_dealer(c, 31, Dealer::online(2, ppkg::mpc::derive_seed(31, "dealer")).recording()).unwrap();
    let out = pipeline(&mut live);
    let dir = tempfile::tempdir().unwrap();
    live.dealer().write_files(dir.path()).unwrap();
    let mut replay = Mpc::with_dealer(c, 31, Dealer::replay_dir(dir.path(), 2).unwrap()).unwrap();
    assert_eq!(pipeline(&mut replay), out);
    let party = |m: &Mpc| m.transcript().party_messages().cloned().collect::<Vec<_>>();
    assert_eq!(party(&replay), party(&live));
}

#[test]
fn corrupted_dealer_file_breaks_multiplication() {
    let c = cfg();
    let mut live = Mpc::with_dealer(c, 8, Dealer::online(2, [8; 32]).recording()).unwrap();
    let a = live.input_f64(PartyId(1), &[3.0]).unwrap();
    let b = live.input_f64(PartyId(2), &[2.0]).unwrap();
    assert_eq!(c.decode(live.mul(&a, &b).unwrap().reconstruct_local()[0]), 6.0);
    let dir = tempfile::tempdir().unwrap();
    live.dealer().write_files(dir.path()).unwrap();

    let file = dir.path().join(ppkg::mpc::dealer::dealer_file_name(PartyId(1)));
    let text = std::fs::read_to_string(&file).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| match l.split(' ').collect::<Vec<_>>()[..] {
            ["triple", x, y, z] => {
                let bad = RingValue::from_hex(z).unwrap() + RingValue(1 << 40);
                format!("triple {x} {y} {}", bad.to_hex())
            }
            _ => l.to_string(),
        })
        .collect();
    std::fs::write(&file, lines.join("\n") + "\n").unwrap();

    let mut replay = Mpc::with_dealer(c, 8, Dealer::replay_dir(dir.path(), 2).unwrap()).unwrap();
    let a = replay.input_f64(PartyId(1), &[3.0]).unwrap();
    let b = replay.input_f64(PartyId(2), &[2.0]).unwrap();
    let got = c.decode(replay.mul(&a, &b).unwrap().reconstruct_local()[0]);
    assert!((got - 6.0).abs() > 1.0, "corruption went unnoticed: {got}");
}

#[test]
fn indicator_stays_binary_and_only_the_result_is_opened() {
    let c = cfg();
    let kgs = example_pair();
    let mut m = Mpc::new(2, c, 13).unwrap();
    let u = merge_kgs(&mut m, &kgs, None, &MergeOptions::default(), 13).unwrap();
    for src in ["start *; out *; in 1; where 1 >= 0.5", "start Sam; out 2; out 1; in *", "start *; where 2 = 0; out 2"] {
        let program = parse_program(src).unwrap();
        let mut engine = QueryEngine::new(&u);
        let mut t = Traverser {
            locations: ShareVector::zeros(2, u.len()),
            program: VecDeque::from(program.clone()),
        };
        while let Some(ins) = t.program.pop_front() {
            t.locations = filter(engine.sexecute(&mut m, &t, &ins).unwrap());
            for v in t.locations.reconstruct_local() {
                assert!(v == RingValue::ZERO || v == c.one(), "{src}: {ins}");
            }
        }
        let before = m.transcript().len();
        run_query(&mut m, &u, &program).unwrap();
        let opened: Vec<_> = m.transcript().messages()[before..]
            .iter()
            .filter(|msg| !matches!(msg.kind, MessageKind::Comparison | MessageKind::BeaverMask | MessageKind::Share | MessageKind::Dealer))
            .collect();
        assert!(opened.iter().all(|msg| msg.kind == MessageKind::Output && msg.tag == "query.result"), "{src}");
        assert!(!opened.is_empty());
        assert!(matches!(program[0], Instruction::Start(_)));
    }
}

#[test]
fn linking_is_symmetric_when_untied() {
    let mut m = Mpc::new(2, cfg(), 6).unwrap();
    let left: Vec<String> = ["albert einstein", "grace hopper", "alan turing"].map(String::from).to_vec();
    let right: Vec<String> = ["einstein albert", "hopper grace", "ada lovelace", "turing"].map(String::from).to_vec();
    let fwd = link_entities(&mut m, PartyId(1), &left, PartyId(2), &right, 128, 0.55).unwrap();
    let back = link_entities(&mut m, PartyId(2), &right, PartyId(1), &left, 128, 0.55).unwrap();
    let pairs = |ls: &[ppkg::merge::Link], flip: bool| -> BTreeSet<(usize, usize)> {
        ls.iter().map(|l| if flip { (l.candidate, l.target) } else { (l.target, l.candidate) }).collect()
    };
    assert!(!fwd.is_empty());
    assert_eq!(pairs(&fwd, false), pairs(&back, true));
}
