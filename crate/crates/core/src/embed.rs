//! Secure GraphSAGE-style embeddings with a polynomial activation.
//!
//! Initial embeddings are `σ(x W)` with `σ(z) = q0 + q1 z + q2 z²`, the
//! product and square computed with the pairwise cross-product protocol.
//! Each propagation layer aggregates neighbours (mean or element-wise max),
//! concatenates the vertex's own embedding and applies `σ(· W^k)`.
//!
//! Neighbour lists stay local: party `i` knows only `N^i(v)`, the neighbours
//! contributed by its own triples, and `N(v)` is their multiset union.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::MergedUniverse;
use crate::mpc::{derive_seed, DivisorBound, Mpc, MpcError, RingMatrix, ShareMatrix, ShareVector};
use crate::numeric::{FixedPointConfig, RingValue};
use crate::runtime::{MessageKind, PartyId};

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("fit range must be positive, got {0}")]
    BadRange(f64),
    #[error("only degree-2 activations are supported, got {0}")]
    BadDegree(usize),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// `σ(z) = q0 + q1 z + q2 z²` with public coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyActivation {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
}

impl PolyActivation {
    pub fn new(q0: f64, q1: f64, q2: f64) -> Self {
        Self { q0, q1, q2 }
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.q0 + self.q1 * z + self.q2 * z * z
    }

    pub fn encoded(&self, cfg: &FixedPointConfig) -> Result<[RingValue; 3], MpcError> {
        Ok([cfg.encode(self.q0)?, cfg.encode(self.q1)?, cfg.encode(self.q2)?])
    }
}

impl Default for PolyActivation {
    /// Least-squares sigmoid fit on `[-4, 4]`.
    fn default() -> Self {
        fit_sigmoid_poly(4.0, 2).expect("valid default range")
    }
}

pub const FIT_GRID_POINTS: usize = 1001;

/// Least-squares degree-2 fit of the logistic sigmoid on a uniform grid over
/// `[-a, a]`. Coefficients below 1e-12 in magnitude are snapped to zero, so
/// the odd symmetry of `σ - 1/2` shows up as `q2 == 0`.
pub fn fit_sigmoid_poly(a: f64, degree: usize) -> Result<PolyActivation, EmbedError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(EmbedError::BadRange(a));
    }
    if degree != 2 {
        return Err(EmbedError::BadDegree(degree));
    }
    let m = FIT_GRID_POINTS;
    let zs: Vec<f64> = (0..m).map(|k| -a + 2.0 * a * k as f64 / (m - 1) as f64).collect();
    let design = DMatrix::from_fn(m, 3, |r, c| zs[r].powi(c as i32));
    let target = DVector::from_iterator(m, zs.iter().map(|&z| sigmoid(z)));
    let q = design
        .svd(true, true)
        .solve(&target, 1e-12)
        .expect("full-rank Vandermonde design");
    let snap = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
    Ok(PolyActivation::new(snap(q[0]), snap(q[1]), snap(q[2])))
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Largest `|σ(z) - poly(z)|` over the fit grid.
pub fn fit_residual(act: &PolyActivation, a: f64) -> f64 {
    let m = FIT_GRID_POINTS;
    (0..m)
        .map(|k| -a + 2.0 * a * k as f64 / (m - 1) as f64)
        .map(|z| (sigmoid(z) - act.eval(z)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    /// Mean with the total degree published as a divisor.
    Mean,
    /// Mean with the degree kept shared and secure division.
    MeanSecret,
    /// Element-wise maximum over neighbours.
    Pooling,
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "mean-secret" => Ok(Aggregator::MeanSecret),
            "pooling" => Ok(Aggregator::Pooling),
            _ => Err(format!("unknown aggregator {s:?} (mean, mean-secret, pooling)")),
        }
    }
}

/// Plaintext weights on the fixed-point grid: `input` is `s x d`, each
/// layer `2d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnWeights {
    pub input: RingMatrix,
    pub layers: Vec<RingMatrix>,
}

pub const WEIGHT_RANGE: f64 = 0.1;

impl GnnWeights {
    /// Seeded uniform(-0.1, 0.1) weights.
    pub fn seeded(in_dim: usize, dim: usize, depth: usize, seed: u64, cfg: &FixedPointConfig) -> Self {
        let mut rng = ChaCha20Rng::from_seed(derive_seed(seed, "embed.weights"));
        let mut mat = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| cfg.encode(rng.gen_range(-WEIGHT_RANGE..WEIGHT_RANGE)).expect("small weight"))
                .collect();
            RingMatrix::new(rows, cols, data)
        };
        let input = mat(in_dim, dim);
        let layers = (0..depth).map(|_| mat(2 * dim, dim)).collect();
        Self { input, layers }
    }
}

/// Shared model: weights are input by `owner`, the party that holds the
/// model.
#[derive(Debug, Clone)]
pub struct GnnConfig {
    pub depth: usize,
    pub dim: usize,
    pub aggregator: Aggregator,
    pub act: PolyActivation,
    pub w: ShareMatrix,
    pub layers: Vec<ShareMatrix>,
}

impl GnnConfig {
    pub fn share(
        mpc: &mut Mpc,
        weights: &GnnWeights,
        aggregator: Aggregator,
        act: PolyActivation,
        owner: PartyId,
    ) -> Result<Self, EmbedError> {
        let dim = weights.input.cols;
        if weights.layers.is_empty() {
            return Err(EmbedError::BadConfig("depth must be at least 1".into()));
        }
        if let Some(l) = weights.layers.iter().find(|l| l.rows != 2 * dim || l.cols != dim) {
            return Err(EmbedError::BadConfig(format!(
                "layer weights are {}x{}, expected {}x{dim}",
                l.rows,
                l.cols,
                2 * dim
            )));
        }
        let mut items = vec![(owner, weights.input.data.clone())];
        items.extend(weights.layers.iter().map(|l| (owner, l.data.clone())));
        let mut shared = mpc.input_many(&items)?.into_iter();
        let w = ShareMatrix::new(weights.input.rows, dim, shared.next().expect("input weights"))?;
        let layers = shared
            .map(|v| ShareMatrix::new(2 * dim, dim, v))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            depth: layers.len(),
            dim,
            aggregator,
            act,
            w,
            layers,
        })
    }
}

/// Shared embeddings of every global entity.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    /// `h^0` then one matrix per layer; each `N x d`.
    pub layers: Vec<ShareMatrix>,
    /// Relation embedding table, reserved and left untrained (zero).
    pub relations: Option<ShareMatrix>,
}

impl EmbeddingStore {
    pub fn new(h0: ShareMatrix) -> Self {
        Self {
            layers: vec![h0],
            relations: None,
        }
    }

    /// The deepest embeddings computed so far.
    pub fn last(&self) -> &ShareMatrix {
        self.layers.last().expect("h0 present")
    }
}

/// Elementwise `σ` on shares: one secure square, then `q1 z + q2 z²` with a
/// single truncation and `q0` added by party 1.
pub fn apply_poly(mpc: &mut Mpc, z: &ShareVector, act: &PolyActivation) -> Result<ShareVector, EmbedError> {
    let [q0, q1, q2] = act.encoded(mpc.cfg())?;
    let z2 = mpc.secure_square(z)?;
    let raw = mpc.add(&mpc.scale_public(z, q1), &mpc.scale_public(&z2, q2))?;
    let f = mpc.cfg().frac_bits;
    let t = mpc.truncate(&raw, f)?;
    Ok(mpc.add_public(&t, &vec![q0; t.len()]))
}

/// `h^0 = σ(x W)`.
pub fn secure_init_embeddings(
    mpc: &mut Mpc,
    x: &ShareMatrix,
    w: &ShareMatrix,
    act: &PolyActivation,
) -> Result<ShareMatrix, EmbedError> {
    let z = mpc.secure_matmul(x, w)?;
    let h = apply_poly(mpc, z.as_vector(), act)?;
    Ok(ShareMatrix::new(z.rows, z.cols, h)?)
}

/// Per party, per global entity: the neighbour set from that party's own
/// triples, ignoring direction.
pub fn neighbor_sets(universe: &MergedUniverse) -> Vec<Vec<BTreeSet<usize>>> {
    universe
        .views
        .iter()
        .map(|kg| kg.undirected_neighbors(&universe.ids, universe.len()))
        .collect()
}

fn indicator(sets: &[BTreeSet<usize>]) -> RingMatrix {
    let n = sets.len();
    let mut m = RingMatrix::zeros(n, n);
    for (v, s) in sets.iter().enumerate() {
        for &u in s {
            m.data[v * n + u] = RingValue(1);
        }
    }
    m
}

/// Margin subtracted from non-neighbours before max pooling. Embeddings must
/// stay below half of it in magnitude.
pub const POOL_MASK: f64 = 1024.0;

/// Neighbourhood aggregation `h_{N(v)}` for every vertex. Isolated vertices
/// aggregate to zero.
pub fn secure_aggregate(
    mpc: &mut Mpc,
    h: &ShareMatrix,
    neighbors: &[Vec<BTreeSet<usize>>],
    agg: Aggregator,
) -> Result<ShareMatrix, EmbedError> {
    if neighbors.len() != mpc.n() || neighbors.iter().any(|s| s.len() != h.rows) {
        return Err(EmbedError::BadConfig("one neighbour list per party and vertex".into()));
    }
    match agg {
        Aggregator::Mean => mean_public(mpc, h, neighbors),
        Aggregator::MeanSecret => mean_secret(mpc, h, neighbors),
        Aggregator::Pooling => Ok(max_pool(mpc, h, neighbors)?.0),
    }
}

fn neighbor_sums(mpc: &mut Mpc, h: &ShareMatrix, neighbors: &[Vec<BTreeSet<usize>>]) -> Result<ShareMatrix, MpcError> {
    let mats: Vec<RingMatrix> = neighbors.iter().map(|s| indicator(s)).collect();
    mpc.private_matmul(&mats, h)
}

fn mean_public(mpc: &mut Mpc, h: &ShareMatrix, neighbors: &[Vec<BTreeSet<usize>>]) -> Result<ShareMatrix, EmbedError> {
    let sums = neighbor_sums(mpc, h, neighbors)?;
    let local: Vec<Vec<RingValue>> = neighbors
        .iter()
        .map(|s| s.iter().map(|n| RingValue(n.len() as u64)).collect())
        .collect();
    let published = mpc.publish(&local, MessageKind::PublicDivisor, "embed.degree")?;
    let cfg = *mpc.cfg();
    let d = h.cols;
    let mut factors = Vec::with_capacity(h.rows * d);
    for v in 0..h.rows {
        let deg: u64 = published.iter().map(|p| p[v].0).sum();
        let c = if deg == 0 { RingValue::ZERO } else { cfg.encode(1.0 / deg as f64).map_err(MpcError::from)? };
        factors.extend(std::iter::repeat_n(c, d));
    }
    let scaled = mpc.scale_public_vec(sums.as_vector(), &factors)?;
    let out = mpc.truncate(&scaled, cfg.frac_bits)?;
    Ok(ShareMatrix::new(h.rows, d, out)?)
}

fn mean_secret(mpc: &mut Mpc, h: &ShareMatrix, neighbors: &[Vec<BTreeSet<usize>>]) -> Result<ShareMatrix, EmbedError> {
    let sums = neighbor_sums(mpc, h, neighbors)?;
    let (rows, d) = (h.rows, h.cols);
    let cfg = *mpc.cfg();
    // Each party's local degree is its share of the total degree.
    let parts: Vec<Vec<RingValue>> = neighbors
        .iter()
        .map(|s| s.iter().map(|n| RingValue((n.len() as u64) << cfg.frac_bits)).collect())
        .collect();
    let deg = ShareVector::from_parts(parts)?;
    let one = mpc.constant(&vec![cfg.one(); rows]);
    let has_neighbors = mpc.compare_ge(&deg, &one)?;
    let divisor = mpc.select(&has_neighbors, &deg, &one)?;
    let max_deg = (h.rows * mpc.n()).max(1) as f64;
    let row_of = |k: usize| k / d;
    let idx: Vec<usize> = (0..rows * d).map(row_of).collect();
    let q = mpc.div(sums.as_vector(), &divisor.gather(&idx), DivisorBound::below(max_deg))?;
    let mask: Vec<bool> = idx.iter().map(|&v| has_neighbors[v]).collect();
    let zero = ShareVector::zeros(mpc.n(), rows * d);
    let out = mpc.select(&mask, &q, &zero)?;
    Ok(ShareMatrix::new(rows, d, out)?)
}

/// Element-wise max over each vertex's neighbours. Non-neighbours are pushed
/// down by [`POOL_MASK`] and the tournament runs over all entities, so the
/// neighbour sets are never revealed as index lists. Returns the winners'
/// global ids, `None` for isolated vertices.
pub fn max_pool(
    mpc: &mut Mpc,
    h: &ShareMatrix,
    neighbors: &[Vec<BTreeSet<usize>>],
) -> Result<(ShareMatrix, Vec<Vec<Option<usize>>>), EmbedError> {
    let (rows, d) = (h.rows, h.cols);
    let n = mpc.n();
    let cfg = *mpc.cfg();
    let one_int = mpc.constant(&vec![RingValue(1); rows * rows]);
    // absent = Π_i (1 - [u ∈ N^i(v)]), exact on integers.
    let mut absent: Option<ShareVector> = None;
    for p in PartyId::all(n) {
        let mine = mpc.private_as_share(p, &indicator(&neighbors[p.index()]).data);
        let not_mine = mpc.sub(&one_int, &mine)?;
        absent = Some(match absent {
            None => not_mine,
            Some(acc) => mpc.mul_raw(&acc, &not_mine)?,
        });
    }
    let absent = absent.expect("n >= 2");
    let penalty = mpc.scale_public(&absent, cfg.encode(POOL_MASK).map_err(MpcError::from)?);
    // Candidate vector for (v, k): h[u][k] - penalty[v][u] over u.
    let mut cands = Vec::with_capacity(rows * d);
    for v in 0..rows {
        for k in 0..d {
            let vals = h.as_vector().gather(&(0..rows).map(|u| u * d + k).collect::<Vec<_>>());
            let pen = penalty.slice(v * rows, rows);
            cands.push(mpc.sub(&vals, &pen)?);
        }
    }
    let degree_int = {
        let parts = absent
            .parts()
            .iter()
            .enumerate()
            .map(|(p, a)| {
                (0..rows)
                    .map(|v| {
                        let s: RingValue = a[v * rows..(v + 1) * rows].iter().copied().sum();
                        // Party 1 adds `rows`: degree = rows - Σ_u absent.
                        let base = if p == 0 { RingValue(rows as u64) } else { RingValue::ZERO };
                        (base - s).shl(cfg.frac_bits)
                    })
                    .collect()
            })
            .collect();
        ShareVector::from_parts(parts)?
    };
    let ones = mpc.constant(&vec![cfg.one(); rows]);
    let has_neighbors = mpc.compare_ge(&degree_int, &ones)?;
    let winners = mpc.argmax_many(&cands)?;
    let mut out = ShareVector::zeros(n, 0);
    let mut idx = vec![vec![None; d]; rows];
    for (vk, (w, val)) in winners.into_iter().enumerate() {
        let v = vk / d;
        if has_neighbors[v] {
            idx[v][vk % d] = Some(w);
            out = ShareVector::concat(&[&out, &val]);
        } else {
            out = ShareVector::concat(&[&out, &ShareVector::zeros(n, 1)]);
        }
    }
    Ok((ShareMatrix::new(rows, d, out)?, idx))
}

/// Row-wise `[a | b]`, local.
pub fn concat_cols(a: &ShareMatrix, b: &ShareMatrix) -> Result<ShareMatrix, MpcError> {
    if a.rows != b.rows {
        return Err(MpcError::DimensionMismatch {
            op: "concat",
            left: format!("{}x{}", a.rows, a.cols),
            right: format!("{}x{}", b.rows, b.cols),
        });
    }
    let rows: Vec<ShareVector> = (0..a.rows)
        .map(|r| ShareVector::concat(&[&a.row(r), &b.row(r)]))
        .collect();
    ShareMatrix::rows_of(&rows)
}

/// Runs the configured layers on top of `store`'s last embeddings.
pub fn secure_propagate(
    mpc: &mut Mpc,
    mut store: EmbeddingStore,
    cfg: &GnnConfig,
    neighbors: &[Vec<BTreeSet<usize>>],
) -> Result<EmbeddingStore, EmbedError> {
    for wk in &cfg.layers {
        let prev = store.last().clone();
        let agg = secure_aggregate(mpc, &prev, neighbors, cfg.aggregator)?;
        let cat = concat_cols(&prev, &agg)?;
        let next = secure_init_embeddings(mpc, &cat, wk, &cfg.act)?;
        store.layers.push(next);
    }
    Ok(store)
}

/// Shared `N x s` feature matrix of every numeric or categorical slot.
pub fn feature_matrix(universe: &MergedUniverse, cfg: &FixedPointConfig) -> Result<ShareMatrix, MpcError> {
    let s = universe.schema.len();
    let cols: Vec<ShareVector> = (1..=s)
        .map(|slot| universe.property_column(slot, cfg))
        .collect::<Result<_, _>>()?;
    let n_ent = universe.len();
    let idx: Vec<usize> = (0..n_ent * s).map(|k| (k % s) * n_ent + k / s).collect();
    let refs: Vec<&ShareVector> = cols.iter().collect();
    ShareMatrix::new(n_ent, s, ShareVector::concat(&refs).gather(&idx))
}

/// Full pipeline over a merged universe.
pub fn secure_embed(mpc: &mut Mpc, universe: &MergedUniverse, cfg: &GnnConfig) -> Result<EmbeddingStore, EmbedError> {
    let x = feature_matrix(universe, mpc.cfg())?;
    let h0 = secure_init_embeddings(mpc, &x, &cfg.w, &cfg.act)?;
    let mut store = secure_propagate(mpc, EmbeddingStore::new(h0), cfg, &neighbor_sets(universe))?;
    store.relations = Some(ShareMatrix::new(
        universe.relations.len(),
        cfg.dim,
        ShareVector::zeros(mpc.n(), universe.relations.len() * cfg.dim),
    )?);
    Ok(store)
}

/// Shared squared error `Σ (ŷ - y)²`, length-1 vector.
pub fn secure_loss(mpc: &mut Mpc, yhat: &ShareVector, y: &ShareVector) -> Result<ShareVector, EmbedError> {
    let d = mpc.sub(yhat, y)?;
    let sq = mpc.mul(&d, &d)?;
    let parts = sq.parts().iter().map(|p| vec![p.iter().copied().sum()]).collect();
    Ok(ShareVector::from_parts(parts)?)
}

/// Single-machine references for the secure pipeline.
pub mod oracle {
    use super::*;

    /// Plaintext feature matrix straight from the parties' original rows,
    /// merged with the same policy.
    pub fn plain_features(u: &MergedUniverse, kgs: &[crate::kgstore::KnowledgeGraph], c: &FixedPointConfig) -> RingMatrix {
        let s = u.schema.len();
        let mut data = Vec::new();
        for e in &u.entities {
            for slot in 1..=s {
                let vals: Vec<f64> = e.members.iter().map(|(p, l)| kgs[p.index()].plain_number(l, slot).unwrap()).collect();
                let merged = if vals.len() == 1 {
                    vals[0]
                } else {
                    crate::merge::plain_merge(&u.policy.rules[slot - 1], &vals, u.schema.slot(slot).unwrap().categories.len())
                };
                data.push(c.encode(merged).unwrap());
            }
        }
        RingMatrix::new(u.len(), s, data)
    }

    fn trunc(v: RingValue, f: u32) -> RingValue {
        v.shr_signed(f)
    }

    /// Fixed-point `σ` with the secure truncation schedule.
    pub fn poly_fx(z: RingValue, act: &PolyActivation, cfg: &FixedPointConfig) -> RingValue {
        let [q0, q1, q2] = act.encoded(cfg).expect("encodable coefficients");
        let f = cfg.frac_bits;
        let z2 = trunc(z * z, f);
        trunc(q1 * z + q2 * z2, f) + q0
    }

    pub fn layer_fx(x: &RingMatrix, w: &RingMatrix, act: &PolyActivation, cfg: &FixedPointConfig) -> RingMatrix {
        let mut z = x.matmul(w);
        for v in z.data.iter_mut() {
            *v = poly_fx(trunc(*v, cfg.frac_bits), act, cfg);
        }
        z
    }

    /// Aggregation on plaintext ring values: the mean divides by the
    /// multiset degree through the same encoded reciprocal; pooling takes the
    /// signed maximum over the union of neighbour sets.
    pub fn aggregate_fx(
        h: &RingMatrix,
        neighbors: &[Vec<BTreeSet<usize>>],
        agg: Aggregator,
        cfg: &FixedPointConfig,
    ) -> RingMatrix {
        let (rows, d) = (h.rows, h.cols);
        let mut out = RingMatrix::zeros(rows, d);
        for v in 0..rows {
            match agg {
                Aggregator::Mean | Aggregator::MeanSecret => {
                    let deg: usize = neighbors.iter().map(|p| p[v].len()).sum();
                    if deg == 0 {
                        continue;
                    }
                    let c = cfg.encode(1.0 / deg as f64).expect("reciprocal");
                    for k in 0..d {
                        let s: RingValue = neighbors.iter().flat_map(|p| p[v].iter()).map(|&u| h.get(u, k)).sum();
                        out.data[v * d + k] = match agg {
                            Aggregator::Mean => trunc(s * c, cfg.frac_bits),
                            _ => cfg.encode(cfg.decode(s) / deg as f64).expect("mean in range"),
                        };
                    }
                }
                Aggregator::Pooling => {
                    let union: BTreeSet<usize> = neighbors.iter().flat_map(|p| p[v].iter().copied()).collect();
                    for k in 0..d {
                        if let Some(m) = union.iter().map(|&u| h.get(u, k).signed()).max() {
                            out.data[v * d + k] = RingValue::from_signed(m);
                        }
                    }
                }
            }
        }
        out
    }

    fn concat(a: &RingMatrix, b: &RingMatrix) -> RingMatrix {
        let cols = a.cols + b.cols;
        let data = (0..a.rows)
            .flat_map(|r| (0..a.cols).map(move |c| (r, c, true)).chain((0..b.cols).map(move |c| (r, c, false))))
            .map(|(r, c, left)| if left { a.get(r, c) } else { b.get(r, c) })
            .collect();
        RingMatrix::new(a.rows, cols, data)
    }

    /// Fixed-point forward pass; returns `h^0 .. h^K`.
    pub fn forward_fx(
        x: &RingMatrix,
        weights: &GnnWeights,
        neighbors: &[Vec<BTreeSet<usize>>],
        agg: Aggregator,
        act: &PolyActivation,
        cfg: &FixedPointConfig,
    ) -> Vec<RingMatrix> {
        let mut hs = vec![layer_fx(x, &weights.input, act, cfg)];
        for wk in &weights.layers {
            let prev = hs.last().expect("h0");
            let a = aggregate_fx(prev, neighbors, agg, cfg);
            hs.push(layer_fx(&concat(prev, &a), wk, act, cfg));
        }
        hs
    }

    /// Double-precision forward pass. Returns the layers and the largest
    /// pre-activation magnitude seen.
    pub fn forward_f64(
        x: &[Vec<f64>],
        weights: &GnnWeights,
        neighbors: &[Vec<BTreeSet<usize>>],
        agg: Aggregator,
        act: &PolyActivation,
        cfg: &FixedPointConfig,
    ) -> (Vec<Vec<Vec<f64>>>, f64) {
        let dec = |m: &RingMatrix| -> Vec<Vec<f64>> {
            (0..m.rows).map(|r| (0..m.cols).map(|c| cfg.decode(m.get(r, c))).collect()).collect()
        };
        let mut max_z: f64 = 0.0;
        let mut layer = |x: &[Vec<f64>], w: &[Vec<f64>]| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..w[0].len())
                        .map(|c| {
                            let z: f64 = row.iter().zip(w).map(|(a, wr)| a * wr[c]).sum();
                            max_z = max_z.max(z.abs());
                            act.eval(z)
                        })
                        .collect()
                })
                .collect()
        };
        let mut hs = vec![layer(x, &dec(&weights.input))];
        for wk in &weights.layers {
            let prev = hs.last().expect("h0").clone();
            let d = prev[0].len();
            let aggd: Vec<Vec<f64>> = (0..prev.len())
                .map(|v| match agg {
                    Aggregator::Mean | Aggregator::MeanSecret => {
                        let ns: Vec<usize> = neighbors.iter().flat_map(|p| p[v].iter().copied()).collect();
                        if ns.is_empty() {
                            return vec![0.0; d];
                        }
                        (0..d).map(|k| ns.iter().map(|&u| prev[u][k]).sum::<f64>() / ns.len() as f64).collect()
                    }
                    Aggregator::Pooling => {
                        let ns: BTreeSet<usize> = neighbors.iter().flat_map(|p| p[v].iter().copied()).collect();
                        if ns.is_empty() {
                            return vec![0.0; d];
                        }
                        (0..d).map(|k| ns.iter().map(|&u| prev[u][k]).fold(f64::NEG_INFINITY, f64::max)).collect()
                    }
                })
                .collect();
            let cat: Vec<Vec<f64>> = prev.iter().zip(&aggd).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
            hs.push(layer(&cat, &dec(wk)));
        }
        (hs, max_z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    fn max_err(m: &mut Mpc, got: &ShareVector, want: &[RingValue]) -> f64 {
        let c = *m.cfg();
        got.reconstruct_local()
            .iter()
            .zip(want)
            .map(|(&a, &b)| (c.decode(a) - c.decode(b)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sigmoid_fit_is_odd_and_centered() {
        let q = fit_sigmoid_poly(4.0, 2).unwrap();
        assert!((q.eval(0.0) - 0.5).abs() <= 1e-6);
        assert!(q.q2.abs() <= 1e-6);
        // Independent value: numpy lstsq on the same grid.
        assert!((q.q1 - 0.153107).abs() < 1e-5, "{q:?}");
        assert!((fit_residual(&q, 4.0) - 0.130413).abs() < 1e-5);
        assert!((fit_sigmoid_poly(2.0, 2).unwrap().q1 - 0.210839).abs() < 1e-5);
        assert_eq!(fit_sigmoid_poly(0.0, 2), Err(EmbedError::BadRange(0.0)));
        assert_eq!(fit_sigmoid_poly(1.0, 3), Err(EmbedError::BadDegree(3)));
    }

    #[test]
    fn init_embeddings_closed_forms() {
        let c = cfg();
        let mut m = Mpc::new(2, c, 1).unwrap();
        let act = PolyActivation::default();
        let zero_x = ShareMatrix::new(2, 3, ShareVector::zeros(2, 6)).unwrap();
        let w = ShareMatrix::new(3, 2, m.input_f64(PartyId(1), &[0.1; 6]).unwrap()).unwrap();
        let h = secure_init_embeddings(&mut m, &zero_x, &w, &act).unwrap();
        for v in h.as_vector().reconstruct_local() {
            assert_eq!(c.decode(v), c.decode(c.encode(act.q0).unwrap()));
        }
        let x = ShareMatrix::new(1, 1, m.input_f64(PartyId(1), &[1.0]).unwrap()).unwrap();
        let one = ShareMatrix::new(1, 1, m.input_f64(PartyId(2), &[1.0]).unwrap()).unwrap();
        let h = secure_init_embeddings(&mut m, &x, &one, &PolyActivation::new(0.5, 0.25, 0.0)).unwrap();
        assert!((c.decode(h.as_vector().reconstruct_local()[0]) - 0.75).abs() <= c.ulp());
    }

    #[test]
    fn init_embeddings_match_fixed_point_oracle() {
        let c = cfg();
        let act = PolyActivation::new(0.5, 0.2, 0.05);
        for n in [2, 3] {
            let mut m = Mpc::new(n, c, 2).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            let xs: Vec<RingValue> = (0..12).map(|_| c.encode(rng.gen_range(-2.0..2.0)).unwrap()).collect();
            let ws: Vec<RingValue> = (0..6).map(|_| c.encode(rng.gen_range(-1.0..1.0)).unwrap()).collect();
            let x = ShareMatrix::new(4, 3, m.input(PartyId(1), &xs).unwrap()).unwrap();
            let w = ShareMatrix::new(3, 2, m.input(PartyId(2), &ws).unwrap()).unwrap();
            let before = m.dealer_stats();
            let h = secure_init_embeddings(&mut m, &x, &w, &act).unwrap();
            let after = m.dealer_stats();
            let want = oracle::layer_fx(&RingMatrix::new(4, 3, xs), &RingMatrix::new(3, 2, ws), &act, &c);
            assert!(max_err(&mut m, h.as_vector(), &want.data) <= 2f64.powi(-12));
            // z: one matrix triple per ordered pair; z²: one elementwise
            // triple per unordered pair and entry.
            assert_eq!(after.matrix_triples - before.matrix_triples, (n * (n - 1)) as u64);
            assert_eq!(after.pair_triples - before.pair_triples, (n * (n - 1) / 2 * 8) as u64);
            assert_eq!(after.triples, before.triples);
        }
    }

    fn star(n_ent: usize, edges: &[(usize, usize, usize)], parties: usize) -> Vec<Vec<BTreeSet<usize>>> {
        let mut out = vec![vec![BTreeSet::new(); n_ent]; parties];
        for &(p, a, b) in edges {
            out[p][a].insert(b);
            out[p][b].insert(a);
        }
        out
    }

    #[test]
    fn mean_of_equal_neighbours() {
        let c = cfg();
        for agg in [Aggregator::Mean, Aggregator::MeanSecret] {
            let mut m = Mpc::new(2, c, 3).unwrap();
            // Vertex 0 has neighbours 1, 2 (party 1) and 3 (party 2); 4 is isolated.
            let nb = star(5, &[(0, 0, 1), (0, 0, 2), (1, 0, 3)], 2);
            let v = 0.625;
            let h = ShareMatrix::new(5, 1, m.input_f64(PartyId(2), &[9.0, v, v, v, 3.0]).unwrap()).unwrap();
            let a = secure_aggregate(&mut m, &h, &nb, agg).unwrap().into_vector().reconstruct_local();
            // Division by 3 goes through a rounded reciprocal.
            assert!((c.decode(a[0]) - v).abs() <= 4.0 * c.ulp(), "{agg:?}");
            assert_eq!(c.decode(a[4]), 0.0);
            assert!((c.decode(a[1]) - 9.0).abs() <= 4.0 * c.ulp());
        }
    }

    #[test]
    fn pooling_takes_the_maximum() {
        let c = cfg();
        let mut m = Mpc::new(2, c, 4).unwrap();
        let nb = star(4, &[(0, 0, 1), (1, 0, 2), (1, 0, 3)], 2);
        let h = ShareMatrix::new(4, 1, m.input_f64(PartyId(1), &[7.0, 1.0, 5.0, 3.0]).unwrap()).unwrap();
        let (a, idx) = max_pool(&mut m, &h, &nb).unwrap();
        assert_eq!(c.decode(a.into_vector().reconstruct_local()[0]), 5.0);
        assert_eq!(idx[0][0], Some(2));
        assert_eq!(idx[1][0], Some(0));
    }

    #[test]
    fn loss_closed_forms() {
        let c = cfg();
        let mut m = Mpc::new(2, c, 5).unwrap();
        let y = m.input_f64(PartyId(1), &[0.5, 1.5]).unwrap();
        let yh = m.input_f64(PartyId(2), &[1.5, 0.5]).unwrap();
        let l = secure_loss(&mut m, &yh, &y).unwrap().reconstruct_local();
        assert!((c.decode(l[0]) - 2.0).abs() <= 2.0 * c.ulp());
        let l0 = secure_loss(&mut m, &y, &y).unwrap().reconstruct_local();
        assert!(c.decode(l0[0]).abs() <= 2.0 * 2f64.powi(1 - 16));
    }

    #[test]
    fn loss_matches_plaintext() {
        let c = cfg();
        let mut m = Mpc::new(2, c, 6).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..16).map(|_| (rng.gen_range(-3.0..3.0) * 256.0f64).round() / 256.0).collect();
        let b: Vec<f64> = (0..16).map(|_| (rng.gen_range(-3.0..3.0) * 256.0f64).round() / 256.0).collect();
        let sa = m.input_f64(PartyId(1), &a).unwrap();
        let sb = m.input_f64(PartyId(2), &b).unwrap();
        let got = c.decode(secure_loss(&mut m, &sa, &sb).unwrap().reconstruct_local()[0]);
        let want: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((got - want).abs() <= 2f64.powi(-16 + 5));
    }

    #[test]
    fn fixture_pipeline_matches_oracles() {
        let c = cfg();
        let kgs = crate::fixtures::example_pair();
        for agg in [Aggregator::Mean, Aggregator::MeanSecret, Aggregator::Pooling] {
            let mut m = Mpc::new(2, c, 21).unwrap();
            let u = crate::merge::merge_kgs(&mut m, &kgs, None, &Default::default(), 21).unwrap();
            let weights = GnnWeights::seeded(u.schema.len(), 4, 2, 21, &c);
            let act = PolyActivation::default();
            let g = GnnConfig::share(&mut m, &weights, agg, act, PartyId(1)).unwrap();
            let store = secure_embed(&mut m, &u, &g).unwrap();
            let nb = neighbor_sets(&u);
            let x = oracle::plain_features(&u, &kgs, &c);
            let fx = oracle::forward_fx(&x, &weights, &nb, agg, &act, &c);
            let got = store.last().as_vector().reconstruct_local();
            assert!(max_err(&mut m, store.last().as_vector(), &fx[2].data) <= 2f64.powi(-16 + 6), "{agg:?}");
            let xf: Vec<Vec<f64>> = (0..x.rows).map(|r| (0..x.cols).map(|k| c.decode(x.get(r, k))).collect()).collect();
            let (fl, max_z) = oracle::forward_f64(&xf, &weights, &nb, agg, &act, &c);
            assert!(max_z <= 4.0);
            let worst = got.iter().zip(fl[2].iter().flatten()).map(|(&a, b)| (c.decode(a) - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 0.07, "{agg:?}: {worst}");
            assert_eq!(store.relations.as_ref().unwrap().rows, u.relations.len());
        }
    }
}
