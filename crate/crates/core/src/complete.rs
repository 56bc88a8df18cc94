//! Completion from shared embeddings: property prediction `σ(h W_pro)` and
//! triple scoring `σ(σ(h_head + h_tail) · W_tri)`.
//!
//! Scores stay shared. Ranking opens only the comparison outcomes of the
//! argmax tournaments, so callers learn the order and not the scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::embed::{apply_poly, secure_init_embeddings, EmbedError, PolyActivation};
use crate::mpc::{derive_seed, Mpc, MpcError, RingMatrix, ShareMatrix, ShareVector};
use crate::numeric::{FixedPointConfig, RingValue};
use crate::runtime::PartyId;

#[derive(Debug, Error, PartialEq)]
pub enum CompleteError {
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("embedding has {got} dimensions, head expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// Seeded uniform(-r, r) matrix on the fixed-point grid.
pub fn seeded_matrix(rows: usize, cols: usize, range: f64, seed: u64, label: &str, cfg: &FixedPointConfig) -> RingMatrix {
    let mut rng = ChaCha20Rng::from_seed(derive_seed(seed, label));
    let data = (0..rows * cols)
        .map(|_| cfg.encode(rng.gen_range(-range..range)).expect("small weight"))
        .collect();
    RingMatrix::new(rows, cols, data)
}

/// Maps a `d`-dimensional embedding to `s` property slots.
#[derive(Debug, Clone)]
pub struct PropertyHead {
    /// Shared `d x s`.
    pub w_pro: ShareMatrix,
    pub act: PolyActivation,
}

impl PropertyHead {
    pub fn share(mpc: &mut Mpc, w: &RingMatrix, act: PolyActivation, owner: PartyId) -> Result<Self, CompleteError> {
        let v = mpc.input(owner, &w.data)?;
        Ok(Self {
            w_pro: ShareMatrix::new(w.rows, w.cols, v)?,
            act,
        })
    }
}

/// Property rows for a batch of embeddings (`m x d` in, `m x s` out).
pub fn complete_property(mpc: &mut Mpc, h: &ShareMatrix, head: &PropertyHead) -> Result<ShareMatrix, CompleteError> {
    if h.cols != head.w_pro.rows {
        return Err(CompleteError::DimensionMismatch {
            got: h.cols,
            want: head.w_pro.rows,
        });
    }
    Ok(secure_init_embeddings(mpc, h, &head.w_pro, &head.act)?)
}

/// Triple plausibility scorer; one per relation when keyed.
#[derive(Debug, Clone)]
pub struct TripleScorer {
    /// Shared `d x 1`.
    pub w_tri: ShareMatrix,
    pub act: PolyActivation,
}

impl TripleScorer {
    pub fn share(mpc: &mut Mpc, w: &RingMatrix, act: PolyActivation, owner: PartyId) -> Result<Self, CompleteError> {
        let v = mpc.input(owner, &w.data)?;
        Ok(Self {
            w_tri: ShareMatrix::new(w.rows, 1, v)?,
            act,
        })
    }

    /// Seeded uniform(-1, 1) weights for relation `relation`.
    pub fn seeded_weights(dim: usize, relation: Option<u32>, seed: u64, cfg: &FixedPointConfig) -> RingMatrix {
        let label = match relation {
            Some(r) => format!("complete.w_tri.{r}"),
            None => "complete.w_tri".to_string(),
        };
        seeded_matrix(dim, 1, 1.0, seed, &label, cfg)
    }

    pub fn dim(&self) -> usize {
        self.w_tri.rows
    }
}

/// Scores of the pairs `(heads[k], tails[k])`, row-stacked `m x d` inputs.
pub fn score_triples(
    mpc: &mut Mpc,
    heads: &ShareMatrix,
    tails: &ShareMatrix,
    scorer: &TripleScorer,
) -> Result<ShareVector, CompleteError> {
    for m in [heads, tails] {
        if m.cols != scorer.dim() {
            return Err(CompleteError::DimensionMismatch {
                got: m.cols,
                want: scorer.dim(),
            });
        }
    }
    if heads.rows != tails.rows {
        return Err(CompleteError::DimensionMismatch {
            got: tails.rows,
            want: heads.rows,
        });
    }
    let sum = mpc.add(heads.as_vector(), tails.as_vector())?;
    let inner = ShareMatrix::new(heads.rows, heads.cols, apply_poly(mpc, &sum, &scorer.act)?)?;
    let z = mpc.secure_matmul(&inner, &scorer.w_tri)?;
    Ok(apply_poly(mpc, z.as_vector(), &scorer.act)?)
}

pub fn score_triple(
    mpc: &mut Mpc,
    h_head: &ShareVector,
    h_tail: &ShareVector,
    scorer: &TripleScorer,
) -> Result<ShareVector, CompleteError> {
    let row = |v: &ShareVector| ShareMatrix::new(1, v.len(), v.clone());
    score_triples(mpc, &row(h_head)?, &row(h_tail)?, scorer)
}

/// Value that removes an already ranked candidate from later rounds.
pub const RANK_FLOOR: f64 = -4096.0;

/// Top-`k` candidate indices by score, via `k` argmax rounds (ties to the
/// lower index). Returns the order and the still-shared scores.
pub fn rank_candidates(
    mpc: &mut Mpc,
    target: &ShareVector,
    candidates: &ShareMatrix,
    scorer: &TripleScorer,
    k: usize,
) -> Result<(Vec<usize>, ShareVector), CompleteError> {
    let m = candidates.rows;
    if m == 0 {
        return Err(CompleteError::EmptyCandidates);
    }
    let idx: Vec<usize> = (0..m * target.len()).map(|i| i % target.len()).collect();
    let heads = ShareMatrix::new(m, target.len(), target.gather(&idx))?;
    let scores = score_triples(mpc, &heads, candidates, scorer)?;
    let floor = mpc.constant(&vec![mpc.cfg().encode(RANK_FLOOR).map_err(MpcError::from)?; m]);
    let mut live = scores.clone();
    let mut order = Vec::new();
    for _ in 0..k.min(m) {
        let (w, _) = mpc.argmax(&live)?;
        order.push(w);
        let mut taken = vec![false; m];
        taken[w] = true;
        live = mpc.select(&taken, &floor, &live)?;
    }
    Ok((order, scores))
}

/// Fixed-point references with the secure truncation schedule.
pub mod oracle {
    use super::*;
    use crate::embed::oracle::{layer_fx, poly_fx};

    pub fn property_fx(h: &RingMatrix, w: &RingMatrix, act: &PolyActivation, cfg: &FixedPointConfig) -> RingMatrix {
        layer_fx(h, w, act, cfg)
    }

    pub fn score_fx(head: &[RingValue], tail: &[RingValue], w: &RingMatrix, act: &PolyActivation, cfg: &FixedPointConfig) -> RingValue {
        let inner: Vec<RingValue> = head.iter().zip(tail).map(|(&a, &b)| poly_fx(a + b, act, cfg)).collect();
        let z = crate::numeric::dot_truncate(&inner, &w.data, cfg);
        poly_fx(z, act, cfg)
    }

    /// Indices sorted by descending score, ties to the lower index.
    pub fn rank_fx(scores: &[RingValue]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].signed().cmp(&scores[a].signed()).then(a.cmp(&b)));
        idx
    }
}
