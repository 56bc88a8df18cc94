//! Two-step entity linking: local lexical features, then secure ranking.
//!
//! Features are hashed character trigrams of the padded canonical key, a 0/1
//! vector of `D` slots. Similarity is the Dice coefficient
//! `2 |A ∩ B| / (|A| + |B|)` over the slot sets, computed on shares. Only
//! the winning candidate's similarity is opened per target.

use sha2::{Digest, Sha256};

use crate::mpc::{DivisorBound, Mpc, MpcError, ShareVector};
use crate::numeric::RingValue;
use crate::runtime::{MessageKind, PartyId};

pub const DEFAULT_FEATURE_DIM: usize = 128;
pub const DEFAULT_LINK_THRESHOLD: f64 = 0.55;

fn padded_chars(key: &str) -> Vec<char> {
    "  ".chars().chain(key.chars()).chain(" ".chars()).collect()
}

/// Distinct character trigrams of the padded key.
pub fn trigrams(key: &str) -> Vec<String> {
    let chars = padded_chars(key);
    let mut out: Vec<String> = chars.windows(3).map(|w| w.iter().collect()).collect();
    out.sort();
    out.dedup();
    out
}

fn slot_of(trigram: &str, dim: usize) -> usize {
    let h = Sha256::digest(trigram.as_bytes());
    (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64) as usize
}

/// 0/1 feature vector of `key`.
pub fn trigram_features(key: &str, dim: usize) -> Vec<u8> {
    let mut v = vec![0u8; dim];
    for t in trigrams(key) {
        v[slot_of(&t, dim)] = 1;
    }
    v
}

/// Plaintext Dice similarity of two feature vectors.
pub fn dice(a: &[u8], b: &[u8]) -> f64 {
    let dot: u32 = a.iter().zip(b).map(|(&x, &y)| (x & y) as u32).sum();
    let na: u32 = a.iter().map(|&x| x as u32).sum();
    let nb: u32 = b.iter().map(|&x| x as u32).sum();
    if na + nb == 0 {
        return 0.0;
    }
    2.0 * dot as f64 / (na + nb) as f64
}

/// A linked pair: indices into the target and candidate lists with the
/// opened similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub target: usize,
    pub candidate: usize,
    pub similarity: f64,
}

/// Secure linking of `targets` (owned by `ti`) against `candidates`
/// (owned by `ci`). Targets are processed in order; a linked candidate is
/// no longer available to later targets.
pub fn link_entities(
    mpc: &mut Mpc,
    ti: PartyId,
    targets: &[String],
    ci: PartyId,
    candidates: &[String],
    dim: usize,
    threshold: f64,
) -> Result<Vec<Link>, MpcError> {
    if targets.is_empty() || candidates.is_empty() {
        return Ok(Vec::new());
    }
    let as_ring = |keys: &[String]| -> Vec<RingValue> {
        keys.iter()
            .flat_map(|k| trigram_features(k, dim))
            .map(|b| RingValue(b as u64))
            .collect()
    };
    let mut shared = mpc.input_many(&[(ti, as_ring(targets)), (ci, as_ring(candidates))])?;
    let cand_sh = shared.pop().expect("candidates");
    let targ_sh = shared.pop().expect("targets");

    // Pair (t, c) occupies block t * C + c of length dim.
    let (t_n, c_n) = (targets.len(), candidates.len());
    let mut left_idx = Vec::with_capacity(t_n * c_n * dim);
    let mut right_idx = Vec::with_capacity(t_n * c_n * dim);
    for t in 0..t_n {
        for c in 0..c_n {
            left_idx.extend(t * dim..(t + 1) * dim);
            right_idx.extend(c * dim..(c + 1) * dim);
        }
    }
    let prod = mpc.mul_raw(&targ_sh.gather(&left_idx), &cand_sh.gather(&right_idx))?;
    let block_sum = |v: &ShareVector, blocks: usize| -> ShareVector {
        let parts = v
            .parts()
            .iter()
            .map(|p| (0..blocks).map(|b| p[b * dim..(b + 1) * dim].iter().copied().sum()).collect())
            .collect();
        ShareVector::from_parts(parts).expect("same party count")
    };
    let dots = block_sum(&prod, t_n * c_n);
    let t_counts = block_sum(&targ_sh, t_n);
    let c_counts = block_sum(&cand_sh, c_n);

    let f = mpc.cfg().frac_bits;
    let pair_t: Vec<usize> = (0..t_n * c_n).map(|k| k / c_n).collect();
    let pair_c: Vec<usize> = (0..t_n * c_n).map(|k| k % c_n).collect();
    let denom = mpc.add(&t_counts.gather(&pair_t), &c_counts.gather(&pair_c))?;
    let denom_fx = mpc.scale_public(&denom, RingValue(1u64 << f));
    let numer_fx = mpc.scale_public(&dots, RingValue(2u64 << f));
    let bound = DivisorBound::below((2 * dim) as f64);
    let sims = mpc.div(&numer_fx, &denom_fx, bound)?;

    let cfg = *mpc.cfg();
    let mut available: Vec<usize> = (0..c_n).collect();
    let mut links = Vec::new();
    for t in 0..t_n {
        if available.is_empty() {
            break;
        }
        let idx: Vec<usize> = available.iter().map(|&c| t * c_n + c).collect();
        let (winner, best) = mpc.argmax(&sims.gather(&idx))?;
        let opened = mpc.open(&best, MessageKind::Output, "link.similarity")?;
        let similarity = cfg.decode(opened[0]);
        if similarity >= threshold {
            let candidate = available.remove(winner);
            links.push(Link {
                target: t,
                candidate,
                similarity,
            });
        }
    }
    Ok(links)
}
