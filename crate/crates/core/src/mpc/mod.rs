//! n-party additive secret sharing over Z_{2^64} with a trusted dealer.
//!
//! [`Mpc`] drives all parties in lockstep. Every local step only touches the
//! acting party's shares; all cross-party data goes through the [`Network`],
//! so the transcript is the complete view of a semi-honest observer.

mod arith;
mod compare;
pub mod dealer;
mod div;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::{FixedPointConfig, NumericError, RingValue};
use crate::runtime::{MessageKind, Network, PartyId, ProtocolError, Transcript};

pub use dealer::{Dealer, DealerStats};
pub use div::DivisorBound;

/// Comparison mask width: masks are uniform in `[1, 2^COMPARE_MASK_BITS]`.
pub const COMPARE_MASK_BITS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("at least two parties are required, got {0}")]
    InvalidPartyCount(usize),
    #[error("no share from {0}")]
    MissingShare(PartyId),
    #[error("two shares from {0}")]
    DuplicateShare(PartyId),
    #[error("{op}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("dealer material exhausted: {0}")]
    TripleExhausted(String),
    #[error("dealer file: {0}")]
    DealerFile(String),
    #[error("divisor {value} at index {index} lies outside the declared window for 2^{exponent}")]
    BadNormalization {
        index: usize,
        value: f64,
        exponent: i32,
    },
    #[error("divisor exponent {exponent} outside [{min}, {max}]")]
    DivisorRange { exponent: i32, min: i32, max: i32 },
    #[error("comparison magnitude overflow: {0}")]
    MagnitudeOverflow(String),
    #[error("empty vector")]
    EmptyVector,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// One party's share of a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share {
    pub owner: PartyId,
    pub value: RingValue,
}

/// Splits `x` into `n` values that sum to `x`; the first `n - 1` are uniform.
pub(crate) fn split_additive<R: RngCore>(x: RingValue, n: usize, rng: &mut R) -> Vec<RingValue> {
    let mut out: Vec<RingValue> = (1..n).map(|_| RingValue(rng.gen())).collect();
    let rest: RingValue = out.iter().copied().sum();
    out.push(x - rest);
    out
}

/// Shr: `n` uniformly random shares of `x`.
pub fn share<R: RngCore>(x: RingValue, n: usize, rng: &mut R) -> Result<Vec<Share>, MpcError> {
    if n < 2 {
        return Err(MpcError::InvalidPartyCount(n));
    }
    Ok(split_additive(x, n, rng)
        .into_iter()
        .enumerate()
        .map(|(i, value)| Share {
            owner: PartyId::from_index(i),
            value,
        })
        .collect())
}

/// Rec: requires exactly one share from each of the parties `1..=n`.
pub fn reconstruct(shares: &[Share], n: usize) -> Result<RingValue, MpcError> {
    let mut seen = vec![false; n];
    for s in shares {
        let i = s.owner.index();
        if s.owner.0 == 0 || i >= n {
            return Err(MpcError::Protocol(ProtocolError::UnknownParty(s.owner)));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(MpcError::DuplicateShare(s.owner));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(MpcError::MissingShare(PartyId::from_index(i)));
    }
    Ok(shares.iter().map(|s| s.value).sum())
}

pub(crate) fn to_bytes(v: &[RingValue]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn from_bytes(tag: &str, b: &[u8], len: usize) -> Result<Vec<RingValue>, ProtocolError> {
    if b.len() != 8 * len {
        return Err(ProtocolError::MalformedPayload {
            tag: tag.to_string(),
            detail: format!("expected {} bytes, got {}", 8 * len, b.len()),
        });
    }
    Ok(b.chunks_exact(8)
        .map(|c| RingValue::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Plain ring matrix, row-major. Used for party-private operands and for
/// per-party share blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<RingValue>,
}

impl RingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<RingValue>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![RingValue::ZERO; rows * cols])
    }

    pub fn random<R: RngCore>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::new(rows, cols, (0..rows * cols).map(|_| RingValue(rng.gen())).collect())
    }

    pub fn column(data: Vec<RingValue>) -> Self {
        let rows = data.len();
        Self::new(rows, 1, data)
    }

    pub fn get(&self, r: usize, c: usize) -> RingValue {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &RingMatrix) -> RingMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = vec![RingValue::ZERO; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == RingValue::ZERO {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        RingMatrix::new(self.rows, other.cols, out)
    }

    pub fn hadamard(&self, other: &RingMatrix) -> RingMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        RingMatrix::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &RingMatrix) -> RingMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        RingMatrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &RingMatrix) -> RingMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        RingMatrix::new(self.rows, self.cols, data)
    }

    pub fn transpose(&self) -> RingMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        RingMatrix::new(self.cols, self.rows, data)
    }
}

/// Shares of a vector: `parts[p][k]` is party `p`'s share of element `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareVector {
    parts: Vec<Vec<RingValue>>,
}

impl ShareVector {
    pub fn from_parts(parts: Vec<Vec<RingValue>>) -> Result<Self, MpcError> {
        if parts.len() < 2 {
            return Err(MpcError::InvalidPartyCount(parts.len()));
        }
        let len = parts[0].len();
        if let Some(bad) = parts.iter().find(|p| p.len() != len) {
            return Err(MpcError::DimensionMismatch {
                op: "share vector",
                left: len.to_string(),
                right: bad.len().to_string(),
            });
        }
        Ok(Self { parts })
    }

    pub fn zeros(n: usize, len: usize) -> Self {
        Self {
            parts: vec![vec![RingValue::ZERO; len]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parties(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, p: PartyId) -> &[RingValue] {
        &self.parts[p.index()]
    }

    pub fn parts(&self) -> &[Vec<RingValue>] {
        &self.parts
    }

    pub(crate) fn parts_mut(&mut self) -> &mut [Vec<RingValue>] {
        &mut self.parts
    }

    pub fn shares_of(&self, k: usize) -> Vec<Share> {
        self.parts
            .iter()
            .enumerate()
            .map(|(i, p)| Share {
                owner: PartyId::from_index(i),
                value: p[k],
            })
            .collect()
    }

    pub fn gather(&self, idx: &[usize]) -> ShareVector {
        ShareVector {
            parts: self
                .parts
                .iter()
                .map(|p| idx.iter().map(|&i| p[i]).collect())
                .collect(),
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> ShareVector {
        ShareVector {
            parts: self.parts.iter().map(|p| p[start..start + len].to_vec()).collect(),
        }
    }

    pub fn concat(items: &[&ShareVector]) -> ShareVector {
        let n = items[0].parties();
        ShareVector {
            parts: (0..n)
                .map(|p| items.iter().flat_map(|v| v.parts[p].iter().copied()).collect())
                .collect(),
        }
    }

    pub fn push(&mut self, other: &ShareVector) {
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.extend_from_slice(b);
        }
    }

    /// Sum of all parts. Only for tests and simulator-side debug checks;
    /// protocols reconstruct through [`Mpc::open`].
    pub fn reconstruct_local(&self) -> Vec<RingValue> {
        (0..self.len())
            .map(|k| self.parts.iter().map(|p| p[k]).sum())
            .collect()
    }

    fn check_same(&self, other: &ShareVector, op: &'static str) -> Result<(), MpcError> {
        if self.len() != other.len() || self.parties() != other.parties() {
            return Err(MpcError::DimensionMismatch {
                op,
                left: self.len().to_string(),
                right: other.len().to_string(),
            });
        }
        Ok(())
    }
}

/// Shares of a row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareMatrix {
    pub rows: usize,
    pub cols: usize,
    data: ShareVector,
}

impl ShareMatrix {
    pub fn new(rows: usize, cols: usize, data: ShareVector) -> Result<Self, MpcError> {
        if data.len() != rows * cols {
            return Err(MpcError::DimensionMismatch {
                op: "share matrix",
                left: format!("{rows}x{cols}"),
                right: data.len().to_string(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn as_vector(&self) -> &ShareVector {
        &self.data
    }

    pub fn into_vector(self) -> ShareVector {
        self.data
    }

    /// Party `p`'s block as a plain matrix.
    pub fn block(&self, p: PartyId) -> RingMatrix {
        RingMatrix::new(self.rows, self.cols, self.data.part(p).to_vec())
    }

    pub fn from_blocks(blocks: Vec<RingMatrix>) -> Result<Self, MpcError> {
        let (rows, cols) = (blocks[0].rows, blocks[0].cols);
        Self::new(rows, cols, ShareVector::from_parts(blocks.into_iter().map(|b| b.data).collect())?)
    }

    pub fn row(&self, r: usize) -> ShareVector {
        self.data.slice(r * self.cols, self.cols)
    }

    pub fn rows_of(rows: &[ShareVector]) -> Result<Self, MpcError> {
        let cols = rows.first().map(ShareVector::len).ok_or(MpcError::EmptyVector)?;
        let refs: Vec<&ShareVector> = rows.iter().collect();
        Self::new(rows.len(), cols, ShareVector::concat(&refs))
    }
}

/// Seed derivation shared by the engine and other components.
pub fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Lockstep simulator of all parties running additive-sharing protocols.
pub struct Mpc {
    cfg: FixedPointConfig,
    n: usize,
    net: Network,
    rngs: Vec<ChaCha20Rng>,
    dealer: Dealer,
    debug_checks: bool,
}

impl std::fmt::Debug for Mpc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mpc")
            .field("n", &self.n)
            .field("cfg", &self.cfg)
            .field("round", &self.net.round())
            .finish_non_exhaustive()
    }
}

impl Mpc {
    /// Engine with an online dealer derived from `seed`.
    pub fn new(n: usize, cfg: FixedPointConfig, seed: u64) -> Result<Self, MpcError> {
        Self::with_dealer(cfg, seed, Dealer::online(n, derive_seed(seed, "dealer")))
    }

    pub fn with_dealer(cfg: FixedPointConfig, seed: u64, dealer: Dealer) -> Result<Self, MpcError> {
        let n = dealer.parties();
        if n < 2 {
            return Err(MpcError::InvalidPartyCount(n));
        }
        cfg.validate()?;
        Ok(Self {
            cfg,
            n,
            net: Network::new(n),
            rngs: (0..n)
                .map(|i| ChaCha20Rng::from_seed(derive_seed(seed, &format!("party-{}", i + 1))))
                .collect(),
            dealer,
            debug_checks: true,
        })
    }

    /// Toggles the simulator-side precondition checks (divisor windows,
    /// comparison magnitudes). They read reconstructed values outside the
    /// transcript and never influence protocol messages.
    pub fn set_debug_checks(&mut self, on: bool) {
        self.debug_checks = on;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cfg(&self) -> &FixedPointConfig {
        &self.cfg
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        PartyId::all(self.n)
    }

    pub fn transcript(&self) -> &Transcript {
        self.net.transcript()
    }

    pub fn take_transcript(&mut self) -> Transcript {
        self.net.take_transcript()
    }

    pub fn dealer_stats(&self) -> DealerStats {
        self.dealer.stats()
    }

    pub fn dealer(&self) -> &Dealer {
        &self.dealer
    }

    pub fn round(&self) -> u64 {
        self.net.round()
    }

    /// Appends a transcript produced by a standalone protocol run.
    pub fn absorb(&mut self, t: Transcript) {
        self.net.absorb(t);
    }

    pub(crate) fn net(&mut self) -> &mut Network {
        &mut self.net
    }

    pub(crate) fn debug_checks(&self) -> bool {
        self.debug_checks
    }

    pub(crate) fn dealer_mut(&mut self) -> &mut Dealer {
        &mut self.dealer
    }

    /// Records dealer material issued since the last flush.
    pub(crate) fn flush_dealer(&mut self) {
        for (to, tag, payload) in self.dealer.drain_issued() {
            self.net.dealer_send(to, tag, payload);
        }
    }

    /// Shr by `owner`: it samples shares locally and sends one to each peer.
    pub fn input(&mut self, owner: PartyId, values: &[RingValue]) -> Result<ShareVector, MpcError> {
        let n = self.n;
        let len = values.len();
        let mut per_party = vec![Vec::with_capacity(len); n];
        {
            let rng = &mut self.rngs[owner.index()];
            for &v in values {
                for (p, s) in split_additive(v, n, rng).into_iter().enumerate() {
                    per_party[p].push(s);
                }
            }
        }
        for peer in PartyId::all(n).filter(|&p| p != owner) {
            self.net.send(
                owner,
                peer,
                "shr",
                MessageKind::Share,
                to_bytes(&per_party[peer.index()]),
            )?;
        }
        self.net.barrier();
        let mut parts = vec![Vec::new(); n];
        parts[owner.index()] = std::mem::take(&mut per_party[owner.index()]);
        for peer in PartyId::all(n).filter(|&p| p != owner) {
            let bytes = self.net.recv(peer, owner, "shr")?;
            parts[peer.index()] = from_bytes("shr", &bytes, len)?;
        }
        ShareVector::from_parts(parts)
    }

    pub fn input_f64(&mut self, owner: PartyId, values: &[f64]) -> Result<ShareVector, MpcError> {
        let encoded = values
            .iter()
            .map(|&x| self.cfg.encode(x))
            .collect::<Result<Vec<_>, _>>()?;
        self.input(owner, &encoded)
    }

    /// Inputs from several owners in a single round.
    pub fn input_many(&mut self, items: &[(PartyId, Vec<RingValue>)]) -> Result<Vec<ShareVector>, MpcError> {
        let n = self.n;
        let mut staged = Vec::with_capacity(items.len());
        for (k, (owner, values)) in items.iter().enumerate() {
            let mut per_party = vec![Vec::with_capacity(values.len()); n];
            let rng = &mut self.rngs[owner.index()];
            for &v in values {
                for (p, s) in split_additive(v, n, rng).into_iter().enumerate() {
                    per_party[p].push(s);
                }
            }
            let tag = format!("shr.{k}");
            for peer in PartyId::all(n).filter(|p| p != owner) {
                self.net.send(*owner, peer, &tag, MessageKind::Share, to_bytes(&per_party[peer.index()]))?;
            }
            staged.push(per_party);
        }
        self.net.barrier();
        let mut out = Vec::with_capacity(items.len());
        for (k, ((owner, values), mut per_party)) in items.iter().zip(staged).enumerate() {
            let tag = format!("shr.{k}");
            let mut parts = vec![Vec::new(); n];
            parts[owner.index()] = std::mem::take(&mut per_party[owner.index()]);
            for peer in PartyId::all(n).filter(|p| p != owner) {
                let bytes = self.net.recv(peer, *owner, &tag)?;
                parts[peer.index()] = from_bytes(&tag, &bytes, values.len())?;
            }
            out.push(ShareVector::from_parts(parts)?);
        }
        Ok(out)
    }

    /// Trivial sharing of public values: party 1 holds them, others hold 0.
    pub fn constant(&self, values: &[RingValue]) -> ShareVector {
        let mut parts = vec![vec![RingValue::ZERO; values.len()]; self.n];
        parts[0] = values.to_vec();
        ShareVector { parts }
    }

    /// Treats a value that one party knows in plaintext as its share, the
    /// others holding zero. No communication.
    pub fn private_as_share(&self, owner: PartyId, values: &[RingValue]) -> ShareVector {
        let mut parts = vec![vec![RingValue::ZERO; values.len()]; self.n];
        parts[owner.index()] = values.to_vec();
        ShareVector { parts }
    }

    /// Opens `x` to every party. `kind` classifies what the opening discloses.
    pub fn open(&mut self, x: &ShareVector, kind: MessageKind, tag: &str) -> Result<Vec<RingValue>, MpcError> {
        let mut out = self.open_many(&[x], kind, &[tag])?;
        Ok(out.pop().expect("one opening"))
    }

    /// Several openings sharing one round.
    pub fn open_many(
        &mut self,
        xs: &[&ShareVector],
        kind: MessageKind,
        tags: &[&str],
    ) -> Result<Vec<Vec<RingValue>>, MpcError> {
        let n = self.n;
        for (x, tag) in xs.iter().zip(tags) {
            for from in PartyId::all(n) {
                let payload = to_bytes(x.part(from));
                for to in PartyId::all(n).filter(|&t| t != from) {
                    self.net.send(from, to, tag, kind, payload.clone())?;
                }
            }
        }
        self.net.barrier();
        let mut results = Vec::with_capacity(xs.len());
        for (x, tag) in xs.iter().zip(tags) {
            let mut agreed: Option<Vec<RingValue>> = None;
            for me in PartyId::all(n) {
                let mut acc = x.part(me).to_vec();
                for from in PartyId::all(n).filter(|&f| f != me) {
                    let bytes = self.net.recv(me, from, tag)?;
                    for (a, b) in acc.iter_mut().zip(from_bytes(tag, &bytes, x.len())?) {
                        *a += b;
                    }
                }
                match &agreed {
                    None => agreed = Some(acc),
                    Some(prev) => debug_assert_eq!(prev, &acc),
                }
            }
            results.push(agreed.expect("n >= 2"));
        }
        Ok(results)
    }

    /// Final reconstruction of a result.
    pub fn reveal(&mut self, x: &ShareVector, tag: &str) -> Result<Vec<RingValue>, MpcError> {
        self.open(x, MessageKind::Output, tag)
    }

    pub fn reveal_f64(&mut self, x: &ShareVector, tag: &str) -> Result<Vec<f64>, MpcError> {
        let cfg = self.cfg;
        Ok(self.reveal(x, tag)?.into_iter().map(|v| cfg.decode(v)).collect())
    }

    /// Each party broadcasts a plaintext vector of its own (for values that
    /// are public by declaration, such as divisors). Returns every party's
    /// vector, indexed by party.
    pub fn publish(
        &mut self,
        values: &[Vec<RingValue>],
        kind: MessageKind,
        tag: &str,
    ) -> Result<Vec<Vec<RingValue>>, MpcError> {
        let n = self.n;
        if values.len() != n {
            return Err(MpcError::InvalidPartyCount(values.len()));
        }
        for from in PartyId::all(n) {
            let payload = to_bytes(&values[from.index()]);
            for to in PartyId::all(n).filter(|&t| t != from) {
                self.net.send(from, to, tag, kind, payload.clone())?;
            }
        }
        self.net.barrier();
        for me in PartyId::all(n) {
            for from in PartyId::all(n).filter(|&f| f != me) {
                let bytes = self.net.recv(me, from, tag)?;
                let got = from_bytes(tag, &bytes, values[from.index()].len())?;
                debug_assert_eq!(got, values[from.index()]);
            }
        }
        Ok(values.to_vec())
    }

    /// LINEAR: `alpha * a + b + beta`, with `alpha` a public ring integer and
    /// `beta` added by party 1. Local.
    pub fn linear(
        &self,
        alpha: RingValue,
        a: &ShareVector,
        b: &ShareVector,
        beta: RingValue,
    ) -> Result<ShareVector, MpcError> {
        a.check_same(b, "linear")?;
        let parts = a
            .parts
            .iter()
            .zip(&b.parts)
            .enumerate()
            .map(|(p, (pa, pb))| {
                pa.iter()
                    .zip(pb)
                    .map(|(&x, &y)| alpha * x + y + if p == 0 { beta } else { RingValue::ZERO })
                    .collect()
            })
            .collect();
        Ok(ShareVector { parts })
    }

    /// LINEAR with a fixed-point `alpha`: the product with the public scalar
    /// is local, followed by a truncation.
    pub fn linear_fixed(
        &mut self,
        alpha: RingValue,
        a: &ShareVector,
        b: &ShareVector,
        beta: RingValue,
    ) -> Result<ShareVector, MpcError> {
        a.check_same(b, "linear")?;
        let scaled = self.scale_public(a, alpha);
        let scaled = self.truncate(&scaled, self.cfg.frac_bits)?;
        self.linear(RingValue(1), &scaled, b, beta)
    }

    pub fn add(&self, a: &ShareVector, b: &ShareVector) -> Result<ShareVector, MpcError> {
        self.linear(RingValue(1), a, b, RingValue::ZERO)
    }

    pub fn sub(&self, a: &ShareVector, b: &ShareVector) -> Result<ShareVector, MpcError> {
        let neg_b = self.scale_public(b, -RingValue(1));
        self.add(a, &neg_b)
    }

    /// Elementwise `c * x` for a public ring integer `c`, no truncation.
    pub fn scale_public(&self, x: &ShareVector, c: RingValue) -> ShareVector {
        ShareVector {
            parts: x.parts.iter().map(|p| p.iter().map(|&v| v * c).collect()).collect(),
        }
    }

    /// Elementwise product with a public vector of ring integers.
    pub fn scale_public_vec(&self, x: &ShareVector, c: &[RingValue]) -> Result<ShareVector, MpcError> {
        if x.len() != c.len() {
            return Err(MpcError::DimensionMismatch {
                op: "scale",
                left: x.len().to_string(),
                right: c.len().to_string(),
            });
        }
        Ok(ShareVector {
            parts: x
                .parts
                .iter()
                .map(|p| p.iter().zip(c).map(|(&v, &k)| v * k).collect())
                .collect(),
        })
    }

    /// Adds a public vector (party 1 only).
    pub fn add_public(&self, x: &ShareVector, c: &[RingValue]) -> ShareVector {
        let mut out = x.clone();
        for (v, &k) in out.parts[0].iter_mut().zip(c) {
            *v += k;
        }
        out
    }

    /// Fixed-point product with a public fixed-point scalar.
    pub fn mul_public(&mut self, x: &ShareVector, c: RingValue) -> Result<ShareVector, MpcError> {
        let scaled = self.scale_public(x, c);
        self.truncate(&scaled, self.cfg.frac_bits)
    }

    pub(crate) fn public_bits_to_ring(&self, bits: &[bool]) -> Vec<RingValue> {
        bits.iter().map(|&b| RingValue(b as u64)).collect()
    }

    /// Simulator-side reconstruction used only by debug checks.
    pub(crate) fn peek(&self, x: &ShareVector) -> Vec<RingValue> {
        x.reconstruct_local()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::decode;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    #[test]
    fn shr_rec_examples() {
        let c = cfg();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let five = c.encode(5.0).unwrap();
        assert_eq!(reconstruct(&share(five, 2, &mut rng).unwrap(), 2).unwrap(), five);
        let zero = share(RingValue::ZERO, 3, &mut rng).unwrap();
        assert_eq!(zero.iter().map(|s| s.value).sum::<RingValue>(), RingValue::ZERO);
        assert!(matches!(share(five, 1, &mut rng), Err(MpcError::InvalidPartyCount(1))));
    }

    #[test]
    fn reconstruct_all_zero_and_missing() {
        let zeros: Vec<Share> = PartyId::all(3)
            .map(|owner| Share {
                owner,
                value: RingValue::ZERO,
            })
            .collect();
        assert_eq!(reconstruct(&zeros, 3).unwrap(), RingValue::ZERO);
        assert_eq!(
            reconstruct(&zeros[..2], 3),
            Err(MpcError::MissingShare(PartyId(3)))
        );
        let dup = vec![zeros[0], zeros[0], zeros[1]];
        assert_eq!(reconstruct(&dup, 3), Err(MpcError::DuplicateShare(PartyId(1))));
    }

    #[test]
    fn four_party_randomized_reconstruction() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let v = RingValue(rng.gen());
            assert_eq!(reconstruct(&share(v, 4, &mut rng).unwrap(), 4).unwrap(), v);
        }
    }

    #[test]
    fn first_share_is_uniform() {
        // Chi-square over 16 buckets of the top nibble, 15 degrees of freedom.
        // The 1% critical value is 30.58.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = cfg().encode(12.5).unwrap();
        let mut buckets = [0u32; 16];
        let trials = 10_000;
        for _ in 0..trials {
            let s = share(x, 2, &mut rng).unwrap();
            buckets[(s[0].value.0 >> 60) as usize] += 1;
        }
        let expected = trials as f64 / 16.0;
        let chi2: f64 = buckets
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 30.58, "chi2 = {chi2}");
    }

    #[test]
    fn linear_examples_and_no_messages() {
        let c = cfg();
        let mut m = Mpc::new(2, c, 9).unwrap();
        let a = m.input_f64(PartyId(1), &[1.5, -2.0]).unwrap();
        let b = m.input_f64(PartyId(2), &[0.25, 4.0]).unwrap();
        let before = m.transcript().len();
        let s = m.linear(RingValue(1), &a, &b, RingValue::ZERO).unwrap();
        assert_eq!(m.transcript().len(), before);
        assert_eq!(
            s.reconstruct_local(),
            vec![c.encode(1.75).unwrap(), c.encode(2.0).unwrap()]
        );

        let z = ShareVector::zeros(2, 2);
        let seven = m
            .linear(RingValue::ZERO, &a, &z, c.encode(7.0).unwrap())
            .unwrap();
        assert_eq!(seven.reconstruct_local(), vec![c.encode(7.0).unwrap(); 2]);

        let r = m
            .linear_fixed(c.encode(2.5).unwrap(), &a, &b, c.encode(1.0).unwrap())
            .unwrap();
        let got: Vec<f64> = r.reconstruct_local().into_iter().map(|v| decode(v, &c)).collect();
        let want = [2.5 * 1.5 + 0.25 + 1.0, 2.5 * -2.0 + 4.0 + 1.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 2f64.powi(-15), "{g} vs {w}");
        }
        assert!(m.linear(RingValue(1), &a, &ShareVector::zeros(2, 3), RingValue::ZERO).is_err());
    }

    #[test]
    fn shr_sends_one_message_per_peer() {
        let mut m = Mpc::new(3, cfg(), 4).unwrap();
        m.input(PartyId(2), &[RingValue(42)]).unwrap();
        assert_eq!(m.transcript().party_messages().count(), 2);
        assert_eq!(m.transcript().rounds(), 1);
    }

    #[test]
    fn open_after_reveal_tags_output() {
        let mut m = Mpc::new(2, cfg(), 5).unwrap();
        let x = m.input(PartyId(1), &[RingValue(9)]).unwrap();
        assert_eq!(m.reveal(&x, "out").unwrap(), vec![RingValue(9)]);
        assert_eq!(m.transcript().count_kind(MessageKind::Output), 2);
    }
}
