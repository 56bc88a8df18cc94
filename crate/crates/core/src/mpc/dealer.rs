//! Trusted dealer for preprocessing material.
//!
//! The dealer hands out Beaver triples, pairwise matrix triples, comparison
//! masks and truncation pairs. It never sees protocol messages. Material can
//! be recorded to per-party files and replayed, which reproduces a run without
//! the online dealer.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{split_additive, MpcError, RingMatrix};
use crate::numeric::RingValue;
use crate::runtime::PartyId;

/// Counters of issued material, for exact budget assertions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DealerStats {
    /// n-party elementwise Beaver triples.
    pub triples: u64,
    /// Pairwise triples used by elementwise cross products (one per element).
    pub pair_triples: u64,
    /// Pairwise matrix triples (one per batch).
    pub matrix_triples: u64,
    pub compare_masks: u64,
    pub trunc_pairs: u64,
}

/// One party's share of a batch of Beaver triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleShares {
    pub a: Vec<RingValue>,
    pub b: Vec<RingValue>,
    pub c: Vec<RingValue>,
}

/// Material of a pairwise product `X * Y` where the left party holds `X` and
/// the right party holds `Y`: left gets `(A, C_l)`, right gets `(B, C_r)`
/// with `C_l + C_r = A * B`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTriple {
    pub left_mask: RingMatrix,
    pub left_c: RingMatrix,
    pub right_mask: RingMatrix,
    pub right_c: RingMatrix,
}

/// One party's share of a truncation pair `(r, r_t)` with
/// `r_t = -((-r) >> bits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncShares {
    pub r: Vec<RingValue>,
    pub rt: Vec<RingValue>,
}

#[derive(Debug, Clone, PartialEq)]
enum Line {
    Triple(RingValue, RingValue, RingValue),
    Mask(RingValue),
    Trunc(u32, RingValue, RingValue),
    /// side, rows, cols of the mask, mask entries, c entries (rows x c_cols)
    Matrix {
        side: char,
        mask: RingMatrix,
        c: RingMatrix,
    },
}

impl Line {
    fn render(&self, out: &mut String) {
        match self {
            Line::Triple(a, b, c) => {
                let _ = writeln!(out, "triple {a} {b} {c}");
            }
            Line::Mask(r) => {
                let _ = writeln!(out, "mask {r}");
            }
            Line::Trunc(bits, r, rt) => {
                let _ = writeln!(out, "trunc {bits} {r} {rt}");
            }
            Line::Matrix { side, mask, c } => {
                let _ = write!(
                    out,
                    "matrix {side} {} {} {} {}",
                    mask.rows, mask.cols, c.rows, c.cols
                );
                for v in mask.data.iter().chain(&c.data) {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
    }

    fn parse(line: &str, lineno: usize) -> Result<Line, MpcError> {
        let bad = |what: &str| MpcError::DealerFile(format!("line {lineno}: {what}"));
        let mut it = line.split_whitespace();
        let kind = it.next().ok_or_else(|| bad("empty line"))?;
        let mut hex = |name: &str| -> Result<RingValue, MpcError> {
            let tok = it.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            RingValue::from_hex(tok).map_err(|e| bad(&e.to_string()))
        };
        match kind {
            "triple" => Ok(Line::Triple(hex("a")?, hex("b")?, hex("c")?)),
            "mask" => Ok(Line::Mask(hex("r")?)),
            "trunc" => {
                let bits = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad("missing bit count"))?;
                let r = RingValue::from_hex(it.next().ok_or_else(|| bad("missing r"))?)
                    .map_err(|e| bad(&e.to_string()))?;
                let rt = RingValue::from_hex(it.next().ok_or_else(|| bad("missing rt"))?)
                    .map_err(|e| bad(&e.to_string()))?;
                Ok(Line::Trunc(bits, r, rt))
            }
            "matrix" => {
                let side = it
                    .next()
                    .and_then(|s| s.chars().next())
                    .ok_or_else(|| bad("missing side"))?;
                let mut dims = [0usize; 4];
                for d in dims.iter_mut() {
                    *d = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("missing dimension"))?;
                }
                let vals: Vec<RingValue> = it
                    .map(RingValue::from_hex)
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                let split = dims[0] * dims[1];
                if vals.len() != split + dims[2] * dims[3] {
                    return Err(bad("matrix entry count does not match dimensions"));
                }
                Ok(Line::Matrix {
                    side,
                    mask: RingMatrix::new(dims[0], dims[1], vals[..split].to_vec()),
                    c: RingMatrix::new(dims[2], dims[3], vals[split..].to_vec()),
                })
            }
            other => Err(bad(&format!("unknown record {other:?}"))),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let vals: Vec<RingValue> = match self {
            Line::Triple(a, b, c) => vec![*a, *b, *c],
            Line::Mask(r) => vec![*r],
            Line::Trunc(_, r, rt) => vec![*r, *rt],
            Line::Matrix { mask, c, .. } => mask.data.iter().chain(&c.data).copied().collect(),
        };
        super::to_bytes(&vals)
    }

    fn tag(&self) -> &'static str {
        match self {
            Line::Triple(..) => "dealer.triple",
            Line::Mask(..) => "dealer.mask",
            Line::Trunc(..) => "dealer.trunc",
            Line::Matrix { .. } => "dealer.matrix",
        }
    }
}

enum Source {
    Online {
        rng: ChaCha20Rng,
        triple_budget: Option<u64>,
    },
    Replay(Vec<VecDeque<Line>>),
}

/// Dealer handing out per-party material.
pub struct Dealer {
    n: usize,
    source: Source,
    stats: DealerStats,
    record: Option<Vec<String>>,
    issued: Vec<(PartyId, &'static str, Vec<u8>)>,
}

impl std::fmt::Debug for Dealer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dealer")
            .field("n", &self.n)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Dealer {
    pub fn online(n: usize, seed: [u8; 32]) -> Self {
        Self {
            n,
            source: Source::Online {
                rng: ChaCha20Rng::from_seed(seed),
                triple_budget: None,
            },
            stats: DealerStats::default(),
            record: None,
            issued: Vec::new(),
        }
    }

    /// Online dealer that refuses more than `budget` elementwise triples.
    pub fn with_triple_budget(mut self, budget: u64) -> Self {
        if let Source::Online { triple_budget, .. } = &mut self.source {
            *triple_budget = Some(budget);
        }
        self
    }

    /// Keeps a copy of everything issued so it can be written with
    /// [`Dealer::write_files`].
    pub fn recording(mut self) -> Self {
        self.record = Some(vec![String::new(); self.n]);
        self
    }

    /// Replays material from per-party file contents.
    pub fn replay(contents: &[String]) -> Result<Self, MpcError> {
        let mut queues = Vec::with_capacity(contents.len());
        for text in contents {
            let mut q = VecDeque::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                q.push_back(Line::parse(line, i + 1)?);
            }
            queues.push(q);
        }
        Ok(Self {
            n: contents.len(),
            source: Source::Replay(queues),
            stats: DealerStats::default(),
            record: None,
            issued: Vec::new(),
        })
    }

    pub fn replay_dir(dir: &Path, n: usize) -> Result<Self, MpcError> {
        let contents = (1..=n)
            .map(|i| {
                fs::read_to_string(dir.join(dealer_file_name(PartyId(i))))
                    .map_err(|e| MpcError::DealerFile(format!("party {i}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::replay(&contents)
    }

    pub fn stats(&self) -> DealerStats {
        self.stats
    }

    pub fn parties(&self) -> usize {
        self.n
    }

    /// Recorded per-party file contents.
    pub fn recorded(&self) -> Option<&[String]> {
        self.record.as_deref()
    }

    pub fn write_files(&self, dir: &Path) -> std::io::Result<()> {
        if let Some(files) = &self.record {
            fs::create_dir_all(dir)?;
            for (i, text) in files.iter().enumerate() {
                fs::write(dir.join(dealer_file_name(PartyId::from_index(i))), text)?;
            }
        }
        Ok(())
    }

    /// Material handed out since the last call, for the transcript.
    pub(crate) fn drain_issued(&mut self) -> Vec<(PartyId, &'static str, Vec<u8>)> {
        std::mem::take(&mut self.issued)
    }

    fn emit(&mut self, party: usize, line: &Line) {
        if let Some(files) = &mut self.record {
            line.render(&mut files[party]);
        }
        self.issued
            .push((PartyId::from_index(party), line.tag(), line.payload()));
    }

    fn next_line(&mut self, party: usize, what: &str) -> Result<Line, MpcError> {
        match &mut self.source {
            Source::Replay(q) => q
                .get_mut(party)
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| MpcError::TripleExhausted(format!("dealer file of P{} ran out of {what}", party + 1))),
            Source::Online { .. } => unreachable!("online dealer generates material"),
        }
    }

    fn rng(&mut self) -> Option<&mut ChaCha20Rng> {
        match &mut self.source {
            Source::Online { rng, .. } => Some(rng),
            Source::Replay(_) => None,
        }
    }

    /// `len` n-party Beaver triples, one [`TripleShares`] per party.
    pub fn triples(&mut self, len: usize) -> Result<Vec<TripleShares>, MpcError> {
        if let Source::Online {
            triple_budget: Some(budget),
            ..
        } = self.source
        {
            if self.stats.triples + len as u64 > budget {
                return Err(MpcError::TripleExhausted(format!(
                    "budget of {budget} triples exhausted"
                )));
            }
        }
        let n = self.n;
        let mut out: Vec<TripleShares> = (0..n)
            .map(|_| TripleShares {
                a: Vec::with_capacity(len),
                b: Vec::with_capacity(len),
                c: Vec::with_capacity(len),
            })
            .collect();
        if let Some(rng) = self.rng() {
            let mut lines = Vec::with_capacity(len);
            for _ in 0..len {
                let a = RingValue(rng.gen());
                let b = RingValue(rng.gen());
                let sa = split_additive(a, n, rng);
                let sb = split_additive(b, n, rng);
                let sc = split_additive(a * b, n, rng);
                lines.push((sa, sb, sc));
            }
            for (sa, sb, sc) in lines {
                for p in 0..n {
                    out[p].a.push(sa[p]);
                    out[p].b.push(sb[p]);
                    out[p].c.push(sc[p]);
                    self.emit(p, &Line::Triple(sa[p], sb[p], sc[p]));
                }
            }
        } else {
            for _ in 0..len {
                for (p, slot) in out.iter_mut().enumerate() {
                    match self.next_line(p, "triples")? {
                        Line::Triple(a, b, c) => {
                            slot.a.push(a);
                            slot.b.push(b);
                            slot.c.push(c);
                            self.emit(p, &Line::Triple(a, b, c));
                        }
                        other => return Err(mismatch("triple", &other)),
                    }
                }
            }
        }
        self.stats.triples += len as u64;
        Ok(out)
    }

    /// Shares of `len` random masks uniform in `[1, 2^bits]`.
    pub fn compare_masks(&mut self, len: usize, bits: u32) -> Result<Vec<Vec<RingValue>>, MpcError> {
        let n = self.n;
        let mut out = vec![Vec::with_capacity(len); n];
        for _ in 0..len {
            let shares = match self.rng() {
                Some(rng) => {
                    let r = RingValue(rng.gen_range(1..=(1u64 << bits)));
                    split_additive(r, n, rng)
                }
                None => (0..n)
                    .map(|p| match self.next_line(p, "masks")? {
                        Line::Mask(r) => Ok(r),
                        other => Err(mismatch("mask", &other)),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            for (p, s) in shares.into_iter().enumerate() {
                out[p].push(s);
                self.emit(p, &Line::Mask(s));
            }
        }
        self.stats.compare_masks += len as u64;
        Ok(out)
    }

    /// Truncation pairs for a shift of `bits`.
    pub fn trunc_pairs(&mut self, len: usize, bits: u32) -> Result<Vec<TruncShares>, MpcError> {
        let n = self.n;
        let mut out: Vec<TruncShares> = (0..n)
            .map(|_| TruncShares {
                r: Vec::with_capacity(len),
                rt: Vec::with_capacity(len),
            })
            .collect();
        for _ in 0..len {
            let pairs: Vec<(RingValue, RingValue)> = match self.rng() {
                Some(rng) => {
                    let r = RingValue(rng.gen());
                    let rt = -((-r).shr_signed(bits));
                    let sr = split_additive(r, n, rng);
                    let srt = split_additive(rt, n, rng);
                    sr.into_iter().zip(srt).collect()
                }
                None => (0..n)
                    .map(|p| match self.next_line(p, "truncation pairs")? {
                        Line::Trunc(b, r, rt) if b == bits => Ok((r, rt)),
                        other => Err(mismatch("trunc", &other)),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            for (p, (r, rt)) in pairs.into_iter().enumerate() {
                out[p].r.push(r);
                out[p].rt.push(rt);
                self.emit(p, &Line::Trunc(bits, r, rt));
            }
        }
        self.stats.trunc_pairs += len as u64;
        Ok(out)
    }

    /// A pairwise triple for `X (rows x inner) * Y (inner x cols)`, or for an
    /// elementwise product when `elementwise` is set (then all shapes equal
    /// `rows x cols`).
    pub fn pair_triple(
        &mut self,
        left: PartyId,
        right: PartyId,
        rows: usize,
        inner: usize,
        cols: usize,
        elementwise: bool,
    ) -> Result<PairTriple, MpcError> {
        let (lshape, rshape) = if elementwise {
            ((rows, cols), (rows, cols))
        } else {
            ((rows, inner), (inner, cols))
        };
        let triple = match self.rng() {
            Some(rng) => {
                let a = RingMatrix::random(lshape.0, lshape.1, rng);
                let b = RingMatrix::random(rshape.0, rshape.1, rng);
                let c = if elementwise { a.hadamard(&b) } else { a.matmul(&b) };
                let left_c = RingMatrix::random(c.rows, c.cols, rng);
                let right_c = c.sub(&left_c);
                PairTriple {
                    left_mask: a,
                    left_c,
                    right_mask: b,
                    right_c,
                }
            }
            None => {
                let l = self.next_line(left.index(), "matrix triples")?;
                let r = self.next_line(right.index(), "matrix triples")?;
                match (l, r) {
                    (
                        Line::Matrix { side: 'L', mask: a, c: lc },
                        Line::Matrix { side: 'R', mask: b, c: rc },
                    ) if (a.rows, a.cols) == lshape && (b.rows, b.cols) == rshape => PairTriple {
                        left_mask: a,
                        left_c: lc,
                        right_mask: b,
                        right_c: rc,
                    },
                    (other, _) => return Err(mismatch("matrix", &other)),
                }
            }
        };
        self.emit(
            left.index(),
            &Line::Matrix {
                side: 'L',
                mask: triple.left_mask.clone(),
                c: triple.left_c.clone(),
            },
        );
        self.emit(
            right.index(),
            &Line::Matrix {
                side: 'R',
                mask: triple.right_mask.clone(),
                c: triple.right_c.clone(),
            },
        );
        if elementwise {
            self.stats.pair_triples += (rows * cols) as u64;
        } else {
            self.stats.matrix_triples += 1;
        }
        Ok(triple)
    }
}

fn mismatch(expected: &str, got: &Line) -> MpcError {
    MpcError::DealerFile(format!("expected a {expected} record, found {}", got.tag()))
}

pub fn dealer_file_name(p: PartyId) -> String {
    format!("dealer_p{}.txt", p.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_triples_are_consistent() {
        let mut d = Dealer::online(3, [7; 32]);
        let t = d.triples(50).unwrap();
        for k in 0..50 {
            let a: RingValue = t.iter().map(|s| s.a[k]).sum();
            let b: RingValue = t.iter().map(|s| s.b[k]).sum();
            let c: RingValue = t.iter().map(|s| s.c[k]).sum();
            assert_eq!(a * b, c);
        }
        assert_eq!(d.stats().triples, 50);
    }

    #[test]
    fn truncation_pair_relation() {
        let mut d = Dealer::online(2, [1; 32]);
        let t = d.trunc_pairs(20, 16).unwrap();
        for k in 0..20 {
            let r = t[0].r[k] + t[1].r[k];
            let rt = t[0].rt[k] + t[1].rt[k];
            assert_eq!(rt, -((-r).shr_signed(16)));
        }
    }

    #[test]
    fn masks_in_range() {
        let mut d = Dealer::online(2, [2; 32]);
        let m = d.compare_masks(200, 20).unwrap();
        for k in 0..200 {
            let r = (m[0][k] + m[1][k]).0;
            assert!((1..=1 << 20).contains(&r));
        }
    }

    #[test]
    fn record_and_replay_match() {
        let mut d = Dealer::online(2, [3; 32]).recording();
        let t1 = d.triples(4).unwrap();
        let p1 = d.pair_triple(PartyId(1), PartyId(2), 2, 3, 2, false).unwrap();
        let m1 = d.compare_masks(2, 20).unwrap();
        let r1 = d.trunc_pairs(2, 16).unwrap();
        let files = d.recorded().unwrap().to_vec();

        let mut replay = Dealer::replay(&files).unwrap();
        assert_eq!(replay.triples(4).unwrap(), t1);
        assert_eq!(
            replay.pair_triple(PartyId(1), PartyId(2), 2, 3, 2, false).unwrap(),
            p1
        );
        assert_eq!(replay.compare_masks(2, 20).unwrap(), m1);
        assert_eq!(replay.trunc_pairs(2, 16).unwrap(), r1);
        assert!(matches!(replay.triples(1), Err(MpcError::TripleExhausted(_))));
    }

    #[test]
    fn triple_lines_use_documented_format() {
        let mut d = Dealer::online(2, [4; 32]).recording();
        d.triples(1).unwrap();
        let line = d.recorded().unwrap()[0].lines().next().unwrap().to_string();
        let parts: Vec<_> = line.split(' ').collect();
        assert_eq!(parts[0], "triple");
        assert_eq!(parts.len(), 4);
        assert!(parts[1..].iter().all(|h| h.len() == 16));
    }

    #[test]
    fn budget_and_bad_files() {
        let mut d = Dealer::online(2, [5; 32]).with_triple_budget(3);
        assert!(d.triples(3).is_ok());
        assert!(matches!(d.triples(1), Err(MpcError::TripleExhausted(_))));
        assert!(Dealer::replay(&["bogus 00".into(), String::new()]).is_err());
        assert!(Dealer::replay(&["triple 00 11".into(), String::new()]).is_err());
    }
}
