//! Multiplication, truncation and the pairwise cross-product protocol.

use super::{from_bytes, to_bytes, Mpc, MpcError, RingMatrix, ShareMatrix, ShareVector};
use crate::numeric::RingValue;
use crate::runtime::{MessageKind, PartyId};

/// One pairwise product `X * Y` (or `X ⊙ Y`) where `left` privately holds `X`
/// and `right` privately holds `Y`. The result comes back additively shared
/// between the two parties.
#[derive(Debug, Clone)]
pub struct CrossJob {
    pub left: PartyId,
    pub x: RingMatrix,
    pub right: PartyId,
    pub y: RingMatrix,
    pub elementwise: bool,
}

fn product(a: &RingMatrix, b: &RingMatrix, elementwise: bool) -> RingMatrix {
    if elementwise {
        a.hadamard(b)
    } else {
        a.matmul(b)
    }
}

impl Mpc {
    /// Arithmetic right shift of the shared value by `bits`.
    ///
    /// Two parties truncate locally (off by at most one ulp, with a failure
    /// probability of about |x| / 2^63). With more parties the dealer supplies
    /// a pair `(r, r >> bits)` and `x - r` is opened; local truncation does
    /// not generalise past two shares.
    pub fn truncate(&mut self, x: &ShareVector, bits: u32) -> Result<ShareVector, MpcError> {
        if bits == 0 {
            return Ok(x.clone());
        }
        if self.n() == 2 {
            let mut out = x.clone();
            let parts = out.parts_mut();
            for v in parts[0].iter_mut() {
                *v = v.shr_signed(bits);
            }
            for v in parts[1].iter_mut() {
                *v = -((-*v).shr_signed(bits));
            }
            return Ok(out);
        }
        let n = self.n();
        let pairs = self.dealer_mut().trunc_pairs(x.len(), bits)?;
        self.flush_dealer();
        let masked = ShareVector::from_parts(
            (0..n)
                .map(|p| {
                    x.parts()[p]
                        .iter()
                        .zip(&pairs[p].r)
                        .map(|(&v, &r)| v - r)
                        .collect()
                })
                .collect(),
        )?;
        let z = self.open(&masked, MessageKind::BeaverMask, "trunc.open")?;
        let parts = (0..n)
            .map(|p| {
                pairs[p]
                    .rt
                    .iter()
                    .zip(&z)
                    .map(|(&rt, &zv)| if p == 0 { rt + zv.shr_signed(bits) } else { rt })
                    .collect()
            })
            .collect();
        ShareVector::from_parts(parts)
    }

    /// Beaver product in the ring, without truncation. One triple per
    /// element, one round opening `e = a - α` and `d = b - β`.
    pub fn mul_raw(&mut self, a: &ShareVector, b: &ShareVector) -> Result<ShareVector, MpcError> {
        if a.len() != b.len() {
            return Err(MpcError::DimensionMismatch {
                op: "mul",
                left: a.len().to_string(),
                right: b.len().to_string(),
            });
        }
        let n = self.n();
        let triples = self.dealer_mut().triples(a.len())?;
        self.flush_dealer();
        let mask = |x: &ShareVector, pick: fn(&super::dealer::TripleShares) -> &Vec<RingValue>| {
            ShareVector::from_parts(
                (0..n)
                    .map(|p| {
                        x.parts()[p]
                            .iter()
                            .zip(pick(&triples[p]))
                            .map(|(&v, &m)| v - m)
                            .collect()
                    })
                    .collect(),
            )
        };
        let e_sh = mask(a, |t| &t.a)?;
        let d_sh = mask(b, |t| &t.b)?;
        let mut opened = self.open_many(&[&e_sh, &d_sh], MessageKind::BeaverMask, &["mul.e", "mul.d"])?;
        let d = opened.pop().expect("d");
        let e = opened.pop().expect("e");
        let parts = (0..n)
            .map(|p| {
                let t = &triples[p];
                (0..a.len())
                    .map(|k| {
                        let mut c = t.c[k] + e[k] * t.b[k] + d[k] * t.a[k];
                        if p == 0 {
                            c += e[k] * d[k];
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        ShareVector::from_parts(parts)
    }

    /// Fixed-point MUL: Beaver product followed by a truncation of f bits.
    pub fn mul(&mut self, a: &ShareVector, b: &ShareVector) -> Result<ShareVector, MpcError> {
        let f = self.cfg().frac_bits;
        self.mul_shift(a, b, f)
    }

    /// Beaver product followed by a truncation of `shift` bits.
    pub fn mul_shift(&mut self, a: &ShareVector, b: &ShareVector, shift: u32) -> Result<ShareVector, MpcError> {
        let raw = self.mul_raw(a, b)?;
        self.truncate(&raw, shift)
    }

    /// Runs a batch of pairwise products in one round. For each job, the left
    /// party sends `E = X - A`, the right party sends `F = Y - B`; left keeps
    /// `E∘F + A∘F + C_l`, right keeps `E∘B + C_r`.
    pub fn cross_products(&mut self, jobs: &[CrossJob]) -> Result<Vec<(RingMatrix, RingMatrix)>, MpcError> {
        let mut triples = Vec::with_capacity(jobs.len());
        for job in jobs {
            let (rows, inner, cols) = if job.elementwise {
                if (job.x.rows, job.x.cols) != (job.y.rows, job.y.cols) {
                    return Err(MpcError::DimensionMismatch {
                        op: "cross product",
                        left: format!("{}x{}", job.x.rows, job.x.cols),
                        right: format!("{}x{}", job.y.rows, job.y.cols),
                    });
                }
                (job.x.rows, job.x.cols, job.x.cols)
            } else {
                if job.x.cols != job.y.rows {
                    return Err(MpcError::DimensionMismatch {
                        op: "cross product",
                        left: format!("{}x{}", job.x.rows, job.x.cols),
                        right: format!("{}x{}", job.y.rows, job.y.cols),
                    });
                }
                (job.x.rows, job.x.cols, job.y.cols)
            };
            triples.push(
                self.dealer_mut()
                    .pair_triple(job.left, job.right, rows, inner, cols, job.elementwise)?,
            );
        }
        self.flush_dealer();
        for (k, (job, t)) in jobs.iter().zip(&triples).enumerate() {
            let e = job.x.sub(&t.left_mask);
            let f = job.y.sub(&t.right_mask);
            self.net()
                .send(job.left, job.right, &format!("xmul.{k}.e"), MessageKind::BeaverMask, to_bytes(&e.data))?;
            self.net()
                .send(job.right, job.left, &format!("xmul.{k}.f"), MessageKind::BeaverMask, to_bytes(&f.data))?;
        }
        self.net().barrier();
        let mut out = Vec::with_capacity(jobs.len());
        for (k, (job, t)) in jobs.iter().zip(triples).enumerate() {
            let tag_e = format!("xmul.{k}.e");
            let tag_f = format!("xmul.{k}.f");
            let e_own = job.x.sub(&t.left_mask);
            let f_bytes = self.net().recv(job.left, job.right, &tag_f)?;
            let f = RingMatrix::new(t.right_mask.rows, t.right_mask.cols, from_bytes(&tag_f, &f_bytes, t.right_mask.data.len())?);
            let left_out = product(&e_own, &f, job.elementwise)
                .add(&product(&t.left_mask, &f, job.elementwise))
                .add(&t.left_c);
            let e_bytes = self.net().recv(job.right, job.left, &tag_e)?;
            let e = RingMatrix::new(t.left_mask.rows, t.left_mask.cols, from_bytes(&tag_e, &e_bytes, t.left_mask.data.len())?);
            let right_out = product(&e, &t.right_mask, job.elementwise).add(&t.right_c);
            out.push((left_out, right_out));
        }
        Ok(out)
    }

    /// Shares of `Σ_i A_i · h` where party `i` privately holds `A_i` and `h`
    /// is shared. Each party multiplies its own share locally and runs one
    /// cross product with every peer's share. No truncation: the `A_i` are
    /// integer matrices.
    pub fn private_matmul(&mut self, mats: &[RingMatrix], h: &ShareMatrix) -> Result<ShareMatrix, MpcError> {
        let n = self.n();
        if mats.len() != n {
            return Err(MpcError::DimensionMismatch {
                op: "private matmul",
                left: mats.len().to_string(),
                right: n.to_string(),
            });
        }
        for a in mats {
            if a.cols != h.rows {
                return Err(MpcError::DimensionMismatch {
                    op: "private matmul",
                    left: format!("{}x{}", a.rows, a.cols),
                    right: format!("{}x{}", h.rows, h.cols),
                });
            }
        }
        let mut blocks: Vec<RingMatrix> = PartyId::all(n)
            .map(|p| mats[p.index()].matmul(&h.block(p)))
            .collect();
        let mut jobs = Vec::new();
        for i in PartyId::all(n) {
            for j in PartyId::all(n).filter(|&j| j != i) {
                jobs.push(CrossJob {
                    left: i,
                    x: mats[i.index()].clone(),
                    right: j,
                    y: h.block(j),
                    elementwise: false,
                });
            }
        }
        self.accumulate_cross(&jobs, &mut blocks)?;
        ShareMatrix::from_blocks(blocks)
    }

    /// Shared fixed-point product `x · w` of two shared matrices: local
    /// `x_i w_i` plus one pairwise cross product per ordered pair, with a
    /// single truncation after summing.
    pub fn secure_matmul(&mut self, x: &ShareMatrix, w: &ShareMatrix) -> Result<ShareMatrix, MpcError> {
        if x.cols != w.rows {
            return Err(MpcError::DimensionMismatch {
                op: "secure matmul",
                left: format!("{}x{}", x.rows, x.cols),
                right: format!("{}x{}", w.rows, w.cols),
            });
        }
        let n = self.n();
        let mut blocks: Vec<RingMatrix> = PartyId::all(n).map(|p| x.block(p).matmul(&w.block(p))).collect();
        let mut jobs = Vec::new();
        for i in PartyId::all(n) {
            for j in PartyId::all(n).filter(|&j| j != i) {
                jobs.push(CrossJob {
                    left: i,
                    x: x.block(i),
                    right: j,
                    y: w.block(j),
                    elementwise: false,
                });
            }
        }
        self.accumulate_cross(&jobs, &mut blocks)?;
        let raw = ShareMatrix::from_blocks(blocks)?;
        let (rows, cols) = (raw.rows, raw.cols);
        let f = self.cfg().frac_bits;
        let t = self.truncate(raw.as_vector(), f)?;
        ShareMatrix::new(rows, cols, t)
    }

    /// Shared elementwise square: `Σ_i z_i² + 2 Σ_{i<j} z_i z_j`, one
    /// elementwise cross product per unordered pair, then one truncation.
    pub fn secure_square(&mut self, z: &ShareVector) -> Result<ShareVector, MpcError> {
        let n = self.n();
        let col = |p: PartyId| RingMatrix::column(z.part(p).to_vec());
        let mut blocks: Vec<RingMatrix> = PartyId::all(n).map(|p| col(p).hadamard(&col(p))).collect();
        let mut jobs = Vec::new();
        for i in PartyId::all(n) {
            for j in PartyId::all(n).filter(|&j| j.0 > i.0) {
                jobs.push(CrossJob {
                    left: i,
                    x: col(i),
                    right: j,
                    y: col(j),
                    elementwise: true,
                });
            }
        }
        let results = self.cross_products(&jobs)?;
        let two = RingValue(2);
        for (job, (l, r)) in jobs.iter().zip(results) {
            let b = &mut blocks[job.left.index()];
            *b = b.add(&scaled(&l, two));
            let b = &mut blocks[job.right.index()];
            *b = b.add(&scaled(&r, two));
        }
        let raw = ShareVector::from_parts(blocks.into_iter().map(|b| b.data).collect())?;
        let f = self.cfg().frac_bits;
        self.truncate(&raw, f)
    }

    fn accumulate_cross(&mut self, jobs: &[CrossJob], blocks: &mut [RingMatrix]) -> Result<(), MpcError> {
        let results = self.cross_products(jobs)?;
        for (job, (l, r)) in jobs.iter().zip(results) {
            let b = &mut blocks[job.left.index()];
            *b = b.add(&l);
            let b = &mut blocks[job.right.index()];
            *b = b.add(&r);
        }
        Ok(())
    }

    /// Public-bit selection: `bit ? a : b`, elementwise and local.
    pub fn select(&self, bits: &[bool], a: &ShareVector, b: &ShareVector) -> Result<ShareVector, MpcError> {
        if a.len() != b.len() || a.len() != bits.len() {
            return Err(MpcError::DimensionMismatch {
                op: "select",
                left: a.len().to_string(),
                right: b.len().to_string(),
            });
        }
        let parts = a
            .parts()
            .iter()
            .zip(b.parts())
            .map(|(pa, pb)| {
                bits.iter()
                    .zip(pa.iter().zip(pb))
                    .map(|(&c, (&x, &y))| if c { x } else { y })
                    .collect()
            })
            .collect();
        ShareVector::from_parts(parts)
    }
}

fn scaled(m: &RingMatrix, k: RingValue) -> RingMatrix {
    RingMatrix::new(m.rows, m.cols, m.data.iter().map(|&v| v * k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{decode, FixedPointConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    #[test]
    fn mul_examples() {
        let c = cfg();
        for n in [2, 3] {
            let mut m = Mpc::new(n, c, 1).unwrap();
            let a = m.input_f64(PartyId(1), &[3.0, 0.0, -1.5]).unwrap();
            let b = m.input_f64(PartyId(2), &[4.0, 7.25, 2.0]).unwrap();
            let p = m.mul(&a, &b).unwrap();
            let got: Vec<f64> = p.reconstruct_local().iter().map(|&v| decode(v, &c)).collect();
            for (g, w) in got.iter().zip([12.0, 0.0, -3.0]) {
                assert!((g - w).abs() <= 2f64.powi(-15), "n={n}: {g} vs {w}");
            }
            assert_eq!(m.dealer_stats().triples, 3);
        }
    }

    #[test]
    fn mul_sends_two_messages_per_party() {
        let mut m = Mpc::new(2, cfg(), 2).unwrap();
        let a = m.input_f64(PartyId(1), &[1.0; 8]).unwrap();
        let b = m.input_f64(PartyId(2), &[2.0; 8]).unwrap();
        let before = m.transcript().messages_sent();
        m.mul(&a, &b).unwrap();
        let after = m.transcript().messages_sent();
        for p in PartyId::all(2) {
            assert_eq!(after[&p] - before.get(&p).copied().unwrap_or(0), 2);
        }
        assert_eq!(m.dealer_stats().triples, 8);
    }

    #[test]
    fn truncation_relation_holds_for_three_parties() {
        let c = cfg();
        let mut m = Mpc::new(3, c, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let vals: Vec<RingValue> = (0..200).map(|_| RingValue::from_signed(rng.gen_range(-(1i64 << 40)..(1 << 40)))).collect();
        let x = m.input(PartyId(3), &vals).unwrap();
        let t = m.truncate(&x, 16).unwrap();
        for (got, v) in t.reconstruct_local().iter().zip(&vals) {
            let want = v.signed() >> 16;
            assert!((got.signed() - want).abs() <= 1);
        }
    }

    #[test]
    fn matrix_products_match_plaintext() {
        let c = cfg();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for n in [2, 3] {
            let mut m = Mpc::new(n, c, 6).unwrap();
            let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ws: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x = ShareMatrix::new(3, 2, m.input_f64(PartyId(1), &xs).unwrap()).unwrap();
            let w = ShareMatrix::new(2, 4, m.input_f64(PartyId(n), &ws).unwrap()).unwrap();
            let z = m.secure_matmul(&x, &w).unwrap();
            let got = z.as_vector().reconstruct_local();
            for r in 0..3 {
                for col in 0..4 {
                    let want: f64 = (0..2).map(|k| xs[r * 2 + k] * ws[k * 4 + col]).sum();
                    let g = decode(got[r * 4 + col], &c);
                    assert!((g - want).abs() < 1e-3, "{g} vs {want}");
                }
            }
            assert_eq!(m.dealer_stats().matrix_triples as usize, n * (n - 1));

            let sq = m.secure_square(z.as_vector()).unwrap();
            for (s, v) in sq.reconstruct_local().iter().zip(&got) {
                let zv = decode(*v, &c);
                assert!((decode(*s, &c) - zv * zv).abs() < 1e-3);
            }
            assert_eq!(m.dealer_stats().pair_triples as usize, 12 * n * (n - 1) / 2);
        }
    }

    #[test]
    fn private_matmul_sums_all_parties() {
        let c = cfg();
        let mut m = Mpc::new(3, c, 7).unwrap();
        let a1 = RingMatrix::new(2, 2, [1, 0, 1, 1].map(RingValue).to_vec());
        let a2 = RingMatrix::new(2, 2, [0, 1, 0, 0].map(RingValue).to_vec());
        let a3 = RingMatrix::zeros(2, 2);
        let h = ShareMatrix::new(2, 1, m.input_f64(PartyId(2), &[1.0, 2.0]).unwrap()).unwrap();
        let out = m.private_matmul(&[a1, a2, a3], &h).unwrap();
        let got: Vec<f64> = out.as_vector().reconstruct_local().iter().map(|&v| decode(v, &c)).collect();
        assert_eq!(got, vec![3.0, 3.0]);
    }

    #[test]
    fn select_is_local() {
        let mut m = Mpc::new(2, cfg(), 8).unwrap();
        let a = m.input(PartyId(1), &[RingValue(1), RingValue(2)]).unwrap();
        let b = m.input(PartyId(2), &[RingValue(3), RingValue(4)]).unwrap();
        let before = m.transcript().len();
        let s = m.select(&[true, false], &a, &b).unwrap();
        assert_eq!(m.transcript().len(), before);
        assert_eq!(s.reconstruct_local(), vec![RingValue(1), RingValue(4)]);
    }
}
