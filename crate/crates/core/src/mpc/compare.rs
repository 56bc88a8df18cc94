//! Masked-sign comparison and tournament argmax.
//!
//! `a >= b` is decided by opening `r * (a - b)` for a dealer mask `r` uniform
//! in `[1, 2^s]`. The bit is public; the opened product hides `d` only up to
//! its bit length. Zero opens to zero and counts as `>=`.

use super::{Mpc, MpcError, ShareVector, COMPARE_MASK_BITS};
use crate::runtime::MessageKind;

impl Mpc {
    /// Public bits `a_j >= b_j`.
    pub fn compare_ge(&mut self, a: &ShareVector, b: &ShareVector) -> Result<Vec<bool>, MpcError> {
        let d = self.sub(a, b)?;
        self.sign_bits(&d)
    }

    /// Public bits `d_j >= 0`.
    pub fn sign_bits(&mut self, d: &ShareVector) -> Result<Vec<bool>, MpcError> {
        if d.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = *self.cfg();
        let limit = cfg.magnitude_bound * cfg.scale();
        if limit * 2f64.powi(COMPARE_MASK_BITS as i32) >= 2f64.powi(63) {
            return Err(MpcError::MagnitudeOverflow(format!(
                "B * 2^f * 2^{COMPARE_MASK_BITS} does not fit in the signed ring"
            )));
        }
        if self.debug_checks() {
            if let Some((k, v)) = self
                .peek(d)
                .iter()
                .enumerate()
                .find(|(_, v)| (v.signed() as f64).abs() > limit)
            {
                return Err(MpcError::MagnitudeOverflow(format!(
                    "difference {} at index {k} exceeds the bound",
                    cfg.decode(*v)
                )));
            }
        }
        let masks = self.dealer_mut().compare_masks(d.len(), COMPARE_MASK_BITS)?;
        self.flush_dealer();
        let r = ShareVector::from_parts(masks)?;
        let rd = self.mul_raw(&r, d)?;
        let opened = self.open(&rd, MessageKind::Comparison, "cmp.open")?;
        Ok(opened.iter().map(|v| v.signed() >= 0).collect())
    }

    /// Index of the maximum (lowest index on ties) and the shared maximum.
    pub fn argmax(&mut self, v: &ShareVector) -> Result<(usize, ShareVector), MpcError> {
        Ok(self.argmax_many(std::slice::from_ref(v))?.pop().expect("one result"))
    }

    /// Index of the minimum (lowest index on ties) and the shared minimum.
    pub fn argmin(&mut self, v: &ShareVector) -> Result<(usize, ShareVector), MpcError> {
        let neg = self.scale_public(v, -crate::numeric::RingValue(1));
        let (i, m) = self.argmax(&neg)?;
        Ok((i, self.scale_public(&m, -crate::numeric::RingValue(1))))
    }

    /// Independent tournaments sharing their comparison rounds.
    pub fn argmax_many(&mut self, vs: &[ShareVector]) -> Result<Vec<(usize, ShareVector)>, MpcError> {
        if vs.iter().any(ShareVector::is_empty) {
            return Err(MpcError::EmptyVector);
        }
        let mut idx: Vec<Vec<usize>> = vs.iter().map(|v| (0..v.len()).collect()).collect();
        let mut vals: Vec<ShareVector> = vs.to_vec();
        while idx.iter().any(|c| c.len() > 1) {
            let mut left_pos = Vec::new();
            let mut lefts = Vec::new();
            let mut rights = Vec::new();
            for (t, cand) in idx.iter().enumerate() {
                let pairs = cand.len() / 2;
                let l: Vec<usize> = (0..pairs).map(|k| 2 * k).collect();
                let r: Vec<usize> = (0..pairs).map(|k| 2 * k + 1).collect();
                left_pos.push(pairs);
                lefts.push(vals[t].gather(&l));
                rights.push(vals[t].gather(&r));
            }
            let lrefs: Vec<&ShareVector> = lefts.iter().collect();
            let rrefs: Vec<&ShareVector> = rights.iter().collect();
            let all_l = ShareVector::concat(&lrefs);
            let all_r = ShareVector::concat(&rrefs);
            let bits = self.compare_ge(&all_l, &all_r)?;
            let winners = self.select(&bits, &all_l, &all_r)?;
            let mut offset = 0;
            for (t, &pairs) in left_pos.iter().enumerate() {
                let cand = &idx[t];
                let mut next_idx = Vec::with_capacity(pairs + 1);
                for k in 0..pairs {
                    next_idx.push(if bits[offset + k] { cand[2 * k] } else { cand[2 * k + 1] });
                }
                let mut next_vals = winners.slice(offset, pairs);
                if cand.len() % 2 == 1 {
                    next_idx.push(*cand.last().expect("odd"));
                    next_vals.push(&vals[t].slice(cand.len() - 1, 1));
                }
                offset += pairs;
                idx[t] = next_idx;
                vals[t] = next_vals;
            }
        }
        Ok(idx.into_iter().zip(vals).map(|(i, v)| (i[0], v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{FixedPointConfig, RingValue};
    use crate::runtime::PartyId;

    fn plain_argmax(v: &[i64]) -> usize {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn compare_examples_and_exhaustive_small_domain() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 1).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for x in -2..=2 {
            for y in -2..=2 {
                a.push(c.encode(x as f64).unwrap());
                b.push(c.encode(y as f64).unwrap());
            }
        }
        let sa = m.input(PartyId(1), &a).unwrap();
        let sb = m.input(PartyId(2), &b).unwrap();
        let bits = m.compare_ge(&sa, &sb).unwrap();
        let mut k = 0;
        for x in -2..=2 {
            for y in -2..=2 {
                assert_eq!(bits[k], x >= y, "{x} >= {y}");
                k += 1;
            }
        }
        assert_eq!(m.transcript().count_kind(MessageKind::Comparison), 2);
    }

    #[test]
    fn argmax_examples() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(3, c, 2).unwrap();
        let v = m.input_f64(PartyId(1), &[1.0, 5.0, 3.0]).unwrap();
        let (i, max) = m.argmax(&v).unwrap();
        assert_eq!(i, 1);
        assert_eq!(max.reconstruct_local(), vec![c.encode(5.0).unwrap()]);
        let one = m.input_f64(PartyId(2), &[-4.0]).unwrap();
        let (i, max) = m.argmax(&one).unwrap();
        assert_eq!((i, max), (0, one));
        assert_eq!(m.argmax(&ShareVector::zeros(3, 0)), Err(MpcError::EmptyVector));
        let (j, min) = m.argmin(&v).unwrap();
        assert_eq!(j, 0);
        assert_eq!(min.reconstruct_local(), vec![c.encode(1.0).unwrap()]);
    }

    #[test]
    fn argmax_exhaustive_up_to_length_four() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 3).unwrap();
        let mut cases = Vec::new();
        for len in 1..=4u32 {
            for code in 0..3usize.pow(len) {
                let mut v = Vec::new();
                let mut x = code;
                for _ in 0..len {
                    v.push((x % 3) as i64);
                    x /= 3;
                }
                cases.push(v);
            }
        }
        let shared: Vec<ShareVector> = cases
            .iter()
            .map(|v| {
                let enc: Vec<RingValue> = v.iter().map(|&x| c.encode(x as f64).unwrap()).collect();
                m.input(PartyId(1), &enc).unwrap()
            })
            .collect();
        let results = m.argmax_many(&shared).unwrap();
        for (v, (i, max)) in cases.iter().zip(results) {
            assert_eq!(i, plain_argmax(v), "{v:?}");
            assert_eq!(c.decode(max.reconstruct_local()[0]), v[i] as f64);
        }
    }

    #[test]
    fn overflowing_difference_is_rejected() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 4).unwrap();
        let big = m.input_f64(PartyId(1), &[1_000_000.0]).unwrap();
        let neg = m.input_f64(PartyId(2), &[-1_000_000.0]).unwrap();
        assert!(matches!(m.compare_ge(&big, &neg), Err(MpcError::MagnitudeOverflow(_))));
    }
}
