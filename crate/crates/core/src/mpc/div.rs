//! Secure division by an iterated reciprocal.
//!
//! With a public exponent `e`, `b̂ = b / 2^e` and `w` approximates `1 / b̂`:
//! `w₀ = 2.9142 - 2b̂`, then `w ← w (2 - b̂ w)`. Each step squares the error
//! `1 - b̂ w`, so convergence only needs `0 < b̂ w₀ < 2`. The quotient is
//! `a w / 2^e`. Scaling by `2^-e` is folded into the truncation shift of the
//! products, so `b̂` is never materialised separately.

use super::{Mpc, MpcError, ShareVector};
use crate::numeric::RingValue;

/// Default iteration count.
pub const DIV_ITERS: usize = 15;

/// Initial reciprocal estimate constant for `b̂ ∈ [1/2, 1]`.
pub const W0_OFFSET: f64 = 2.9142;

/// Public bound on the divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivisorBound {
    /// `b ∈ [2^(e-1), 2^e]`: the normalised divisor lies in `[1/2, 1]`.
    Window(i32),
    /// `b ∈ (0, 2^e]`: convergence still holds but small divisors take more
    /// iterations before the error squares away.
    Below(i32),
}

impl DivisorBound {
    pub fn exponent(self) -> i32 {
        match self {
            DivisorBound::Window(e) | DivisorBound::Below(e) => e,
        }
    }

    /// Smallest exponent covering a positive `bound` as a `Below` bound.
    pub fn below(bound: f64) -> Self {
        DivisorBound::Below(bound.log2().ceil() as i32)
    }

    fn admits(self, b: f64) -> bool {
        match self {
            DivisorBound::Window(e) => b >= 2f64.powi(e - 1) && b <= 2f64.powi(e),
            DivisorBound::Below(e) => b > 0.0 && b <= 2f64.powi(e),
        }
    }
}

impl Mpc {
    /// Allowed exponent range `[-f/2, ceil(log2 B)]`.
    pub fn divisor_exponent_limits(&self) -> (i32, i32) {
        (-(self.cfg().frac_bits as i32) / 2, self.cfg().bound_bits() as i32)
    }

    pub fn div(&mut self, a: &ShareVector, b: &ShareVector, bound: DivisorBound) -> Result<ShareVector, MpcError> {
        self.div_iters(a, b, bound, DIV_ITERS)
    }

    pub fn div_iters(
        &mut self,
        a: &ShareVector,
        b: &ShareVector,
        bound: DivisorBound,
        iters: usize,
    ) -> Result<ShareVector, MpcError> {
        if a.len() != b.len() {
            return Err(MpcError::DimensionMismatch {
                op: "div",
                left: a.len().to_string(),
                right: b.len().to_string(),
            });
        }
        let e = bound.exponent();
        let (min, max) = self.divisor_exponent_limits();
        if e < min || e > max {
            return Err(MpcError::DivisorRange { exponent: e, min, max });
        }
        let cfg = *self.cfg();
        if self.debug_checks() {
            for (index, v) in self.peek(b).into_iter().enumerate() {
                let value = cfg.decode(v);
                if !bound.admits(value) {
                    return Err(MpcError::BadNormalization { index, value, exponent: e });
                }
            }
        }
        let s = (cfg.frac_bits as i32 + e) as u32;
        // 2b̂ = b * 2^(1-e)
        let two_bhat = if e <= 1 {
            self.scale_public(b, RingValue(1u64 << (1 - e)))
        } else {
            self.truncate(b, (e - 1) as u32)?
        };
        let offset = cfg.encode(W0_OFFSET)?;
        let neg = self.scale_public(&two_bhat, -RingValue(1));
        let mut w = self.add_public(&neg, &vec![offset; b.len()]);
        let two = cfg.encode(2.0)?;
        for _ in 0..iters {
            let t = self.mul_shift(b, &w, s)?;
            let neg_t = self.scale_public(&t, -RingValue(1));
            let u = self.add_public(&neg_t, &vec![two; b.len()]);
            w = self.mul(&w, &u)?;
        }
        self.mul_shift(a, &w, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::FixedPointConfig;
    use crate::runtime::PartyId;

    #[test]
    fn div_examples() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 1).unwrap();
        let a = m.input_f64(PartyId(1), &[7.0, 0.0, 3.0]).unwrap();
        let b = m.input_f64(PartyId(2), &[2.0, 1.5, 1.25]).unwrap();
        let q = m.div(&a, &b, DivisorBound::Window(1)).unwrap();
        let got: Vec<f64> = q.reconstruct_local().iter().map(|&v| c.decode(v)).collect();
        assert!((got[0] - 3.5).abs() / 3.5 <= 2f64.powi(-14), "{}", got[0]);
        assert!(got[1].abs() <= 2f64.powi(-14));
        let b2 = m.input_f64(PartyId(2), &[3.0]).unwrap();
        let a2 = m.input_f64(PartyId(1), &[3.0]).unwrap();
        let one = m.div(&a2, &b2, DivisorBound::Window(2)).unwrap();
        assert!((c.decode(one.reconstruct_local()[0]) - 1.0).abs() <= 2f64.powi(-14));
    }

    #[test]
    fn bad_bounds_are_rejected() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 2).unwrap();
        let a = m.input_f64(PartyId(1), &[1.0]).unwrap();
        let b = m.input_f64(PartyId(2), &[3.0]).unwrap();
        assert!(matches!(
            m.div(&a, &b, DivisorBound::Window(1)),
            Err(MpcError::BadNormalization { index: 0, exponent: 1, .. })
        ));
        assert!(matches!(
            m.div(&a, &b, DivisorBound::Window(40)),
            Err(MpcError::DivisorRange { exponent: 40, .. })
        ));
    }

    #[test]
    fn loose_bound_converges_for_small_divisors() {
        let c = FixedPointConfig::default();
        let mut m = Mpc::new(2, c, 3).unwrap();
        let a = m.input_f64(PartyId(1), &[2.0, 6.0, 1.0]).unwrap();
        let b = m.input_f64(PartyId(2), &[3.0, 20.0, 128.0]).unwrap();
        let q = m.div(&a, &b, DivisorBound::Below(7)).unwrap();
        let got: Vec<f64> = q.reconstruct_local().iter().map(|&v| c.decode(v)).collect();
        for (g, w) in got.iter().zip([2.0 / 3.0, 0.3, 1.0 / 128.0]) {
            assert!((g - w).abs() < 1e-3, "{g} vs {w}");
        }
    }
}
