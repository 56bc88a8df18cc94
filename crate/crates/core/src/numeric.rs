//! Fixed-point reals embedded in the ring Z_{2^64}.
//!
//! Every plaintext oracle and every secure protocol in this crate goes through
//! these helpers, so the two paths agree bit for bit up to the documented
//! truncation error.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the ring in bits.
pub const RING_BITS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("value {value} outside the magnitude bound {bound}")]
    OutOfRange { value: f64, bound: f64 },
    #[error("invalid fixed-point configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed ring value {0:?}")]
    BadHex(String),
}

/// Fixed-point parameters shared by every party in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    #[serde(default = "default_bound")]
    pub magnitude_bound: f64,
}

fn default_frac_bits() -> u32 {
    16
}

fn default_bound() -> f64 {
    (1u64 << 20) as f64
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            frac_bits: default_frac_bits(),
            magnitude_bound: default_bound(),
        }
    }
}

impl FixedPointConfig {
    pub fn new(frac_bits: u32, magnitude_bound: f64) -> Result<Self, NumericError> {
        let cfg = Self {
            frac_bits,
            magnitude_bound,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NumericError> {
        if self.frac_bits == 0 || self.frac_bits >= RING_BITS {
            return Err(NumericError::InvalidConfig(format!(
                "frac_bits must lie in (0, {RING_BITS}), got {}",
                self.frac_bits
            )));
        }
        if !(self.magnitude_bound > 0.0) {
            return Err(NumericError::InvalidConfig(
                "magnitude bound must be positive".into(),
            ));
        }
        let scaled = self.magnitude_bound * self.scale();
        if scaled >= 2f64.powi(RING_BITS as i32 - 1) {
            return Err(NumericError::InvalidConfig(format!(
                "B * 2^f = {scaled} does not fit in the signed ring"
            )));
        }
        Ok(())
    }

    /// 2^f as a float.
    pub fn scale(&self) -> f64 {
        2f64.powi(self.frac_bits as i32)
    }

    /// Smallest representable step, 2^-f.
    pub fn ulp(&self) -> f64 {
        1.0 / self.scale()
    }

    /// Bit length of the magnitude bound, i.e. ceil(log2 B).
    pub fn bound_bits(&self) -> u32 {
        self.magnitude_bound.log2().ceil().max(0.0) as u32
    }

    /// Raw ring value of 1.0.
    pub fn one(&self) -> RingValue {
        RingValue(1u64 << self.frac_bits)
    }

    pub fn encode(&self, x: f64) -> Result<RingValue, NumericError> {
        encode(x, self)
    }

    pub fn decode(&self, v: RingValue) -> f64 {
        decode(v, self)
    }
}

/// Element of Z_{2^64}. Arithmetic wraps.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RingValue(pub u64);

impl RingValue {
    pub const ZERO: RingValue = RingValue(0);

    pub fn from_signed(x: i64) -> Self {
        RingValue(x as u64)
    }

    /// Two's-complement interpretation.
    pub fn signed(self) -> i64 {
        self.0 as i64
    }

    /// Arithmetic shift right on the signed interpretation (floor division by 2^bits).
    pub fn shr_signed(self, bits: u32) -> Self {
        RingValue::from_signed(self.signed() >> bits)
    }

    pub fn shl(self, bits: u32) -> Self {
        RingValue(self.0.wrapping_shl(bits))
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Self {
        RingValue(u64::from_le_bytes(bytes))
    }

    /// 16-char lowercase hex, the on-disk form.
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, NumericError> {
        if s.len() != 16 {
            return Err(NumericError::BadHex(s.to_string()));
        }
        u64::from_str_radix(s, 16)
            .map(RingValue)
            .map_err(|_| NumericError::BadHex(s.to_string()))
    }
}

impl fmt::Debug for RingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RingValue({:#018x})", self.0)
    }
}

impl fmt::Display for RingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Add for RingValue {
    type Output = RingValue;
    fn add(self, rhs: Self) -> Self {
        RingValue(self.0.wrapping_add(rhs.0))
    }
}

impl AddAssign for RingValue {
    fn add_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl Sub for RingValue {
    type Output = RingValue;
    fn sub(self, rhs: Self) -> Self {
        RingValue(self.0.wrapping_sub(rhs.0))
    }
}

impl SubAssign for RingValue {
    fn sub_assign(&mut self, rhs: Self) {
        self.0 = self.0.wrapping_sub(rhs.0);
    }
}

impl Mul for RingValue {
    type Output = RingValue;
    fn mul(self, rhs: Self) -> Self {
        RingValue(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for RingValue {
    type Output = RingValue;
    fn neg(self) -> Self {
        RingValue(self.0.wrapping_neg())
    }
}

impl std::iter::Sum for RingValue {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(RingValue::ZERO, |a, b| a + b)
    }
}

/// raw = round(x * 2^f) mod 2^64.
pub fn encode(x: f64, cfg: &FixedPointConfig) -> Result<RingValue, NumericError> {
    if !x.is_finite() || x.abs() > cfg.magnitude_bound {
        return Err(NumericError::OutOfRange {
            value: x,
            bound: cfg.magnitude_bound,
        });
    }
    Ok(RingValue::from_signed((x * cfg.scale()).round() as i64))
}

pub fn decode(v: RingValue, cfg: &FixedPointConfig) -> f64 {
    v.signed() as f64 / cfg.scale()
}

/// Plaintext fixed-point product: exact ring product followed by a floor shift
/// of f bits. Errors when the real product leaves the magnitude bound.
pub fn ring_mul_truncate(
    a: RingValue,
    b: RingValue,
    cfg: &FixedPointConfig,
) -> Result<RingValue, NumericError> {
    let wide = a.signed() as i128 * b.signed() as i128;
    let shifted = wide >> cfg.frac_bits;
    let limit = (cfg.magnitude_bound * cfg.scale()) as i128;
    if shifted.abs() > limit {
        return Err(NumericError::OutOfRange {
            value: shifted as f64 / cfg.scale(),
            bound: cfg.magnitude_bound,
        });
    }
    Ok(RingValue::from_signed(shifted as i64))
}

/// Floor shift used by the plaintext oracles. Operates on the ring value, so it
/// matches what the shares reconstruct to before truncation.
pub fn truncate_plain(v: RingValue, bits: u32) -> RingValue {
    v.shr_signed(bits)
}

/// Fixed-point dot product with a single truncation at the end, the way the
/// secure matrix product accumulates.
pub fn dot_truncate(a: &[RingValue], b: &[RingValue], cfg: &FixedPointConfig) -> RingValue {
    let acc: RingValue = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    truncate_plain(acc, cfg.frac_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    #[test]
    fn encode_examples() {
        let c = cfg();
        assert_eq!(encode(0.0, &c).unwrap(), RingValue(0));
        assert_eq!(encode(1.0, &c).unwrap(), RingValue(65536));
        assert_eq!(
            encode(-0.5, &c).unwrap(),
            RingValue(0u64.wrapping_sub(32768))
        );
        assert!(matches!(
            encode(2e6, &c),
            Err(NumericError::OutOfRange { .. })
        ));
    }

    #[test]
    fn decode_examples() {
        let c = cfg();
        assert_eq!(decode(encode(3.25, &c).unwrap(), &c), 3.25);
        assert_eq!(decode(RingValue(0), &c), 0.0);
        let pi = decode(encode(std::f64::consts::PI, &c).unwrap(), &c);
        assert!((pi - std::f64::consts::PI).abs() <= 2f64.powi(-16));
        assert!(pi.to_string().starts_with("3.1415"));
    }

    #[test]
    fn mul_truncate_examples() {
        let c = cfg();
        let e = |x| encode(x, &c).unwrap();
        let six = ring_mul_truncate(e(2.0), e(3.0), &c).unwrap();
        assert!((decode(six, &c) - 6.0).abs() <= 2f64.powi(-15));
        assert_eq!(ring_mul_truncate(e(0.0), e(123.4), &c).unwrap(), RingValue(0));
        let m3 = ring_mul_truncate(e(1.5), e(-2.0), &c).unwrap();
        assert!((decode(m3, &c) + 3.0).abs() <= 2f64.powi(-15));
        assert!(ring_mul_truncate(e(2000.0), e(2000.0), &c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FixedPointConfig::new(0, 10.0).is_err());
        assert!(FixedPointConfig::new(64, 10.0).is_err());
        assert!(FixedPointConfig::new(40, 2f64.powi(30)).is_err());
        assert!(FixedPointConfig::new(16, 2f64.powi(20)).is_ok());
        assert_eq!(cfg().bound_bits(), 20);
    }

    #[test]
    fn hex_round_trip() {
        let v = RingValue(0xdead_beef_0000_0001);
        assert_eq!(v.to_hex(), "deadbeef00000001");
        assert_eq!(RingValue::from_hex(&v.to_hex()).unwrap(), v);
        assert!(RingValue::from_hex("abc").is_err());
        assert!(RingValue::from_hex("zzzzzzzzzzzzzzzz").is_err());
    }

    #[test]
    fn encode_decode_error_bound_bulk() {
        let c = cfg();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let x: f64 = rng.gen_range(-c.magnitude_bound..=c.magnitude_bound);
            let back = decode(encode(x, &c).unwrap(), &c);
            assert!((back - x).abs() <= c.ulp());
        }
    }

    proptest! {
        #[test]
        fn addition_is_exact(x in -1.0e5f64..1.0e5, y in -1.0e5f64..1.0e5) {
            let c = cfg();
            let ex = encode(x, &c).unwrap();
            let ey = encode(y, &c).unwrap();
            let qx = decode(ex, &c);
            let qy = decode(ey, &c);
            prop_assert_eq!(ex + ey, encode(qx + qy, &c).unwrap());
        }

        #[test]
        fn integer_scalar_homomorphism(x in -1000.0f64..1000.0, k in -500i64..500) {
            let c = cfg();
            let ex = encode(x, &c).unwrap();
            let qx = decode(ex, &c);
            prop_assert_eq!(RingValue::from_signed(k) * ex, encode(k as f64 * qx, &c).unwrap());
        }
    }
}
