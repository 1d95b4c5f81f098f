//! Signed fixed-point arithmetic.
//!
//! Every real value that crosses into the encrypted or constrained world
//! (updates, trust scores, weighted updates) is first mapped to an integer
//! `raw = floor(x * 2^frac_bits)`. All operations round toward negative
//! infinity so the same integers come out of the plaintext path and out of
//! the in-circuit gadgets.

use num_integer::Integer;
use thiserror::Error;

/// Field-size budget (in bits) that a circuit over a ~255-bit field can use
/// without a product wrapping.
pub const FIELD_BUDGET_BITS: u32 = 252;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedPointError {
    #[error("value {value} does not fit in {word_bits} signed bits at scale 2^{frac_bits}")]
    Overflow {
        value: String,
        frac_bits: u32,
        word_bits: u32,
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("mismatched fixed-point configurations")]
    ConfigMismatch,
    #[error("invalid fixed-point configuration: {0}")]
    InvalidConfig(String),
}

/// Scale and width of the fixed-point encoding.
///
/// Defaults are `frac_bits = 16`, `word_bits = 40`: one ulp is `2^-16` and a
/// value must satisfy `|x| < 2^23` in real units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointConfig {
    frac_bits: u32,
    word_bits: u32,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            frac_bits: 16,
            word_bits: 40,
        }
    }
}

impl FixedPointConfig {
    pub fn new(frac_bits: u32, word_bits: u32) -> Result<Self, FixedPointError> {
        if frac_bits < 1 {
            return Err(FixedPointError::InvalidConfig(
                "frac_bits must be at least 1".into(),
            ));
        }
        if word_bits <= frac_bits {
            return Err(FixedPointError::InvalidConfig(format!(
                "word_bits ({word_bits}) must exceed frac_bits ({frac_bits})"
            )));
        }
        // raw values live in i64 and products in i128
        if word_bits > 62 {
            return Err(FixedPointError::InvalidConfig(format!(
                "word_bits ({word_bits}) must be at most 62"
            )));
        }
        Ok(Self {
            frac_bits,
            word_bits,
        })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    /// `S = 2^frac_bits`.
    pub fn scale(&self) -> i64 {
        1i64 << self.frac_bits
    }

    /// Exclusive bound on `|raw|`.
    pub fn bound(&self) -> i64 {
        1i64 << (self.word_bits - 1)
    }

    pub fn ulp(&self) -> f64 {
        1.0 / self.scale() as f64
    }

    /// Checks `2·word_bits + ceil(log2 len) + 2 < 252` for vectors of `len` entries.
    pub fn validate_for_len(&self, len: usize) -> Result<(), FixedPointError> {
        let need = 2 * self.word_bits + ceil_log2(len) + 2;
        if need >= FIELD_BUDGET_BITS {
            return Err(FixedPointError::InvalidConfig(format!(
                "vectors of length {len} need {need} bits of field headroom (limit {FIELD_BUDGET_BITS})"
            )));
        }
        Ok(())
    }

    fn check(&self, raw: i128) -> Result<i64, FixedPointError> {
        if raw.unsigned_abs() >= self.bound() as u128 {
            return Err(self.overflow(raw));
        }
        Ok(raw as i64)
    }

    fn overflow(&self, value: impl ToString) -> FixedPointError {
        FixedPointError::Overflow {
            value: value.to_string(),
            frac_bits: self.frac_bits,
            word_bits: self.word_bits,
        }
    }
}

/// `ceil(log2(n))`, with `ceil_log2(0) = ceil_log2(1) = 0`.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// A raw fixed-point integer tagged with its configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointValue {
    raw: i64,
    config: FixedPointConfig,
}

impl FixedPointValue {
    pub fn from_raw(raw: i64, config: FixedPointConfig) -> Result<Self, FixedPointError> {
        let raw = config.check(raw as i128)?;
        Ok(Self { raw, config })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn config(&self) -> FixedPointConfig {
        self.config
    }
}

/// `raw = floor(x * 2^frac_bits)`.
pub fn encode(x: f64, cfg: FixedPointConfig) -> Result<FixedPointValue, FixedPointError> {
    let scaled = (x * cfg.scale() as f64).floor();
    if !scaled.is_finite() || scaled.abs() >= cfg.bound() as f64 {
        return Err(cfg.overflow(x));
    }
    Ok(FixedPointValue {
        raw: scaled as i64,
        config: cfg,
    })
}

pub fn decode(v: FixedPointValue) -> f64 {
    v.raw as f64 / v.config.scale() as f64
}

/// `floor(a * b / 2^frac_bits)`.
pub fn fp_mul(a: FixedPointValue, b: FixedPointValue) -> Result<FixedPointValue, FixedPointError> {
    if a.config != b.config {
        return Err(FixedPointError::ConfigMismatch);
    }
    let cfg = a.config;
    let prod = a.raw as i128 * b.raw as i128;
    let raw = cfg.check(Integer::div_floor(&prod, &(cfg.scale() as i128)))?;
    Ok(FixedPointValue { raw, config: cfg })
}

/// `floor(a * 2^frac_bits / b)`.
pub fn fp_div(a: FixedPointValue, b: FixedPointValue) -> Result<FixedPointValue, FixedPointError> {
    if a.config != b.config {
        return Err(FixedPointError::ConfigMismatch);
    }
    if b.raw == 0 {
        return Err(FixedPointError::DivisionByZero);
    }
    let cfg = a.config;
    let num = a.raw as i128 * cfg.scale() as i128;
    let raw = cfg.check(Integer::div_floor(&num, &(b.raw as i128)))?;
    Ok(FixedPointValue { raw, config: cfg })
}

pub fn encode_vec(xs: &[f64], cfg: FixedPointConfig) -> Result<Vec<i64>, FixedPointError> {
    xs.iter().map(|&x| encode(x, cfg).map(|v| v.raw)).collect()
}

pub fn decode_vec(raws: &[i64], cfg: FixedPointConfig) -> Vec<f64> {
    let s = cfg.scale() as f64;
    raws.iter().map(|&r| r as f64 / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    fn fx(raw: i64) -> FixedPointValue {
        FixedPointValue::from_raw(raw, cfg()).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(1.5, cfg()).unwrap().raw(), 98304);
        assert_eq!(encode(0.0, cfg()).unwrap().raw(), 0);
        assert_eq!(encode(-0.25, cfg()).unwrap().raw(), -16384);
        // floor, not truncation
        assert_eq!(encode(-1e-9, cfg()).unwrap().raw(), -1);
    }

    #[test]
    fn encode_overflow() {
        assert!(matches!(
            encode(2f64.powi(23), cfg()),
            Err(FixedPointError::Overflow { .. })
        ));
        assert!(encode(f64::NAN, cfg()).is_err());
        assert!(encode(2f64.powi(23) - 1.0, cfg()).is_ok());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(fx(98304)), 1.5);
        assert_eq!(decode(fx(-16384)), -0.25);
        assert_eq!(decode(fx(1)), 2f64.powi(-16));
    }

    #[test]
    fn mul_examples() {
        assert_eq!(fp_mul(fx(98304), fx(98304)).unwrap().raw(), 147456);
        assert_eq!(fp_mul(fx(98304), fx(-16384)).unwrap().raw(), -24576);
        let one = encode(1.0, cfg()).unwrap();
        for raw in [-7, 0, 3, 123456789, -98765432] {
            assert_eq!(fp_mul(fx(raw), one).unwrap().raw(), raw);
        }
    }

    #[test]
    fn div_examples() {
        let three = encode(3.0, cfg()).unwrap();
        let two = encode(2.0, cfg()).unwrap();
        assert_eq!(fp_div(three, two).unwrap(), encode(1.5, cfg()).unwrap());
        let one = encode(1.0, cfg()).unwrap();
        // integer floor oracle: 65536 * 65536 / (3 * 65536) = 65536 / 3
        assert_eq!(fp_div(one, three).unwrap().raw(), 65536 / 3);
        assert_eq!(fp_div(one, three).unwrap().raw(), 21845);
        assert_eq!(fp_div(fx(0), encode(5.0, cfg()).unwrap()).unwrap().raw(), 0);
        assert_eq!(fp_div(one, fx(0)), Err(FixedPointError::DivisionByZero));
        // floor toward -inf on negative quotients
        assert_eq!(fp_div(fx(-1), three).unwrap().raw(), -1);
    }

    #[test]
    fn config_validation() {
        assert!(FixedPointConfig::new(0, 40).is_err());
        assert!(FixedPointConfig::new(16, 16).is_err());
        assert!(FixedPointConfig::new(16, 40).is_ok());
        assert!(cfg().validate_for_len(1 << 20).is_ok());
        let wide = FixedPointConfig::new(16, 62).unwrap();
        assert!(wide.validate_for_len(1 << 20).is_ok());
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(ceil_log2(16), 4);
    }

    proptest! {
        #[test]
        fn grid_round_trip(raw in -(1i64 << 39) + 1..(1i64 << 39)) {
            let x = raw as f64 / 65536.0;
            prop_assert_eq!(decode(encode(x, cfg()).unwrap()), x);
        }

        #[test]
        fn decode_error_below_one_ulp(x in -1.0e6f64..1.0e6) {
            let back = decode(encode(x, cfg()).unwrap());
            prop_assert!(x - back >= 0.0);
            prop_assert!(x - back < 2f64.powi(-16));
        }

        #[test]
        fn mul_monotone(a in -(1i64 << 30)..(1i64 << 30), b in -(1i64 << 30)..(1i64 << 30), c in 0i64..(1i64 << 20)) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let l = fp_mul(fx(lo), fx(c)).unwrap().raw();
            let h = fp_mul(fx(hi), fx(c)).unwrap().raw();
            prop_assert!(l <= h);
        }
    }
}
