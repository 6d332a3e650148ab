//! Precision bookkeeping and decimal I/O for [`rug::Float`].
//!
//! Every routine in the crate works in a binary precision (bits) derived from
//! a requested number of decimal digits. Serialized numbers always travel as
//! decimal strings so artifacts compare byte-for-byte across runs.

use rug::float::Constant;
use rug::ops::Pow;
use rug::Float;
use std::cmp::Ordering;

/// Guard bits added on top of the bits implied by a digit count.
pub const GUARD_BITS: u32 = 32;

/// Precision used when no caller preference is given (about 77 digits).
pub const DEFAULT_PREC: u32 = 256;

/// Binary precision that carries `digits` significant decimal digits plus guard bits.
pub fn bits_for_digits(digits: u32) -> u32 {
    (f64::from(digits) * std::f64::consts::LOG2_10).ceil() as u32 + GUARD_BITS
}

/// Decimal digits representable at `bits` once the guard bits are removed.
pub fn digits_for_bits(bits: u32) -> u32 {
    (f64::from(bits.saturating_sub(GUARD_BITS)) / std::f64::consts::LOG2_10).floor() as u32
}

pub fn pi(prec: u32) -> Float {
    Float::with_val(prec, Constant::Pi)
}

pub fn from_f64(prec: u32, x: f64) -> Float {
    Float::with_val(prec, x)
}

/// Re-rounds `x` to `prec`; exact whenever `prec >= x.prec()`.
pub fn at_prec(prec: u32, x: &Float) -> Float {
    Float::with_val(prec, x)
}

/// Parses a decimal (or `p/q` rational) literal at the given precision.
pub fn parse(prec: u32, s: &str) -> Result<Float, String> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n = parse(prec, num)?;
        let d = parse(prec, den)?;
        if d.is_zero() {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok(n / d);
    }
    let parsed = Float::parse(s).map_err(|e| format!("invalid number `{s}`: {e}"))?;
    Ok(Float::with_val(prec, parsed))
}

/// Scientific decimal string with `digits` significant digits.
pub fn to_decimal(x: &Float, digits: usize) -> String {
    if x.is_zero() {
        return "0".to_string();
    }
    x.to_string_radix(10, Some(digits.max(1)))
}

/// Decimal string carrying every digit that `x`'s precision supports.
pub fn to_decimal_full(x: &Float) -> String {
    to_decimal(x, digits_for_bits(x.prec() + GUARD_BITS).max(17) as usize)
}

/// `log10 |x|` as an `f64`, usable far outside the `f64` exponent range.
pub fn log10_abs(x: &Float) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let l = Float::with_val(64, x.abs_ref()).log10();
    l.to_f64()
}

/// `∫_0^len e^{-rate s} ds`, exact for every real rate including zero.
pub fn exp_integral(rate: &Float, len: &Float) -> Float {
    let prec = rate.prec().max(len.prec());
    if rate.is_zero() {
        return Float::with_val(prec, len);
    }
    let x = Float::with_val(prec, rate * len);
    let em1 = (-x).exp_m1();
    -em1 / rate
}

pub fn max_abs(v: &[Float]) -> Float {
    let prec = v.first().map_or(DEFAULT_PREC, Float::prec);
    v.iter().fold(Float::with_val(prec, 0), |acc, x| if x.clone().abs() > acc { x.clone().abs() } else { acc })
}

pub fn norm2(v: &[Float]) -> Float {
    let prec = v.first().map_or(DEFAULT_PREC, Float::prec);
    let mut s = Float::with_val(prec, 0);
    for x in v {
        s += x.clone().square();
    }
    s.sqrt()
}

pub fn dot(a: &[Float], b: &[Float]) -> Float {
    let prec = a.first().map_or(DEFAULT_PREC, Float::prec);
    let mut s = Float::with_val(prec, 0);
    for (x, y) in a.iter().zip(b) {
        s += Float::with_val(prec, x * y);
    }
    s
}

/// Total order on finite floats; NaN compares equal so sorting never panics.
pub fn cmp(a: &Float, b: &Float) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// `x^p` for a real exponent `p >= 0`, with `0^0 = 1`.
pub fn powf(x: &Float, p: &Float) -> Float {
    if p.is_zero() {
        return Float::with_val(x.prec(), 1);
    }
    Float::with_val(x.prec(), x.pow(p))
}

/// Nudges a certified upper constant outward by a few ulps so inequalities
/// that hold with equality at the extremal index survive rounding.
pub fn round_up(x: Float) -> Float {
    let prec = x.prec();
    let slack = Float::with_val(prec, Float::with_val(prec, 1) >> (prec - 8));
    if x.is_sign_negative() {
        Float::with_val(prec, &x * (Float::with_val(prec, 1) - slack))
    } else {
        Float::with_val(prec, &x * (Float::with_val(prec, 1) + slack))
    }
}

/// Floor of a nonnegative float as `u64`, or `None` when out of range.
pub fn floor_u64(x: &Float) -> Option<u64> {
    if x.is_nan() || x.is_sign_negative() && !x.is_zero() {
        return None;
    }
    x.clone().floor().to_integer()?.to_u64()
}

/// Serde adapter storing a [`Float`] as a full-precision decimal string.
///
/// On load the precision is recovered from the number of significant digits.
pub mod serde_float {
    use rug::Float;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Float, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::to_decimal_full(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Float, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_decimal(&text).map_err(serde::de::Error::custom)
    }
}

/// [`serde_float`] for vectors.
pub mod serde_vec {
    use rug::Float;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Float], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(super::to_decimal_full))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Float>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts.iter().map(|t| super::parse_decimal(t).map_err(serde::de::Error::custom)).collect()
    }
}

/// Parses a decimal string at a precision matching its significant digits.
pub fn parse_decimal(text: &str) -> Result<Float, String> {
    let mantissa = text.split(['e', 'E', '@']).next().unwrap_or("");
    let digits = mantissa.chars().filter(char::is_ascii_digit).count().max(17) as u32;
    parse(bits_for_digits(digits), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_and_bits_round_trip() {
        for d in [1u32, 50, 300, 8510] {
            assert!(digits_for_bits(bits_for_digits(d)) >= d);
        }
    }

    #[test]
    fn parse_rationals_and_decimals() {
        let q = parse(128, "1/4").unwrap();
        assert_eq!(q, 0.25);
        let x = parse(128, "0.15").unwrap();
        assert!((x.to_f64() - 0.15).abs() < 1e-17);
        assert!(parse(64, "abc").is_err());
        assert!(parse(64, "1/0").is_err());
    }

    #[test]
    fn exp_integral_limits() {
        let len = from_f64(128, 0.5);
        assert_eq!(exp_integral(&from_f64(128, 0.0), &len), 0.5);
        let tiny = from_f64(128, 1e-30);
        let v = exp_integral(&tiny, &len);
        assert!((v.to_f64() - 0.5).abs() < 1e-29);
        let r = from_f64(128, 2.0);
        let expect = (1.0 - (-1.0f64).exp()) / 2.0;
        assert!((exp_integral(&r, &len).to_f64() - expect).abs() < 1e-16);
        let neg = from_f64(128, -2.0);
        let expect = ((1.0f64).exp() - 1.0) / 2.0;
        assert!((exp_integral(&neg, &len).to_f64() - expect).abs() < 1e-15);
    }

    #[test]
    fn decimal_output_is_stable() {
        let x = from_f64(128, 0.1);
        assert_eq!(to_decimal(&x, 5), "1.0000e-1");
        assert_eq!(to_decimal(&from_f64(64, 0.0), 5), "0");
    }

    #[test]
    fn round_up_moves_outward() {
        let x = from_f64(64, 3.0);
        assert!(round_up(x.clone()) > x);
        let y = from_f64(64, -3.0);
        assert!(round_up(y.clone()) > y);
    }

    #[test]
    fn log10_beyond_f64_range() {
        let x = from_f64(256, -20000.0).exp();
        let l = log10_abs(&x);
        assert!((l + 20000.0 * std::f64::consts::LOG10_E).abs() < 1e-6);
    }
}
