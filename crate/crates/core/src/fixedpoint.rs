//! Two's-complement fixed-point arithmetic.
//!
//! These functions define the bit-exact reference semantics of the quantized
//! network. The circuit gadgets in [`crate::circuit`] reproduce them exactly:
//! products and sums are exact through widening, narrowing uses floor
//! (arithmetic right shift) followed by saturation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest format accepted in model files.
pub const MAX_STORED_BITS: u32 = 32;
/// Widest accumulator the widening rules may produce.
pub const MAX_WIDENED_BITS: u32 = 62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("invalid fixed-point format: bits={bits}, frac={frac} (need 2 <= bits <= {max}, frac < bits)")]
    InvalidFormat { bits: u32, frac: u32, max: u32 },
    #[error("cannot quantize non-finite value {0}")]
    NonFinite(f64),
    #[error("format mismatch: expected {expected}, found {found}")]
    FormatMismatch {
        expected: FixedPointFormat,
        found: FixedPointFormat,
    },
    #[error("widened format would need {0} bits (limit {MAX_WIDENED_BITS})")]
    TooWide(u32),
}

/// An `n.f` signed fixed-point format: `n` total bits, `f` of them fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat", into = "RawFormat")]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
}

#[derive(Serialize, Deserialize)]
struct RawFormat {
    bits: u32,
    frac: u32,
}

impl TryFrom<RawFormat> for FixedPointFormat {
    type Error = FixedPointError;
    fn try_from(raw: RawFormat) -> Result<Self, Self::Error> {
        FixedPointFormat::new(raw.bits, raw.frac)
    }
}

impl From<FixedPointFormat> for RawFormat {
    fn from(f: FixedPointFormat) -> Self {
        RawFormat {
            bits: f.total_bits,
            frac: f.frac_bits,
        }
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.total_bits, self.frac_bits)
    }
}

impl FixedPointFormat {
    /// A storable format: `2 <= bits <= 32`, `frac < bits`.
    pub fn new(bits: u32, frac: u32) -> Result<Self, FixedPointError> {
        if !(2..=MAX_STORED_BITS).contains(&bits) || frac >= bits {
            return Err(FixedPointError::InvalidFormat {
                bits,
                frac,
                max: MAX_STORED_BITS,
            });
        }
        Ok(Self {
            total_bits: bits,
            frac_bits: frac,
        })
    }

    /// An intermediate accumulator format produced by widening.
    pub fn widened(bits: u32, frac: u32) -> Result<Self, FixedPointError> {
        if bits > MAX_WIDENED_BITS {
            return Err(FixedPointError::TooWide(bits));
        }
        if bits < 2 || frac >= bits {
            return Err(FixedPointError::InvalidFormat {
                bits,
                frac,
                max: MAX_WIDENED_BITS,
            });
        }
        Ok(Self {
            total_bits: bits,
            frac_bits: frac,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn min_mantissa(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_mantissa(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Value of one unit in the last place.
    pub fn ulp(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn contains(&self, mantissa: i64) -> bool {
        (self.min_mantissa()..=self.max_mantissa()).contains(&mantissa)
    }

    fn saturate(&self, mantissa: i128) -> i64 {
        mantissa.clamp(self.min_mantissa() as i128, self.max_mantissa() as i128) as i64
    }
}

/// A mantissa together with its format; real value is `mantissa * 2^-frac`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantizedValue {
    format: FixedPointFormat,
    mantissa: i64,
}

impl QuantizedValue {
    /// Builds a value, saturating the mantissa into the format's range.
    pub fn saturating(format: FixedPointFormat, mantissa: i64) -> Self {
        Self {
            format,
            mantissa: format.saturate(mantissa as i128),
        }
    }

    /// Builds a value whose mantissa is already known to be in range.
    pub fn from_mantissa(format: FixedPointFormat, mantissa: i64) -> Option<Self> {
        format.contains(mantissa).then_some(Self { format, mantissa })
    }

    pub fn zero(format: FixedPointFormat) -> Self {
        Self {
            format,
            mantissa: 0,
        }
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn mantissa(&self) -> i64 {
        self.mantissa
    }

    pub fn to_f64(&self) -> f64 {
        self.mantissa as f64 * self.format.ulp()
    }
}

/// Round-to-nearest (ties away from zero), then saturate.
pub fn quantize(x: f64, fmt: FixedPointFormat) -> Result<QuantizedValue, FixedPointError> {
    if !x.is_finite() {
        return Err(FixedPointError::NonFinite(x));
    }
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
    // f64 -> i128 casts saturate, so huge inputs clamp correctly.
    Ok(QuantizedValue {
        format: fmt,
        mantissa: fmt.saturate(scaled as i128),
    })
}

pub fn dequantize(v: QuantizedValue) -> f64 {
    v.to_f64()
}

/// Format of an exact product of values in `a` and `b`.
pub fn product_format(
    a: FixedPointFormat,
    b: FixedPointFormat,
) -> Result<FixedPointFormat, FixedPointError> {
    FixedPointFormat::widened(a.total_bits + b.total_bits, a.frac_bits + b.frac_bits)
}

/// Extra bits needed to sum `m` terms without overflow: `ceil(log2(m))`.
pub fn sum_growth_bits(m: usize) -> u32 {
    if m <= 1 {
        0
    } else {
        usize::BITS - (m - 1).leading_zeros()
    }
}

/// Format of an exact sum of `m` terms in `fmt`.
pub fn sum_format(fmt: FixedPointFormat, m: usize) -> Result<FixedPointFormat, FixedPointError> {
    FixedPointFormat::widened(fmt.total_bits + sum_growth_bits(m), fmt.frac_bits)
}

/// Exact product; the result format is wide enough that it never overflows.
pub fn widened_mul(
    a: QuantizedValue,
    b: QuantizedValue,
) -> Result<QuantizedValue, FixedPointError> {
    let format = product_format(a.format, b.format)?;
    let mantissa = a.mantissa as i128 * b.mantissa as i128;
    debug_assert!(format.contains(mantissa as i64));
    Ok(QuantizedValue {
        format,
        mantissa: mantissa as i64,
    })
}

/// Exact sum of terms sharing `fmt`. An empty list sums to zero in `fmt`.
pub fn widened_sum(
    terms: &[QuantizedValue],
    fmt: FixedPointFormat,
) -> Result<QuantizedValue, FixedPointError> {
    if let Some(bad) = terms.iter().find(|t| t.format != fmt) {
        return Err(FixedPointError::FormatMismatch {
            expected: fmt,
            found: bad.format,
        });
    }
    let format = sum_format(fmt, terms.len())?;
    let total: i128 = terms.iter().map(|t| t.mantissa as i128).sum();
    debug_assert!(format.contains(total as i64), "widened sum overflowed");
    Ok(QuantizedValue {
        format,
        mantissa: total as i64,
    })
}

/// Shifts `v` onto `fmt`'s fraction (floor when narrowing) and saturates.
pub fn requantize(v: QuantizedValue, fmt: FixedPointFormat) -> QuantizedValue {
    let m = v.mantissa as i128;
    let shifted = if v.format.frac_bits >= fmt.frac_bits {
        m >> (v.format.frac_bits - fmt.frac_bits)
    } else {
        m << (fmt.frac_bits - v.format.frac_bits)
    };
    QuantizedValue {
        format: fmt,
        mantissa: fmt.saturate(shifted),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmt(n: u32, f: u32) -> FixedPointFormat {
        FixedPointFormat::new(n, f).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.5, fmt(4, 2)).unwrap().mantissa(), 2);
        assert_eq!(quantize(10.0, fmt(4, 2)).unwrap().mantissa(), 7);
        // -0.3 * 16 = -4.8
        let expected = (-0.3f64 * 16.0).round() as i64;
        assert_eq!(expected, -5);
        assert_eq!(quantize(-0.3, fmt(8, 4)).unwrap().mantissa(), expected);
        assert_eq!(quantize(-100.0, fmt(4, 2)).unwrap().mantissa(), -8);
    }

    #[test]
    fn quantize_ties_away_from_zero() {
        assert_eq!(quantize(0.125, fmt(8, 2)).unwrap().mantissa(), 1);
        assert_eq!(quantize(-0.125, fmt(8, 2)).unwrap().mantissa(), -1);
        assert_eq!(quantize(0.375, fmt(8, 2)).unwrap().mantissa(), 2);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        assert!(matches!(
            quantize(f64::NAN, fmt(4, 2)),
            Err(FixedPointError::NonFinite(_))
        ));
        assert!(quantize(f64::INFINITY, fmt(4, 2)).is_err());
    }

    #[test]
    fn format_bounds() {
        assert!(FixedPointFormat::new(1, 0).is_err());
        assert!(FixedPointFormat::new(33, 0).is_err());
        assert!(FixedPointFormat::new(4, 4).is_err());
        assert!(FixedPointFormat::new(32, 31).is_ok());
        let json = serde_json::to_string(&fmt(6, 3)).unwrap();
        assert_eq!(json, r#"{"bits":6,"frac":3}"#);
        assert!(serde_json::from_str::<FixedPointFormat>(r#"{"bits":3,"frac":5}"#).is_err());
    }

    #[test]
    fn widened_mul_examples() {
        let a = QuantizedValue::from_mantissa(fmt(4, 2), 2).unwrap();
        let b = QuantizedValue::from_mantissa(fmt(4, 2), 3).unwrap();
        let p = widened_mul(a, b).unwrap();
        assert_eq!((p.mantissa(), p.format()), (6, FixedPointFormat::widened(8, 4).unwrap()));

        let z = QuantizedValue::zero(fmt(4, 2));
        assert_eq!(widened_mul(a, z).unwrap().mantissa(), 0);

        let m = QuantizedValue::from_mantissa(fmt(4, 0), -8).unwrap();
        let p = widened_mul(m, m).unwrap();
        assert_eq!(p.mantissa(), 64);
        assert_eq!(p.format().total_bits(), 8);
    }

    #[test]
    fn widened_sum_examples() {
        let f = fmt(4, 0);
        assert_eq!(widened_sum(&[], f).unwrap().mantissa(), 0);
        let one = QuantizedValue::from_mantissa(f, 1).unwrap();
        let s = widened_sum(&[one; 4], f).unwrap();
        assert_eq!((s.mantissa(), s.format().total_bits()), (4, 6));
        let single = widened_sum(&[one], f).unwrap();
        assert_eq!(single.format().total_bits(), 4);
        let other = QuantizedValue::zero(fmt(4, 1));
        assert!(widened_sum(&[one, other], f).is_err());
    }

    #[test]
    fn sum_growth() {
        let expected = [0, 0, 1, 2, 2, 3, 3, 3, 3, 4];
        for (m, e) in expected.iter().enumerate() {
            assert_eq!(sum_growth_bits(m), *e, "m={m}");
        }
    }

    #[test]
    fn requantize_examples() {
        let v = QuantizedValue::from_mantissa(FixedPointFormat::widened(8, 4).unwrap(), 6).unwrap();
        assert_eq!(requantize(v, fmt(4, 2)).mantissa(), 6 >> 2);
        let same = QuantizedValue::from_mantissa(fmt(4, 2), -3).unwrap();
        assert_eq!(requantize(same, fmt(4, 2)), same);
        let big = QuantizedValue::from_mantissa(fmt(8, 0), 120).unwrap();
        assert_eq!(requantize(big, fmt(4, 0)).mantissa(), 7);
        // floor on negatives: -5 / 4 -> -2
        let neg = QuantizedValue::from_mantissa(fmt(8, 2), -5).unwrap();
        assert_eq!(requantize(neg, fmt(8, 0)).mantissa(), -2);
        // widening the fraction shifts left
        let w = QuantizedValue::from_mantissa(fmt(4, 0), 3).unwrap();
        assert_eq!(requantize(w, fmt(8, 2)).mantissa(), 12);
    }

    fn arb_format() -> impl Strategy<Value = FixedPointFormat> {
        (2u32..=16).prop_flat_map(|n| (Just(n), 0..n)).prop_map(|(n, f)| fmt(n, f))
    }

    fn arb_value() -> impl Strategy<Value = QuantizedValue> {
        arb_format().prop_flat_map(|f| {
            (f.min_mantissa()..=f.max_mantissa())
                .prop_map(move |m| QuantizedValue::from_mantissa(f, m).unwrap())
        })
    }

    proptest! {
        #[test]
        fn quantize_error_bounded(f in arb_format(), x in -1000.0f64..1000.0) {
            let q = quantize(x, f).unwrap();
            let lo = f.min_mantissa() as f64 * f.ulp();
            let hi = f.max_mantissa() as f64 * f.ulp();
            if x >= lo && x <= hi {
                let err = (q.to_f64() - x).abs();
                prop_assert!(err <= f.ulp() / 2.0 + 1e-12, "x={x} q={} err={err}", q.to_f64());
            }
        }

        #[test]
        fn quantize_dequantize_idempotent(v in arb_value()) {
            prop_assert_eq!(quantize(dequantize(v), v.format()).unwrap(), v);
        }

        #[test]
        fn requantize_monotone(a in arb_value(), b in arb_value(), target in arb_format()) {
            let (lo, hi) = if a.to_f64() <= b.to_f64() { (a, b) } else { (b, a) };
            prop_assert!(requantize(lo, target).mantissa() <= requantize(hi, target).mantissa());
        }
    }
}
