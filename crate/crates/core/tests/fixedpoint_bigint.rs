//! Fixed-point semantics against arbitrary-precision integer arithmetic.

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satxplain::fixedpoint::{
    product_format, quantize, requantize, sum_format, widened_mul, widened_sum, FixedPointFormat, QuantizedValue,
};

const CASES: usize = 10_000;

fn random_format(rng: &mut ChaCha8Rng, max_bits: u32) -> FixedPointFormat {
    let bits = rng.gen_range(2..=max_bits);
    FixedPointFormat::new(bits, rng.gen_range(0..bits)).unwrap()
}

fn bounds(fmt: FixedPointFormat) -> (BigInt, BigInt) {
    let half = BigInt::from(1) << (fmt.total_bits() - 1);
    (-half.clone(), half - 1)
}

fn clamp(v: BigInt, fmt: FixedPointFormat) -> BigInt {
    let (lo, hi) = bounds(fmt);
    v.clamp(lo, hi)
}

fn random_value(rng: &mut ChaCha8Rng, fmt: FixedPointFormat) -> QuantizedValue {
    let half = 1i64 << (fmt.total_bits() - 1);
    QuantizedValue::from_mantissa(fmt, rng.gen_range(-half..half)).unwrap()
}

fn floor_div_pow2(v: &BigInt, k: u32) -> BigInt {
    let d = BigInt::from(1) << k;
    let q = v / &d;
    if v % &d != BigInt::from(0) && *v < BigInt::from(0) {
        q - 1
    } else {
        q
    }
}

/// `x * 2^frac` rounded half away from zero, computed from the float's bits.
fn exact_round(x: f64, frac: u32) -> BigInt {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac_field = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac_field, -1074)
    } else {
        (frac_field | 1 << 52, exp - 1075)
    };
    let shift = e + frac as i64;
    let magnitude = if shift >= 0 {
        BigInt::from(mant) << shift as usize
    } else {
        let k = (-shift) as u32;
        let m = BigInt::from(mant);
        let half = BigInt::from(1) << (k - 1);
        (m + half) >> k as usize
    };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

#[test]
fn quantize_matches_exact_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..CASES {
        let fmt = random_format(&mut rng, 24);
        let span = (1u64 << (fmt.total_bits() - fmt.frac_bits())) as f64;
        let x = rng.gen_range(-1.5 * span..1.5 * span);
        let q = quantize(x, fmt).unwrap();
        assert_eq!(BigInt::from(q.mantissa()), clamp(exact_round(x, fmt.frac_bits()), fmt), "x = {x}, {fmt}");
    }
}

#[test]
fn quantize_ties_round_away_from_zero() {
    let fmt = FixedPointFormat::new(8, 1).unwrap();
    for (x, m) in [(0.25, 1), (-0.25, -1), (0.75, 2), (-0.75, -2), (1000.0, 127), (-1000.0, -128)] {
        assert_eq!(quantize(x, fmt).unwrap().mantissa(), m, "x = {x}");
    }
}

#[test]
fn products_sums_and_narrowing_match_big_integers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..CASES {
        let fa = random_format(&mut rng, 16);
        let fb = random_format(&mut rng, 16);
        let pf = product_format(fa, fb).unwrap();
        let m = rng.gen_range(1..=64);
        let mut terms = Vec::with_capacity(m);
        let mut exact = BigInt::from(0);
        for _ in 0..m {
            let (a, b) = (random_value(&mut rng, fa), random_value(&mut rng, fb));
            let p = widened_mul(a, b).unwrap();
            let big = BigInt::from(a.mantissa()) * BigInt::from(b.mantissa());
            assert_eq!(BigInt::from(p.mantissa()), big);
            assert_eq!(p.format(), pf);
            exact += big;
            terms.push(p);
        }
        let s = widened_sum(&terms, pf).unwrap();
        assert_eq!(BigInt::from(s.mantissa()), exact);
        assert_eq!(s.format(), sum_format(pf, m).unwrap());
        let (lo, hi) = bounds(s.format());
        assert!(lo <= exact && exact <= hi);

        let target = random_format(&mut rng, 16);
        let r = requantize(s, target);
        let shifted = if pf.frac_bits() >= target.frac_bits() {
            floor_div_pow2(&exact, pf.frac_bits() - target.frac_bits())
        } else {
            exact << (target.frac_bits() - pf.frac_bits()) as usize
        };
        assert_eq!(BigInt::from(r.mantissa()), clamp(shifted, target), "requantize {s:?} -> {target}");
    }
}

#[test]
fn worst_case_sums_fit_their_format() {
    for bits in 2..=16u32 {
        let fmt = FixedPointFormat::new(bits, 0).unwrap();
        for m in 1..=200usize {
            let acc = sum_format(fmt, m).unwrap();
            let (lo, hi) = bounds(acc);
            let (tlo, thi) = bounds(fmt);
            assert!(lo <= tlo * m && thi * m <= hi, "{bits} bits x {m}");
        }
    }
}
