//! Fixed-point arithmetic as the quantized network computes it: exact
//! widened products and sums, then floor-and-saturate narrowing.
//!
//!     cargo run --example fixed_point

use satxplain::fixedpoint::{
    product_format, quantize, requantize, widened_mul, widened_sum, FixedPointFormat,
};

fn main() -> anyhow::Result<()> {
    let w_fmt = FixedPointFormat::new(8, 5)?;
    let a_fmt = FixedPointFormat::new(4, 2)?;

    for x in [0.3, -0.375, 0.125, 5.0, -7.9] {
        let q = quantize(x, a_fmt)?;
        println!("quantize({x:>6}) in {a_fmt} -> mantissa {:>3} = {}", q.mantissa(), q.to_f64());
    }

    let weights = [0.71, -1.4, 2.2];
    let inputs = [0.5, 1.25, -0.75];
    let pf = product_format(w_fmt, a_fmt)?;
    let mut terms = Vec::new();
    for (w, x) in weights.iter().zip(inputs) {
        let p = widened_mul(quantize(*w, w_fmt)?, quantize(x, a_fmt)?)?;
        println!("{w} * {x} -> {} ({})", p.to_f64(), p.format());
        terms.push(p);
    }
    terms.push(quantize(0.1, pf)?); // bias
    let acc = widened_sum(&terms, pf)?;
    let out = requantize(acc, a_fmt);
    println!("accumulator {} in {}, narrowed to {} in {}", acc.to_f64(), acc.format(), out.to_f64(), a_fmt);
    let float: f64 = weights.iter().zip(inputs).map(|(w, x)| w * x).sum::<f64>() + 0.1;
    println!("float reference {float:.4}");
    Ok(())
}
