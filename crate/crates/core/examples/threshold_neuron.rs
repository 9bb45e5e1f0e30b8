//! The single threshold neuron y = [x1 + x2 >= 2] as CNF, checked row by
//! row against its truth table.
//!
//!     cargo run --example threshold_neuron

use satxplain::cnf::to_dimacs_string;
use satxplain::encoder::encode_model;
use satxplain::fixedpoint::FixedPointFormat;
use satxplain::model::{LayerSpec, ModelSpec, Quantization};
use satxplain::solver::{CdclSolver, SatBackend, SolverConfig};

fn main() -> anyhow::Result<()> {
    let int4 = FixedPointFormat::new(4, 0)?;
    let neuron = ModelSpec::new_binary(
        1,
        2,
        1,
        Quantization { weights: int4, activations: int4 },
        vec![
            LayerSpec::Dense { inputs: 2, outputs: 1, weights: vec![1.0, 1.0], bias: vec![0.0] },
            LayerSpec::ThresholdStep { threshold: 2.0 },
        ],
    )?;
    let enc = encode_model(&neuron)?;
    let (x1, x2) = (enc.feature_bits(0, 0)[0], enc.feature_bits(0, 1)[0]);
    let y = enc.outputs()[0].bits()[0];
    println!("x1 = {}, x2 = {}, y = {}", x1.to_dimacs(), x2.to_dimacs(), y.to_dimacs());
    print!("{}", to_dimacs_string(enc.formula()));

    let mut solver = CdclSolver::from_formula(enc.formula(), SolverConfig::default());
    println!("\nx1 x2  y  consistent");
    for row in 0..8u32 {
        let (a, b, c) = (row & 1 == 1, row & 2 == 2, row & 4 == 4);
        let sat = solver.solve(&[x1 ^ !a, x2 ^ !b, y ^ !c])?.is_sat();
        println!(" {}  {}  {}  {}", a as u8, b as u8, c as u8, sat);
    }
    Ok(())
}
