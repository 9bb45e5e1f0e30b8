//! Compile a quantized model to CNF and break the variables down by role.
//!
//!     cargo run --example encode_model [MODEL.json] [OUT.cnf]

use std::collections::BTreeMap;

use satxplain::cnf::{to_dimacs_string, VarRole};
use satxplain::encoder::encode_model;
use satxplain::model::ModelSpec;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/model.json").into());
    let model = ModelSpec::load(path.as_ref())?;
    let enc = encode_model(&model)?;
    println!(
        "{}x{} inputs at {} bits, {} classes, logits in {}",
        model.input_frames(),
        model.input_features(),
        model.input_bits_per_feature(),
        model.num_classes(),
        enc.output_format()
    );
    println!("{} variables, {} clauses", enc.formula().num_vars(), enc.formula().num_clauses());

    let mut roles: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, role) in enc.varmap().iter() {
        let name = match role {
            VarRole::InputFeatureBit { .. } => "input bit",
            VarRole::ActivationBit { .. } => "activation bit",
            VarRole::OutputLogitBit { .. } => "logit bit",
            VarRole::FlipIndicator { .. } => "flip indicator",
            VarRole::CardinalityAux => "counter",
            VarRole::QueryGuard => "guard",
            VarRole::TseitinAux => "gate",
        };
        *roles.entry(name).or_default() += 1;
    }
    for (name, n) in roles {
        println!("  {name:<15}{n}");
    }
    if let Some(out) = std::env::args().nth(2) {
        std::fs::write(&out, to_dimacs_string(enc.formula()))?;
        println!("wrote {out}");
    }
    Ok(())
}
