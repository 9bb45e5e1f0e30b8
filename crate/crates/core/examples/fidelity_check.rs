//! Does the CNF compute exactly what the quantized forward pass computes?
//! Sampled check on a fixture model; `--exhaustive` sweeps every input
//! (about a minute for the 16-bit golden model in release mode).
//!
//!     cargo run --release --example fidelity_check [--exhaustive] [MODEL.json]

use satxplain::encoder::encode_model;
use satxplain::model::ModelSpec;
use satxplain::oracle::{exhaustive_fidelity, sampled_fidelity};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let exhaustive = args.iter().any(|a| a == "--exhaustive");
    let path = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .cloned()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/model.json").into());
    let model = ModelSpec::load(path.as_ref())?;
    let enc = encode_model(&model)?;
    let start = std::time::Instant::now();
    let report = if exhaustive {
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        exhaustive_fidelity(&model, &enc, jobs)?
    } else {
        sampled_fidelity(&model, &enc, 2000, 1)?
    };
    println!(
        "{} inputs ({} input bits), {} mismatches, {:.1?}",
        report.inputs_checked,
        model.total_input_bits(),
        report.mismatches.len(),
        start.elapsed()
    );
    for m in report.mismatches.iter().take(5) {
        println!("  input {:?}: expected {:?}, circuit {:?}", m.input, m.expected, m.circuit);
    }
    anyhow::ensure!(report.passed(), "encoding disagrees with the forward pass");
    Ok(())
}
