//! Smallest input change that turns a prediction into each other class,
//! counted in changed features and in flipped bits.
//!
//!     cargo run --example whynot_explanation [VIDEO_INDEX]

use satxplain::encoder::{encode_model, Granularity};
use satxplain::explain::{explain_whynot, CxpStatus, Session};
use satxplain::model::{predict_input, ModelSpec};
use satxplain::solver::{BackendKind, SolverConfig};
use satxplain::videoharness::{Action, Dataset};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn main() -> anyhow::Result<()> {
    let index: usize = std::env::args().nth(1).map_or(Ok(4), |s| s.parse())?;
    let model = ModelSpec::load(format!("{FIXTURES}/model.json").as_ref())?;
    let data = Dataset::from_json(&std::fs::read_to_string(format!("{FIXTURES}/videos.json"))?)?;
    let input = model.quantize_input(&data.features(index))?;
    let c = predict_input(&model, &input)?;
    println!("video {index}: input mantissas {:?}, predicted {}", input.mantissas, Action::ALL[c]);

    let enc = encode_model(&model)?;
    let mut session = Session::new(&enc, &BackendKind::Internal, &SolverConfig::default());
    for target in (0..model.num_classes()).filter(|&t| t != c) {
        for granularity in [Granularity::Features, Granularity::Bits] {
            let exp = explain_whynot(&mut session, &input, target, granularity)?;
            match exp.status {
                CxpStatus::Found => println!(
                    "-> {:<11} {:?}: cost {}, becomes {:?} (bounds tried: {})",
                    Action::ALL[target].name(),
                    granularity,
                    exp.cost.unwrap_or(0),
                    exp.modified_input.unwrap_or_default(),
                    exp.descent.len()
                ),
                CxpStatus::UnreachableClass => {
                    println!("-> {:<11} {granularity:?}: no input reaches this class", Action::ALL[target].name())
                }
            }
        }
    }
    println!("{:?}", session.stats());
    Ok(())
}
