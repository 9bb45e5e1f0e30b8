//! Which input features keep a prediction fixed? Runs the deletion loop on
//! one video of the golden fixture and prints every entailment check.
//!
//!     cargo run --example why_explanation [VIDEO_INDEX]

use satxplain::encoder::encode_model;
use satxplain::explain::{explain_why, AxpMode, FeatureOrder, Session};
use satxplain::model::ModelSpec;
use satxplain::solver::{BackendKind, SolverConfig};
use satxplain::videoharness::{Action, Dataset};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn main() -> anyhow::Result<()> {
    let index: usize = std::env::args().nth(1).map_or(Ok(9), |s| s.parse())?;
    let model = ModelSpec::load(format!("{FIXTURES}/model.json").as_ref())?;
    let data = Dataset::from_json(&std::fs::read_to_string(format!("{FIXTURES}/videos.json"))?)?;
    let video = data.features(index);
    let input = model.quantize_input(&video)?;
    println!("video {index} ({}), features {:?}", data.videos[index].label, video.values);

    let enc = encode_model(&model)?;
    let mut session = Session::new(&enc, &BackendKind::Internal, &SolverConfig::default());
    for mode in [AxpMode::Entailment, AxpMode::PaperLiteral] {
        let exp = explain_why(&mut session, &input, mode, FeatureOrder::Ascending)?;
        let class = Action::from_index(exp.predicted_class).map_or("?", Action::name);
        println!("\n[{mode:?}] predicted {class}");
        for step in &exp.certificate {
            println!(
                "  free (t={}, d={}): {:?} -> {}",
                step.frame,
                step.feature,
                step.verdict,
                if step.freed { "freed" } else { "kept" }
            );
        }
        println!("  explanation: {:?}", exp.features);
    }
    Ok(())
}
