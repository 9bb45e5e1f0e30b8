//! The whole pipeline in memory: synthetic videos, training, quantization,
//! then one why and one why-not query on a held-out video.
//!
//!     cargo run --release --example video_pipeline

use satxplain::encoder::{encode_model, Granularity};
use satxplain::explain::{explain_why, explain_whynot, AxpMode, FeatureOrder, Session};
use satxplain::fixedpoint::FixedPointFormat;
use satxplain::model::{predict_input, Quantization};
use satxplain::solver::{BackendKind, SolverConfig};
use satxplain::videoharness::{default_quantization, gen_videos, quantized_accuracy, train_model, Action};

fn main() -> anyhow::Result<()> {
    let data = gen_videos(7, 200, 3, 5, 5)?;
    let first = &data.videos[1];
    println!("video 1 is '{}':", first.label);
    for t in 0..first.frames() {
        let grid = first.grid(t);
        for row in grid.chunks(first.width) {
            println!("  {}", row.iter().map(|&c| if c { '#' } else { '.' }).collect::<String>());
        }
        println!();
    }

    let trained = train_model(&data, &[8], 200, 0.05, 7, default_quantization())?;
    println!("train accuracy {:.3}, loss {:.4}", trained.train_accuracy, trained.final_loss);
    let model = trained.model.with_quantization(Quantization {
        weights: FixedPointFormat::new(8, 5)?,
        activations: FixedPointFormat::new(4, 2)?,
    })?;
    let test = data.test_indices();
    println!("quantized held-out accuracy {:.3}", quantized_accuracy(&model, &data, &test)?);

    let index = test[2];
    let input = model.quantize_input(&data.features(index))?;
    let c = predict_input(&model, &input)?;
    println!("\nvideo {index}: label {}, predicted {}", data.videos[index].label, Action::ALL[c]);

    let enc = encode_model(&model)?;
    let mut session = Session::new(&enc, &BackendKind::Internal, &SolverConfig::default());
    let why = explain_why(&mut session, &input, AxpMode::Entailment, FeatureOrder::Ascending)?;
    println!("why: fixing {:?} guarantees {}", why.features, Action::ALL[c]);
    let target = (c + 1) % model.num_classes();
    let whynot = explain_whynot(&mut session, &input, target, Granularity::Features)?;
    println!(
        "why not {}: change {} feature(s) {:?}",
        Action::ALL[target],
        whynot.cost.unwrap_or(0),
        whynot.flips.iter().map(|f| (f.frame, f.feature)).collect::<Vec<_>>()
    );
    Ok(())
}
