#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satxplain::encoder::Granularity;
use satxplain::fixedpoint::FixedPointFormat;
use satxplain::model::{predict_input, LayerSpec, ModelSpec, QuantizedInput, Quantization};
use satxplain::videoharness::Dataset;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_model() -> ModelSpec {
    ModelSpec::load(&fixture("model.json")).expect("golden model loads")
}

pub fn golden_videos() -> Dataset {
    Dataset::from_json(&std::fs::read_to_string(fixture("videos.json")).unwrap()).unwrap()
}

pub fn fmt(bits: u32, frac: u32) -> FixedPointFormat {
    FixedPointFormat::new(bits, frac).unwrap()
}

/// Distinct quantized inputs of the golden test split, in dataset order.
pub fn fixture_inputs(model: &ModelSpec) -> Vec<QuantizedInput> {
    let data = golden_videos();
    let mut out: Vec<QuantizedInput> = Vec::new();
    for i in data.test_indices() {
        let q = model.quantize_input(&data.features(i)).unwrap();
        if !out.contains(&q) {
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum Query {
    Why,
    WhyNot { target: usize, granularity: Granularity },
}

/// The fixture query suite: every distinct test input asked why, and why
/// not for every other class at both granularities.
pub fn fixture_queries(model: &ModelSpec) -> Vec<(QuantizedInput, Query)> {
    let mut out = Vec::new();
    for input in fixture_inputs(model) {
        let c = predict_input(model, &input).unwrap();
        out.push((input.clone(), Query::Why));
        for target in (0..model.num_classes()).filter(|&t| t != c) {
            for granularity in [Granularity::Features, Granularity::Bits] {
                out.push((input.clone(), Query::WhyNot { target, granularity }));
            }
        }
    }
    out
}

/// Flatten, Dense(F->hidden), ReLU, Dense(hidden->classes) with seeded
/// weights in [-2, 2].
pub fn tiny_model(seed: u64, frames: usize, features: usize, act: FixedPointFormat, hidden: usize, classes: usize) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = frames * features;
    let mut w = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let layers = vec![
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: n,
            outputs: hidden,
            weights: w(n * hidden),
            bias: w(hidden),
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: classes,
            weights: w(hidden * classes),
            bias: w(classes),
        },
    ];
    ModelSpec::new(
        frames,
        features,
        classes,
        Quantization {
            weights: fmt(4, 2),
            activations: act,
        },
        layers,
    )
    .unwrap()
}

/// Every input of a model, as quantized inputs.
pub fn all_inputs(model: &ModelSpec) -> Vec<QuantizedInput> {
    let bits = model.input_bits_per_feature();
    let n = model.num_input_features();
    (0..1u64 << model.total_input_bits())
        .map(|packed| {
            let codes: Vec<u64> = (0..n).map(|i| packed >> (i as u32 * bits) & ((1 << bits) - 1)).collect();
            model.input_from_codes(&codes)
        })
        .collect()
}

/// Seeded sample of `count` inputs.
pub fn sample_inputs(model: &ModelSpec, count: usize, seed: u64) -> Vec<QuantizedInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = model.input_bits_per_feature();
    (0..count)
        .map(|_| {
            let codes: Vec<u64> = (0..model.num_input_features())
                .map(|_| rng.gen_range(0..1u64 << bits))
                .collect();
            model.input_from_codes(&codes)
        })
        .collect()
}

/// The single threshold neuron: y = [x1 + x2 >= 2] over binary inputs.
pub fn threshold_neuron() -> ModelSpec {
    ModelSpec::new_binary(
        1,
        2,
        1,
        Quantization {
            weights: fmt(4, 0),
            activations: fmt(4, 0),
        },
        vec![
            LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![1.0, 1.0],
                bias: vec![0.0],
            },
            LayerSpec::ThresholdStep { threshold: 2.0 },
        ],
    )
    .unwrap()
}

/// Two-class AND classifier: class 1 iff both binary inputs are set.
pub fn and_model() -> ModelSpec {
    ModelSpec::new_binary(
        1,
        2,
        2,
        Quantization {
            weights: fmt(4, 0),
            activations: fmt(4, 0),
        },
        vec![
            LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![1.0, 1.0],
                bias: vec![0.0],
            },
            LayerSpec::ThresholdStep { threshold: 2.0 },
            LayerSpec::Dense {
                inputs: 1,
                outputs: 2,
                weights: vec![-1.0, 1.0],
                bias: vec![0.0, 0.0],
            },
        ],
    )
    .unwrap()
}

pub fn binary_path() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_satxplain"))
}
