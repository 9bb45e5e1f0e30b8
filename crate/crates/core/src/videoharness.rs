//! Synthetic moving-dot videos, velocity features and a small trainer.
//!
//! Each video is a `T`-frame `H x W` binary grid with one active cell. The
//! dot follows one of four motion templates with occasional jitter. Features
//! are per-step centroid displacements scaled by the grid size, giving a
//! `(T-1) x 2` real grid that the classifier consumes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::FixedPointFormat;
use crate::model::{
    float_forward, predict, LayerSpec, ModelError, ModelSpec, Quantization, VideoFeatureSequence,
};

pub const JITTER_PROBABILITY: f64 = 0.1;
pub const NUM_FEATURES: usize = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("degenerate dimensions: {0}")]
    Dimensions(String),
    #[error("training diverged at epoch {epoch} (loss is {loss}); try a smaller learning rate")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Stationary,
    MoveRight,
    MoveUp,
    Jump,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Stationary, Action::MoveRight, Action::MoveUp, Action::Jump];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Stationary => "stationary",
            Action::MoveRight => "move-right",
            Action::MoveUp => "move-up",
            Action::Jump => "jump",
        }
    }

    /// Template displacement `(dx, dy)` for step `step` of `steps`; y grows upwards.
    fn delta(self, step: usize, steps: usize) -> (i64, i64) {
        match self {
            Action::Stationary => (0, 0),
            Action::MoveRight => (1, 0),
            Action::MoveUp => (0, 1),
            Action::Jump => {
                if step < steps.div_ceil(2) {
                    (0, 1)
                } else {
                    (0, -1)
                }
            }
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One video: the dot's position `(x, y)` in every frame, `y` counted from
/// the bottom row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticVideo {
    pub height: usize,
    pub width: usize,
    pub positions: Vec<(usize, usize)>,
    pub label: Action,
}

impl SyntheticVideo {
    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    /// Row-major cells of frame `t`, top row first.
    pub fn grid(&self, t: usize) -> Vec<bool> {
        let (x, y) = self.positions[t];
        let active = (self.height - 1 - y) * self.width + x;
        (0..self.height * self.width).map(|i| i == active).collect()
    }

    /// Alternating run lengths of empty and active cells, starting empty.
    fn frame_rle(&self, t: usize) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for cell in self.grid(t) {
            if cell == current {
                len += 1;
            } else {
                runs.push(len.to_string());
                current = cell;
                len = 1;
            }
        }
        runs.push(len.to_string());
        runs.join(",")
    }

    fn position_from_rle(s: &str, height: usize, width: usize) -> Result<(usize, usize), String> {
        let mut cell = 0usize;
        let mut on = false;
        let mut active = Vec::new();
        for tok in s.split(',') {
            let n: usize = tok.trim().parse().map_err(|_| format!("bad run length '{tok}'"))?;
            if on {
                active.extend(cell..cell + n);
            }
            cell += n;
            on = !on;
        }
        if cell != height * width {
            return Err(format!("frame covers {cell} cells, grid has {}", height * width));
        }
        match active.as_slice() {
            [i] => Ok((i % width, height - 1 - i / width)),
            _ => Err(format!("frame has {} active cells, expected 1", active.len())),
        }
    }
}

/// Per-step displacement `(dx / (W-1), dy / (H-1))`, a `(T-1) x 2` grid.
pub fn extract_features(video: &SyntheticVideo) -> VideoFeatureSequence {
    let sx = (video.width - 1) as f64;
    let sy = (video.height - 1) as f64;
    let values = video
        .positions
        .windows(2)
        .flat_map(|w| {
            let dx = w[1].0 as f64 - w[0].0 as f64;
            let dy = w[1].1 as f64 - w[0].1 as f64;
            [dx / sx, dy / sy]
        })
        .collect();
    VideoFeatureSequence {
        frames: video.frames() - 1,
        features: NUM_FEATURES,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub videos: Vec<SyntheticVideo>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Every fifth video is held out for testing.
    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| i % 5 == 4).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| i % 5 != 4).collect()
    }

    pub fn features(&self, i: usize) -> VideoFeatureSequence {
        extract_features(&self.videos[i])
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            seed: self.seed,
            frames: self.frames,
            height: self.height,
            width: self.width,
            videos: self
                .videos
                .iter()
                .map(|v| VideoFile {
                    label: v.label,
                    frames: (0..v.frames()).map(|t| v.frame_rle(t)).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let file: DatasetFile =
            serde_json::from_str(text).map_err(|e| HarnessError::Dataset(e.to_string()))?;
        let mut videos = Vec::with_capacity(file.videos.len());
        for (i, v) in file.videos.into_iter().enumerate() {
            if v.frames.len() != file.frames {
                return Err(HarnessError::Dataset(format!(
                    "video {i} has {} frames, expected {}",
                    v.frames.len(),
                    file.frames
                )));
            }
            let positions = v
                .frames
                .iter()
                .map(|s| SyntheticVideo::position_from_rle(s, file.height, file.width))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HarnessError::Dataset(format!("video {i}: {e}")))?;
            videos.push(SyntheticVideo {
                height: file.height,
                width: file.width,
                positions,
                label: v.label,
            });
        }
        Ok(Self {
            seed: file.seed,
            frames: file.frames,
            height: file.height,
            width: file.width,
            videos,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    videos: Vec<VideoFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoFile {
    label: Action,
    frames: Vec<String>,
}

fn check_dims(frames: usize, height: usize, width: usize) -> Result<(), HarnessError> {
    if frames < 2 || height < 4 || width < 4 {
        return Err(HarnessError::Dimensions(format!(
            "need at least 2 frames and a 4x4 grid, got {frames} frames of {height}x{width}"
        )));
    }
    Ok(())
}

/// `count` videos with labels assigned round-robin, reproducible from `seed`.
pub fn gen_videos(
    seed: u64,
    count: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Dataset, HarnessError> {
    check_dims(frames, height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = frames - 1;
    let videos = (0..count)
        .map(|i| {
            let label = Action::ALL[i % Action::ALL.len()];
            gen_one(&mut rng, label, steps, height, width)
        })
        .collect();
    Ok(Dataset {
        seed,
        frames,
        height,
        width,
        videos,
    })
}

fn gen_one(rng: &mut ChaCha8Rng, label: Action, steps: usize, height: usize, width: usize) -> SyntheticVideo {
    // Reach of the template, so the start can leave room for it.
    let (mut reach_x, mut reach_y, mut y) = (0i64, 0i64, 0i64);
    for s in 0..steps {
        let (dx, dy) = label.delta(s, steps);
        reach_x += dx;
        y += dy;
        reach_y = reach_y.max(y);
    }
    let start_x = rng.gen_range(0..=(width as i64 - 1 - reach_x).max(0));
    let start_y = rng.gen_range(0..=(height as i64 - 1 - reach_y).max(0));
    let (mut x, mut y) = (start_x, start_y);
    let mut positions = vec![(x as usize, y as usize)];
    for s in 0..steps {
        let (mut dx, mut dy) = label.delta(s, steps);
        if rng.gen_bool(JITTER_PROBABILITY) {
            let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
            if rng.gen_bool(0.5) {
                dx += sign;
            } else {
                dy += sign;
            }
        }
        x = (x + dx).clamp(0, width as i64 - 1);
        y = (y + dy).clamp(0, height as i64 - 1);
        positions.push((x as usize, y as usize));
    }
    SyntheticVideo {
        height,
        width,
        positions,
        label,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelSpec,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Formats used before a model is explicitly quantized.
pub fn default_quantization() -> Quantization {
    Quantization {
        weights: FixedPointFormat::new(8, 5).expect("valid"),
        activations: FixedPointFormat::new(4, 2).expect("valid"),
    }
}

/// Seeded SGD on `Flatten -> Dense -> ReLU -> ... -> Dense` with a
/// one-vs-all squared hinge loss, over the training split.
pub fn train_model(
    data: &Dataset,
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
    quantization: Quantization,
) -> Result<TrainOutcome, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::Dataset("dataset is empty".into()));
    }
    if hidden.contains(&0) {
        return Err(HarnessError::Dimensions("hidden widths must be positive".into()));
    }
    let classes = Action::ALL.len();
    let frames = data.frames - 1;
    let inputs = frames * NUM_FEATURES;
    let mut widths = vec![inputs];
    widths.extend_from_slice(hidden);
    widths.push(classes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<(Vec<f64>, Vec<f64>)> = widths
        .windows(2)
        .map(|w| {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weights = (0..w[0] * w[1]).map(|_| rng.gen_range(-limit..limit)).collect();
            (weights, vec![0.0; w[1]])
        })
        .collect();

    let train = data.train_indices();
    let samples: Vec<(Vec<f64>, usize)> = train
        .iter()
        .map(|&i| (data.features(i).values, data.videos[i].label.index()))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut final_loss = 0.0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &s in &order {
            let (x, label) = &samples[s];
            total += sgd_step(&mut layers, &widths, x, *label, lr);
        }
        final_loss = total / samples.len().max(1) as f64;
        if !final_loss.is_finite() {
            return Err(HarnessError::Diverged { epoch, loss: final_loss });
        }
    }

    let mut spec = vec![LayerSpec::Flatten];
    let last = layers.len() - 1;
    for (li, ((weights, bias), w)) in layers.into_iter().zip(widths.windows(2)).enumerate() {
        spec.push(LayerSpec::Dense {
            inputs: w[0],
            outputs: w[1],
            weights,
            bias,
        });
        if li != last {
            spec.push(LayerSpec::Relu);
        }
    }
    let model = ModelSpec::new(frames, NUM_FEATURES, classes, quantization, spec)?;
    let train_accuracy = float_accuracy(&model, data, &train)?;
    Ok(TrainOutcome {
        model,
        train_accuracy,
        final_loss,
    })
}

/// One sample's forward and backward pass; returns its loss.
fn sgd_step(layers: &mut [(Vec<f64>, Vec<f64>)], widths: &[usize], x: &[f64], label: usize, lr: f64) -> f64 {
    // Forward, keeping every layer's post-activation output.
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    let last = layers.len() - 1;
    for (li, (w, b)) in layers.iter().enumerate() {
        let (n_in, n_out) = (widths[li], widths[li + 1]);
        let prev = &acts[li];
        let mut z: Vec<f64> = (0..n_out)
            .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * prev[i]).sum::<f64>())
            .collect();
        if li != last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    let out = acts.last().expect("output layer");
    let mut loss = 0.0;
    let mut grad: Vec<f64> = out
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let y = if k == label { 1.0 } else { -1.0 };
            let margin = (1.0 - y * z).max(0.0);
            loss += margin * margin;
            -2.0 * y * margin
        })
        .collect();
    for li in (0..layers.len()).rev() {
        let (n_in, n_out) = (widths[li], widths[li + 1]);
        let prev = &acts[li];
        let (w, b) = &mut layers[li];
        let mut back = vec![0.0; n_in];
        for o in 0..n_out {
            let g = grad[o];
            if g == 0.0 {
                continue;
            }
            for i in 0..n_in {
                back[i] += w[o * n_in + i] * g;
                w[o * n_in + i] -= lr * g * prev[i];
            }
            b[o] -= lr * g;
        }
        if li > 0 {
            // Through the ReLU of the previous layer.
            for i in 0..n_in {
                if prev[i] <= 0.0 {
                    back[i] = 0.0;
                }
            }
        }
        grad = back;
    }
    loss
}

/// Float-model accuracy over `indices`.
pub fn float_accuracy(model: &ModelSpec, data: &Dataset, indices: &[usize]) -> Result<f64, ModelError> {
    let mut correct = 0;
    for &i in indices {
        let logits = float_forward(model, &data.features(i))?;
        if crate::model::argmax_lowest(&logits) == data.videos[i].label.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len().max(1) as f64)
}

/// Quantized-model accuracy over `indices`.
pub fn quantized_accuracy(model: &ModelSpec, data: &Dataset, indices: &[usize]) -> Result<f64, ModelError> {
    let mut correct = 0;
    for &i in indices {
        if predict(model, &data.features(i))? == data.videos[i].label.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len().max(1) as f64)
}
