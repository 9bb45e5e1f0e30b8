//! The video classifier: layer stack, model file format and forward passes.
//!
//! Tensors are `(frames, channels)` grids stored frame-major. `Dense`
//! consumes a flat tensor (`frames == 1`); `Flatten` reshapes `(T, D)` to
//! `(1, T*D)`; `TemporalConv` slides a `k`-frame kernel with stride 1 and no
//! padding.
//!
//! [`quantized_forward`] is the reference integer semantics that the CNF
//! encoding reproduces bit for bit: every product and sum is exact, biases
//! are quantized straight into the product format, and each linear layer
//! except the last is narrowed back to the activation format with
//! [`requantize`]. The last linear layer keeps its accumulator format so the
//! logits are exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{
    product_format, quantize, requantize, sum_format, widened_mul, widened_sum, FixedPointError,
    FixedPointFormat, QuantizedValue,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `weights` is `outputs x inputs`, row-major.
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    /// 1 when the input is at least `threshold`, else 0.
    ThresholdStep { threshold: f64 },
    /// `weights` is `kernel_frames x inputs x outputs`, row-major.
    TemporalConv {
        kernel_frames: usize,
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::ThresholdStep { .. } => "threshold_step",
            LayerSpec::TemporalConv { .. } => "temporal_conv",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::TemporalConv { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantization {
    pub weights: FixedPointFormat,
    pub activations: FixedPointFormat,
}

/// Tensor shape: `frames x channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.frames * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input_frames: usize,
    input_features: usize,
    num_classes: usize,
    /// Each input feature is a single bit with value 0 or 1.
    binary_inputs: bool,
    quantization: Quantization,
    layers: Vec<LayerSpec>,
}

/// A `T x D` grid of real-valued features, frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFeatureSequence {
    pub frames: usize,
    pub features: usize,
    #[serde(with = "decimal::vec")]
    pub values: Vec<f64>,
}

impl VideoFeatureSequence {
    pub fn new(frames: usize, features: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != frames * features {
            return Err(ModelError::Shape(format!(
                "feature grid {frames}x{features} needs {} values, got {}",
                frames * features,
                values.len()
            )));
        }
        Ok(Self {
            frames,
            features,
            values,
        })
    }

    pub fn zeros(frames: usize, features: usize) -> Self {
        Self {
            frames,
            features,
            values: vec![0.0; frames * features],
        }
    }

    pub fn get(&self, frame: usize, feature: usize) -> f64 {
        self.values[frame * self.features + feature]
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let seq: Self = read_json(path)?;
        Self::new(seq.frames, seq.features, seq.values)
    }
}

/// Input features as activation-format mantissas, frame-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedInput {
    pub frames: usize,
    pub features: usize,
    pub mantissas: Vec<i64>,
}

impl QuantizedInput {
    pub fn get(&self, frame: usize, feature: usize) -> i64 {
        self.mantissas[frame * self.features + feature]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLogits {
    pub format: FixedPointFormat,
    pub mantissas: Vec<i64>,
}

impl QuantizedLogits {
    pub fn to_f64(&self) -> Vec<f64> {
        self.mantissas
            .iter()
            .map(|&m| m as f64 * self.format.ulp())
            .collect()
    }

    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.mantissas)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest<T: PartialOrd>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A layer with its constants already quantized.
#[derive(Debug, Clone)]
pub(crate) enum PlanStep {
    Linear(LinearPlan),
    Relu,
    Threshold { threshold: i64, one: i64 },
    Flatten,
}

#[derive(Debug, Clone)]
pub(crate) struct LinearPlan {
    pub layer: usize,
    pub out_shape: Shape,
    /// Per output element (frame-major): `(input element, weight index)`.
    pub terms: Vec<Vec<(usize, usize)>>,
    /// Per output element: index into `bias`.
    pub bias_index: Vec<usize>,
    pub weights: Vec<QuantizedValue>,
    pub bias: Vec<QuantizedValue>,
    pub product_format: FixedPointFormat,
    pub acc_format: FixedPointFormat,
    /// Narrow to the activation format afterwards (all but the last layer).
    pub requantize: bool,
}

impl ModelSpec {
    pub fn new(
        input_frames: usize,
        input_features: usize,
        num_classes: usize,
        quantization: Quantization,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, ModelError> {
        let m = Self {
            input_frames,
            input_features,
            num_classes,
            binary_inputs: false,
            quantization,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    /// Same as [`ModelSpec::new`] but every input feature is one bit.
    pub fn new_binary(
        input_frames: usize,
        input_features: usize,
        num_classes: usize,
        quantization: Quantization,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, ModelError> {
        let m = Self {
            input_frames,
            input_features,
            num_classes,
            binary_inputs: true,
            quantization,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_frames(&self) -> usize {
        self.input_frames
    }

    pub fn input_features(&self) -> usize {
        self.input_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn binary_inputs(&self) -> bool {
        self.binary_inputs
    }

    pub fn quantization(&self) -> Quantization {
        self.quantization
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// A copy with different formats.
    pub fn with_quantization(&self, quantization: Quantization) -> Result<Self, ModelError> {
        let m = Self {
            quantization,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            frames: self.input_frames,
            channels: self.input_features,
        }
    }

    pub fn num_input_features(&self) -> usize {
        self.input_frames * self.input_features
    }

    pub fn input_bits_per_feature(&self) -> u32 {
        if self.binary_inputs {
            1
        } else {
            self.quantization.activations.total_bits()
        }
    }

    pub fn total_input_bits(&self) -> usize {
        self.num_input_features() * self.input_bits_per_feature() as usize
    }

    /// Activation-format mantissa of the feature whose input bits read `code`
    /// (LSB first).
    pub fn code_to_mantissa(&self, code: u64) -> i64 {
        if self.binary_inputs {
            self.binary_one() * (code & 1) as i64
        } else {
            let n = self.quantization.activations.total_bits();
            let shift = 64 - n;
            ((code << shift) as i64) >> shift
        }
    }

    /// Input bit pattern of an activation-format mantissa.
    pub fn mantissa_to_code(&self, mantissa: i64) -> u64 {
        if self.binary_inputs {
            u64::from(mantissa != 0)
        } else {
            let n = self.quantization.activations.total_bits();
            (mantissa as u64) & ((1u64 << n) - 1)
        }
    }

    fn binary_one(&self) -> i64 {
        1i64 << self.quantization.activations.frac_bits()
    }

    pub fn quantize_input(&self, video: &VideoFeatureSequence) -> Result<QuantizedInput, ModelError> {
        self.check_input(video)?;
        let act = self.quantization.activations;
        let mantissas = video
            .values
            .iter()
            .map(|&v| {
                if self.binary_inputs {
                    if !v.is_finite() {
                        return Err(FixedPointError::NonFinite(v).into());
                    }
                    Ok(if v >= 0.5 { self.binary_one() } else { 0 })
                } else {
                    Ok(quantize(v, act)?.mantissa())
                }
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(QuantizedInput {
            frames: video.frames,
            features: video.features,
            mantissas,
        })
    }

    pub fn dequantize_input(&self, input: &QuantizedInput) -> VideoFeatureSequence {
        let ulp = self.quantization.activations.ulp();
        VideoFeatureSequence {
            frames: input.frames,
            features: input.features,
            values: input.mantissas.iter().map(|&m| m as f64 * ulp).collect(),
        }
    }

    /// Builds the input whose bits are `codes` (one code per feature).
    pub fn input_from_codes(&self, codes: &[u64]) -> QuantizedInput {
        QuantizedInput {
            frames: self.input_frames,
            features: self.input_features,
            mantissas: codes.iter().map(|&c| self.code_to_mantissa(c)).collect(),
        }
    }

    fn check_input(&self, video: &VideoFeatureSequence) -> Result<(), ModelError> {
        if video.frames != self.input_frames || video.features != self.input_features {
            return Err(ModelError::Shape(format!(
                "model expects {}x{} features, got {}x{}",
                self.input_frames, self.input_features, video.frames, video.features
            )));
        }
        if video.values.len() != video.frames * video.features {
            return Err(ModelError::Shape("feature grid has the wrong number of values".into()));
        }
        Ok(())
    }

    /// Output shape of every layer, checking shapes along the way.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut shape = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    if weights.len() != inputs * outputs {
                        return Err(ModelError::Schema(format!(
                            "weights length mismatch, layer {i}: expected {}, found {}",
                            inputs * outputs,
                            weights.len()
                        )));
                    }
                    if bias.len() != *outputs {
                        return Err(ModelError::Schema(format!(
                            "bias length mismatch, layer {i}: expected {outputs}, found {}",
                            bias.len()
                        )));
                    }
                    if shape.frames != 1 {
                        return Err(ModelError::Shape(format!(
                            "dense layer {i} needs a flat input, got {} frames (add a flatten layer)",
                            shape.frames
                        )));
                    }
                    if shape.channels != *inputs {
                        return Err(ModelError::Shape(format!(
                            "input width mismatch, layer {i}: layer takes {inputs}, previous layer gives {}",
                            shape.channels
                        )));
                    }
                    Shape {
                        frames: 1,
                        channels: *outputs,
                    }
                }
                LayerSpec::TemporalConv {
                    kernel_frames,
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    if *kernel_frames == 0 {
                        return Err(ModelError::Schema(format!("kernel_frames must be >= 1, layer {i}")));
                    }
                    if weights.len() != kernel_frames * inputs * outputs {
                        return Err(ModelError::Schema(format!(
                            "weights length mismatch, layer {i}: expected {}, found {}",
                            kernel_frames * inputs * outputs,
                            weights.len()
                        )));
                    }
                    if bias.len() != *outputs {
                        return Err(ModelError::Schema(format!(
                            "bias length mismatch, layer {i}: expected {outputs}, found {}",
                            bias.len()
                        )));
                    }
                    if shape.channels != *inputs {
                        return Err(ModelError::Shape(format!(
                            "input width mismatch, layer {i}: layer takes {inputs}, previous layer gives {}",
                            shape.channels
                        )));
                    }
                    if shape.frames < *kernel_frames {
                        return Err(ModelError::Shape(format!(
                            "temporal kernel of {kernel_frames} frames exceeds {} input frames, layer {i}",
                            shape.frames
                        )));
                    }
                    Shape {
                        frames: shape.frames - kernel_frames + 1,
                        channels: *outputs,
                    }
                }
                LayerSpec::Flatten => Shape {
                    frames: 1,
                    channels: shape.len(),
                },
                LayerSpec::Relu | LayerSpec::ThresholdStep { .. } => shape,
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape, ModelError> {
        Ok(self.shapes()?.last().copied().unwrap_or(self.input_shape()))
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input_frames == 0 || self.input_features == 0 {
            return Err(ModelError::Schema("input_frames and input_features must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(ModelError::Schema("num_classes must be >= 1".into()));
        }
        if self.binary_inputs {
            let act = self.quantization.activations;
            if act.frac_bits() + 2 > act.total_bits() {
                return Err(ModelError::Schema(format!(
                    "binary inputs need 1.0 representable in the activation format {act}"
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let finite = match layer {
                LayerSpec::Dense { weights, bias, .. }
                | LayerSpec::TemporalConv { weights, bias, .. } => {
                    weights.iter().chain(bias).all(|x| x.is_finite())
                }
                LayerSpec::ThresholdStep { threshold } => threshold.is_finite(),
                _ => true,
            };
            if !finite {
                return Err(ModelError::Schema(format!("non-finite parameter, layer {i}")));
            }
        }
        let out = self.output_shape()?;
        if out.frames != 1 || out.channels != self.num_classes {
            return Err(ModelError::Shape(format!(
                "final layer produces {}x{} values, expected 1x{} class logits",
                out.frames, out.channels, self.num_classes
            )));
        }
        self.plan()?;
        Ok(())
    }

    /// Index of the last linear layer, which keeps its accumulator format.
    fn last_linear(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::is_linear)
    }

    pub(crate) fn plan(&self) -> Result<Vec<PlanStep>, ModelError> {
        let shapes = self.shapes()?;
        let q = self.quantization;
        let last_linear = self.last_linear();
        let mut in_shape = self.input_shape();
        let mut steps = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape = shapes[i];
            let step = match layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    let terms = (0..*outputs)
                        .map(|j| (0..*inputs).map(|k| (k, j * inputs + k)).collect())
                        .collect();
                    let bias_index = (0..*outputs).collect();
                    PlanStep::Linear(self.linear_plan(i, in_shape, out_shape, terms, bias_index, weights, bias, last_linear)?)
                }
                LayerSpec::TemporalConv {
                    kernel_frames,
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    let mut terms = Vec::with_capacity(out_shape.len());
                    let mut bias_index = Vec::with_capacity(out_shape.len());
                    for t in 0..out_shape.frames {
                        for o in 0..*outputs {
                            let mut row = Vec::with_capacity(kernel_frames * inputs);
                            for j in 0..*kernel_frames {
                                for c in 0..*inputs {
                                    row.push(((t + j) * inputs + c, (j * inputs + c) * outputs + o));
                                }
                            }
                            terms.push(row);
                            bias_index.push(o);
                        }
                    }
                    PlanStep::Linear(self.linear_plan(i, in_shape, out_shape, terms, bias_index, weights, bias, last_linear)?)
                }
                LayerSpec::Relu => PlanStep::Relu,
                LayerSpec::ThresholdStep { threshold } => PlanStep::Threshold {
                    threshold: quantize(*threshold, q.activations)?.mantissa(),
                    one: quantize(1.0, q.activations)?.mantissa(),
                },
                LayerSpec::Flatten => PlanStep::Flatten,
            };
            steps.push(step);
            in_shape = out_shape;
        }
        Ok(steps)
    }

    #[allow(clippy::too_many_arguments)]
    fn linear_plan(
        &self,
        layer: usize,
        in_shape: Shape,
        out_shape: Shape,
        terms: Vec<Vec<(usize, usize)>>,
        bias_index: Vec<usize>,
        weights: &[f64],
        bias: &[f64],
        last_linear: Option<usize>,
    ) -> Result<LinearPlan, ModelError> {
        let q = self.quantization;
        let pf = product_format(q.weights, q.activations)?;
        let fan_in = terms.first().map_or(0, Vec::len);
        let acc_format = sum_format(pf, fan_in + 1)?;
        debug_assert!(terms
            .iter()
            .flatten()
            .all(|&(x, _)| x < in_shape.len()));
        Ok(LinearPlan {
            layer,
            out_shape,
            terms,
            bias_index,
            weights: weights
                .iter()
                .map(|&w| quantize(w, q.weights))
                .collect::<Result<_, _>>()?,
            bias: bias
                .iter()
                .map(|&b| quantize(b, pf))
                .collect::<Result<_, _>>()?,
            product_format: pf,
            acc_format,
            requantize: Some(layer) != last_linear,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_json(path, &file::ModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&file::ModelFile::from(self)).expect("model serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: file::ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        raw.try_into()
    }
}

/// Standard real-valued forward pass.
pub fn float_forward(model: &ModelSpec, video: &VideoFeatureSequence) -> Result<Vec<f64>, ModelError> {
    model.check_input(video)?;
    let mut x = video.values.clone();
    let mut shape = model.input_shape();
    for (layer, out_shape) in model.layers.iter().zip(model.shapes()?) {
        x = match layer {
            LayerSpec::Dense {
                inputs,
                outputs,
                weights,
                bias,
            } => (0..*outputs)
                .map(|j| {
                    (0..*inputs).map(|k| weights[j * inputs + k] * x[k]).sum::<f64>() + bias[j]
                })
                .collect(),
            LayerSpec::TemporalConv {
                kernel_frames,
                inputs,
                outputs,
                weights,
                bias,
            } => {
                let mut y = Vec::with_capacity(out_shape.len());
                for t in 0..out_shape.frames {
                    for o in 0..*outputs {
                        let mut acc = bias[o];
                        for j in 0..*kernel_frames {
                            for c in 0..*inputs {
                                acc += weights[(j * inputs + c) * outputs + o] * x[(t + j) * shape.channels + c];
                            }
                        }
                        y.push(acc);
                    }
                }
                y
            }
            LayerSpec::Relu => x.into_iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::ThresholdStep { threshold } => x
                .into_iter()
                .map(|v| if v >= *threshold { 1.0 } else { 0.0 })
                .collect(),
            LayerSpec::Flatten => x,
        };
        shape = out_shape;
    }
    Ok(x)
}

/// Bit-exact integer forward pass over quantized inputs.
pub fn quantized_forward_input(
    model: &ModelSpec,
    input: &QuantizedInput,
) -> Result<QuantizedLogits, ModelError> {
    if input.frames != model.input_frames || input.features != model.input_features {
        return Err(ModelError::Shape(format!(
            "model expects {}x{} features, got {}x{}",
            model.input_frames, model.input_features, input.frames, input.features
        )));
    }
    let act = model.quantization.activations;
    let mut format = act;
    let mut x: Vec<i64> = input.mantissas.clone();
    for step in model.plan()? {
        match step {
            PlanStep::Linear(p) => {
                debug_assert_eq!(format, act);
                let mut y = Vec::with_capacity(p.out_shape.len());
                for (row, &b) in p.terms.iter().zip(&p.bias_index) {
                    let mut terms = Vec::with_capacity(row.len() + 1);
                    for &(xi, wi) in row {
                        let xv = QuantizedValue::from_mantissa(act, x[xi]).expect("activation in range");
                        terms.push(widened_mul(p.weights[wi], xv)?);
                    }
                    terms.push(p.bias[b]);
                    let acc = widened_sum(&terms, p.product_format)?;
                    assert_eq!(acc.format(), p.acc_format, "accumulator width drifted");
                    let out = if p.requantize {
                        requantize(acc, act)
                    } else {
                        acc
                    };
                    y.push(out.mantissa());
                }
                format = if p.requantize { act } else { p.acc_format };
                x = y;
            }
            PlanStep::Relu => x.iter_mut().for_each(|v| *v = (*v).max(0)),
            PlanStep::Threshold { threshold, one } => {
                x.iter_mut().for_each(|v| *v = if *v >= threshold { one } else { 0 })
            }
            PlanStep::Flatten => {}
        }
    }
    Ok(QuantizedLogits {
        format,
        mantissas: x,
    })
}

pub fn quantized_forward(
    model: &ModelSpec,
    video: &VideoFeatureSequence,
) -> Result<QuantizedLogits, ModelError> {
    quantized_forward_input(model, &model.quantize_input(video)?)
}

/// Argmax of the quantized logits, lowest index on ties.
pub fn predict(model: &ModelSpec, video: &VideoFeatureSequence) -> Result<usize, ModelError> {
    Ok(quantized_forward(model, video)?.argmax())
}

pub fn predict_input(model: &ModelSpec, input: &QuantizedInput) -> Result<usize, ModelError> {
    Ok(quantized_forward_input(model, input)?.argmax())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelError> {
    let text = serde_json::to_string_pretty(value).expect("value serialises") + "\n";
    std::fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ModelError::Schema(format!("{}: {e}", path.display())))
}

/// Reals travel as decimal strings so files do not depend on float printing.
pub(crate) mod decimal {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn to_string(x: f64) -> String {
        format!("{x}")
    }

    pub fn parse(s: &str) -> Result<f64, String> {
        let x: f64 = s.trim().parse().map_err(|_| format!("invalid decimal '{s}'"))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("non-finite decimal '{s}'"))
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_string(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(&String::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                seq.serialize_element(&to_string(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| parse(s).map_err(D::Error::custom))
                .collect()
        }
    }
}

mod file {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct ModelFile {
        input_frames: usize,
        input_features: usize,
        num_classes: usize,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        binary_inputs: bool,
        quantization: Quantization,
        layers: Vec<LayerFile>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
    enum LayerFile {
        Dense {
            inputs: usize,
            outputs: usize,
            #[serde(with = "decimal::vec")]
            weights: Vec<f64>,
            #[serde(with = "decimal::vec")]
            bias: Vec<f64>,
        },
        Relu,
        ThresholdStep {
            #[serde(with = "decimal")]
            threshold: f64,
        },
        TemporalConv {
            kernel_frames: usize,
            inputs: usize,
            outputs: usize,
            #[serde(with = "decimal::vec")]
            weights: Vec<f64>,
            #[serde(with = "decimal::vec")]
            bias: Vec<f64>,
        },
        Flatten,
    }

    impl From<&ModelSpec> for ModelFile {
        fn from(m: &ModelSpec) -> Self {
            let layers = m
                .layers
                .iter()
                .map(|l| match l.clone() {
                    LayerSpec::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    } => LayerFile::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    },
                    LayerSpec::Relu => LayerFile::Relu,
                    LayerSpec::ThresholdStep { threshold } => LayerFile::ThresholdStep { threshold },
                    LayerSpec::TemporalConv {
                        kernel_frames,
                        inputs,
                        outputs,
                        weights,
                        bias,
                    } => LayerFile::TemporalConv {
                        kernel_frames,
                        inputs,
                        outputs,
                        weights,
                        bias,
                    },
                    LayerSpec::Flatten => LayerFile::Flatten,
                })
                .collect();
            ModelFile {
                input_frames: m.input_frames,
                input_features: m.input_features,
                num_classes: m.num_classes,
                binary_inputs: m.binary_inputs,
                quantization: m.quantization,
                layers,
            }
        }
    }

    impl TryFrom<ModelFile> for ModelSpec {
        type Error = ModelError;
        fn try_from(f: ModelFile) -> Result<Self, ModelError> {
            let layers = f
                .layers
                .into_iter()
                .map(|l| match l {
                    LayerFile::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    } => LayerSpec::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    },
                    LayerFile::Relu => LayerSpec::Relu,
                    LayerFile::ThresholdStep { threshold } => LayerSpec::ThresholdStep { threshold },
                    LayerFile::TemporalConv {
                        kernel_frames,
                        inputs,
                        outputs,
                        weights,
                        bias,
                    } => LayerSpec::TemporalConv {
                        kernel_frames,
                        inputs,
                        outputs,
                        weights,
                        bias,
                    },
                    LayerFile::Flatten => LayerSpec::Flatten,
                })
                .collect();
            let m = ModelSpec {
                input_frames: f.input_frames,
                input_features: f.input_features,
                num_classes: f.num_classes,
                binary_inputs: f.binary_inputs,
                quantization: f.quantization,
                layers,
            };
            m.validate()?;
            Ok(m)
        }
    }
}
