//! Compiles a quantized model into CNF and adds switchable query constraints.
//!
//! The circuit mirrors [`crate::model::quantized_forward`] step by step:
//! constant-weight products at the product width, a ripple-carry sum of the
//! products and the bias at the accumulator width, and the same requantize
//! points. Input bits are free variables; a concrete input is imposed only
//! through [`EncodedModel::input_assumptions`].
//!
//! Query constraints (`output is c`, `output is not c`, cardinality bounds)
//! are guarded by fresh activation literals. A guarded group is enforced only
//! while its literal is assumed, so one encoding serves many solver calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{CircuitBuilder, Signal};
use crate::cnf::{Assignment, ConstantKind, CnfFormula, FoldedConstant, Lit, VarMap, VarRole};
use crate::fixedpoint::FixedPointFormat;
use crate::model::{ModelError, ModelSpec, PlanStep, QuantizedInput, VideoFeatureSequence};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("class {class} out of range (model has {num_classes} classes)")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Whether flips are counted per input bit or per feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Bits,
    #[default]
    Features,
}

impl std::str::FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bits" => Ok(Granularity::Bits),
            "features" => Ok(Granularity::Features),
            _ => Err(format!("unknown granularity '{s}' (expected bits or features)")),
        }
    }
}

/// One change indicator per input bit or per feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipSet {
    pub granularity: Granularity,
    /// Indicator literals, frame-major, then by bit.
    pub indicators: Vec<Lit>,
    /// `(frame, feature, bit)` for each indicator; `bit` is `None` per feature.
    pub keys: Vec<(usize, usize, Option<u32>)>,
}

impl FlipSet {
    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    /// Number of indicators true under `a`.
    pub fn count_in(&self, a: &Assignment) -> usize {
        self.indicators
            .iter()
            .filter(|&&l| a.value(l) == Some(true))
            .count()
    }
}

/// The model as a circuit: formula, variable roles and the logit signals.
#[derive(Debug, Clone)]
pub struct EncodedModel {
    model: ModelSpec,
    builder: CircuitBuilder,
    /// Free input bits per feature, frame-major, LSB first.
    input_bits: Vec<Vec<Lit>>,
    outputs: Vec<Signal>,
    output_format: FixedPointFormat,
    comparisons: BTreeMap<(usize, usize, bool), Lit>,
}

/// Builds the circuit for `model`.
pub fn encode_model(model: &ModelSpec) -> Result<EncodedModel, EncodeError> {
    let plan = model.plan()?;
    let act = model.quantization().activations;
    let n = act.total_bits();
    let mut b = CircuitBuilder::new();

    let mut input_bits = Vec::with_capacity(model.num_input_features());
    let mut x: Vec<Signal> = Vec::with_capacity(model.num_input_features());
    for t in 0..model.input_frames() {
        for d in 0..model.input_features() {
            let role = |bit| VarRole::InputFeatureBit {
                frame: t as u32,
                feature: d as u32,
                bit,
            };
            if model.binary_inputs() {
                let v = b.new_var(role(0)).pos();
                input_bits.push(vec![v]);
                let f = act.frac_bits();
                x.push(Signal::new(
                    (0..n).map(|i| if i == f { v } else { Lit::FALSE }).collect(),
                ));
            } else {
                let s = b.input_signal(n, role);
                input_bits.push(s.bits().to_vec());
                x.push(s);
            }
        }
    }

    let last = plan.len().saturating_sub(1);
    let mut format = act;
    for (li, step) in plan.iter().enumerate() {
        match step {
            PlanStep::Linear(p) => {
                let pw = p.product_format.total_bits();
                let aw = p.acc_format.total_bits();
                record_constants(b.varmap_mut(), p.layer, p);
                let mut y = Vec::with_capacity(p.terms.len());
                for (row, &bi) in p.terms.iter().zip(&p.bias_index) {
                    let mut terms: Vec<Signal> = row
                        .iter()
                        .map(|&(xi, wi)| b.mul_const(&x[xi], p.weights[wi].mantissa(), pw))
                        .collect();
                    terms.push(Signal::constant(p.bias[bi].mantissa(), pw));
                    let acc = b.sum(&terms, aw);
                    y.push(if p.requantize {
                        b.requantize(&acc, p.acc_format.frac_bits(), act)
                    } else {
                        acc
                    });
                }
                format = if p.requantize { act } else { p.acc_format };
                x = y;
            }
            PlanStep::Relu => x = x.iter().map(|s| b.relu(s)).collect(),
            PlanStep::Threshold { threshold, one } => {
                x = x.iter().map(|s| b.threshold(s, *threshold, *one, n)).collect();
                format = act;
            }
            PlanStep::Flatten => {}
        }
        if li != last {
            for (unit, s) in x.iter().enumerate() {
                b.tag(s.bits(), |bit| VarRole::ActivationBit {
                    layer: li as u32,
                    unit: unit as u32,
                    bit,
                });
            }
        }
    }
    for (class, s) in x.iter().enumerate() {
        b.tag(s.bits(), |bit| VarRole::OutputLogitBit {
            class: class as u32,
            bit,
        });
    }
    let roots: Vec<Lit> = x.iter().flat_map(|s| s.bits().iter().copied()).collect();
    let removed = b.sweep(&roots);
    log::debug!(
        "encoded model: {} vars, {} clauses ({removed} dead gate clauses removed)",
        b.formula().num_vars(),
        b.formula().num_clauses()
    );
    Ok(EncodedModel {
        model: model.clone(),
        builder: b,
        input_bits,
        outputs: x,
        output_format: format,
        comparisons: BTreeMap::new(),
    })
}

fn record_constants(varmap: &mut VarMap, layer: usize, p: &crate::model::LinearPlan) {
    for (kind, values) in [(ConstantKind::Weight, &p.weights), (ConstantKind::Bias, &p.bias)] {
        for (i, v) in values.iter().enumerate() {
            varmap.constants.push(FoldedConstant {
                layer: layer as u32,
                kind,
                index: i as u32,
                mantissa: v.mantissa(),
                bits: v.format().total_bits(),
                frac: v.format().frac_bits(),
            });
        }
    }
}

impl EncodedModel {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn formula(&self) -> &CnfFormula {
        self.builder.formula()
    }

    pub fn varmap(&self) -> &VarMap {
        self.builder.varmap()
    }

    /// Logit signals, one per class.
    pub fn outputs(&self) -> &[Signal] {
        &self.outputs
    }

    pub fn output_format(&self) -> FixedPointFormat {
        self.output_format
    }

    pub fn num_features(&self) -> usize {
        self.input_bits.len()
    }

    /// Free bits of feature `(frame, feature)`, LSB first.
    pub fn feature_bits(&self, frame: usize, feature: usize) -> &[Lit] {
        &self.input_bits[frame * self.model.input_features() + feature]
    }

    /// All input bits, frame-major.
    pub fn all_input_bits(&self) -> Vec<Lit> {
        self.input_bits.iter().flatten().copied().collect()
    }

    fn check_input(&self, frames: usize, features: usize) -> Result<(), EncodeError> {
        if frames != self.model.input_frames() || features != self.model.input_features() {
            return Err(EncodeError::Shape(format!(
                "model expects {}x{} features, got {frames}x{features}",
                self.model.input_frames(),
                self.model.input_features()
            )));
        }
        Ok(())
    }

    /// Assumptions fixing every input bit to `video`'s quantized value.
    pub fn input_assumptions(&self, video: &VideoFeatureSequence) -> Result<Vec<Lit>, EncodeError> {
        self.check_input(video.frames, video.features)?;
        let q = self.model.quantize_input(video)?;
        self.quantized_input_assumptions(&q)
    }

    pub fn quantized_input_assumptions(&self, input: &QuantizedInput) -> Result<Vec<Lit>, EncodeError> {
        self.check_input(input.frames, input.features)?;
        let mut out = Vec::new();
        for (i, &m) in input.mantissas.iter().enumerate() {
            out.extend(self.feature_assumptions(i, m));
        }
        Ok(out)
    }

    /// Assumptions fixing the bits of feature number `index` (frame-major)
    /// to mantissa `m`.
    pub fn feature_assumptions(&self, index: usize, m: i64) -> Vec<Lit> {
        let code = self.model.mantissa_to_code(m);
        self.input_bits[index]
            .iter()
            .enumerate()
            .map(|(bit, &l)| l ^ (code >> bit & 1 == 0))
            .collect()
    }

    /// Reads the input back out of a model of the formula.
    pub fn decode_input(&self, a: &Assignment) -> QuantizedInput {
        let mantissas = self
            .input_bits
            .iter()
            .map(|bits| {
                let code = bits
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &l)| acc | (u64::from(a.value(l) == Some(true)) << i));
                self.model.code_to_mantissa(code)
            })
            .collect();
        QuantizedInput {
            frames: self.model.input_frames(),
            features: self.model.input_features(),
            mantissas,
        }
    }

    /// Logit mantissas under a total model.
    pub fn decode_outputs(&self, a: &Assignment) -> Option<Vec<i64>> {
        self.outputs.iter().map(|s| s.value_in(a)).collect()
    }

    fn check_class(&self, class: usize) -> Result<(), EncodeError> {
        let num_classes = self.model.num_classes();
        if class >= num_classes {
            return Err(EncodeError::ClassOutOfRange { class, num_classes });
        }
        Ok(())
    }

    /// Literal for `logit[a] > logit[b]` (strict) or `>=`; shared per pair.
    fn compare(&mut self, a: usize, b: usize, strict: bool) -> Lit {
        if let Some(&l) = self.comparisons.get(&(a, b, strict)) {
            return l;
        }
        let (sa, sb) = (self.outputs[a].clone(), self.outputs[b].clone());
        let l = if strict {
            self.builder.gt(&sa, &sb)
        } else {
            self.builder.ge(&sa, &sb)
        };
        self.comparisons.insert((a, b, strict), l);
        l
    }

    fn guard(&mut self) -> Lit {
        self.builder.new_var(VarRole::QueryGuard).pos()
    }

    /// Guarded constraint: the prediction is `class`. Lower-index classes
    /// must be strictly beaten, higher ones matched or beaten.
    pub fn constrain_output_is(&mut self, class: usize) -> Result<Lit, EncodeError> {
        self.check_class(class)?;
        let g = self.guard();
        for k in 0..self.model.num_classes() {
            if k == class {
                continue;
            }
            let wins = self.compare(class, k, k < class);
            self.builder.clause(&[!g, wins]);
        }
        Ok(g)
    }

    /// Guarded constraint: the prediction is anything but `class`.
    pub fn constrain_output_not(&mut self, class: usize) -> Result<Lit, EncodeError> {
        self.check_class(class)?;
        let g = self.guard();
        if self.model.num_classes() == 1 {
            log::warn!("single-class model: 'output is not {class}' can never hold");
        }
        let mut clause = vec![!g];
        for k in 0..self.model.num_classes() {
            if k == class {
                continue;
            }
            // k is predicted over `class` when it ties from below or wins from above.
            let beats = self.compare(k, class, k > class);
            clause.push(beats);
        }
        self.builder.clause(&clause);
        Ok(g)
    }

    /// Indicators of where the input differs from `original`.
    pub fn flip_variables(
        &mut self,
        original: &QuantizedInput,
        granularity: Granularity,
    ) -> Result<FlipSet, EncodeError> {
        self.check_input(original.frames, original.features)?;
        let features = self.model.input_features();
        let mut set = FlipSet {
            granularity,
            indicators: Vec::new(),
            keys: Vec::new(),
        };
        for (i, &m) in original.mantissas.iter().enumerate() {
            let (t, d) = (i / features, i % features);
            // `x ^ original_bit` is true exactly when the bit changed.
            let changed: Vec<Lit> = self
                .feature_assumptions(i, m)
                .into_iter()
                .map(|same| !same)
                .collect();
            match granularity {
                Granularity::Bits => {
                    for (bit, &c) in changed.iter().enumerate() {
                        let f = self
                            .builder
                            .new_var(VarRole::FlipIndicator {
                                frame: t as u32,
                                feature: d as u32,
                                bit: Some(bit as u32),
                            })
                            .pos();
                        self.builder.clause(&[!f, c]);
                        self.builder.clause(&[f, !c]);
                        set.indicators.push(f);
                        set.keys.push((t, d, Some(bit as u32)));
                    }
                }
                Granularity::Features => {
                    let f = self
                        .builder
                        .new_var(VarRole::FlipIndicator {
                            frame: t as u32,
                            feature: d as u32,
                            bit: None,
                        })
                        .pos();
                    let mut any = vec![!f];
                    for &c in &changed {
                        self.builder.clause(&[f, !c]);
                        any.push(c);
                    }
                    self.builder.clause(&any);
                    set.indicators.push(f);
                    set.keys.push((t, d, None));
                }
            }
        }
        Ok(set)
    }

    /// Guarded sequential counter: at most `k` indicators of `set` are true.
    pub fn cardinality_at_most(&mut self, set: &FlipSet, k: usize) -> Lit {
        at_most_k(&mut self.builder, &set.indicators, k)
    }
}

/// Sequential counter. Register `s[i][j]` is forced true once `j + 1` of
/// `xs[0..=i]` are true; only the overflow clauses carry the guard, the
/// register clauses are harmless when it is off.
pub(crate) fn at_most_k(b: &mut CircuitBuilder, xs: &[Lit], k: usize) -> Lit {
    let g = b.new_var(VarRole::QueryGuard).pos();
    let n = xs.len();
    if k >= n {
        return g;
    }
    if k == 0 {
        for &x in xs {
            b.clause(&[!g, !x]);
        }
        return g;
    }
    let mut prev: Vec<Lit> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            // Overflow: x_i true while k were already counted.
            b.clause(&[!g, !x, !prev[k - 1]]);
        }
        if i + 1 == n {
            break;
        }
        let cur: Vec<Lit> = (0..k).map(|_| b.new_var(VarRole::CardinalityAux).pos()).collect();
        b.clause(&[!x, cur[0]]);
        for j in 0..k {
            if i > 0 {
                b.clause(&[!prev[j], cur[j]]);
                if j > 0 {
                    b.clause(&[!x, !prev[j - 1], cur[j]]);
                }
            }
        }
        prev = cur;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{quantized_forward_input, LayerSpec, Quantization};
    use crate::solver::{CdclSolver, SatBackend, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fmt(bits: u32, frac: u32) -> FixedPointFormat {
        FixedPointFormat::new(bits, frac).unwrap()
    }

    fn threshold_neuron() -> ModelSpec {
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

    fn random_model(rng: &mut ChaCha8Rng, classes: usize) -> ModelSpec {
        let d = 3;
        let h = 3;
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        ModelSpec::new(
            1,
            d,
            classes,
            Quantization {
                weights: fmt(5, 2),
                activations: fmt(3, 1),
            },
            vec![
                LayerSpec::Dense {
                    inputs: d,
                    outputs: h,
                    weights: r(d * h),
                    bias: r(h),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: h,
                    outputs: classes,
                    weights: r(h * classes),
                    bias: r(classes),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn threshold_neuron_is_exactly_an_and_gate() {
        let enc = encode_model(&threshold_neuron()).unwrap();
        let f = enc.formula();
        assert_eq!(f.num_clauses(), 3, "{:?}", f.clauses());
        let x1 = enc.feature_bits(0, 0)[0];
        let x2 = enc.feature_bits(0, 1)[0];
        let y = enc.outputs()[0].bits()[0];
        assert!(enc.outputs()[0].bits()[1..].iter().all(|&b| b == Lit::FALSE));
        let mut want = vec![vec![!x1, !x2, y], vec![x1, !y], vec![x2, !y]];
        let mut got: Vec<Vec<Lit>> = f.clauses().to_vec();
        for c in want.iter_mut().chain(got.iter_mut()) {
            c.sort();
        }
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn zero_weights_give_constant_outputs() {
        let m = ModelSpec::new(
            1,
            2,
            2,
            Quantization {
                weights: fmt(4, 2),
                activations: fmt(4, 2),
            },
            vec![LayerSpec::Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![0.0; 4],
                bias: vec![0.0; 2],
            }],
        )
        .unwrap();
        let enc = encode_model(&m).unwrap();
        assert!(enc.outputs().iter().all(Signal::is_constant));
        assert_eq!(enc.formula().num_clauses(), 0);
    }

    #[test]
    fn input_assumption_polarity() {
        let m = random_model(&mut ChaCha8Rng::seed_from_u64(1), 2);
        let enc = encode_model(&m).unwrap();
        let zero = VideoFeatureSequence::zeros(1, 3);
        assert!(enc.input_assumptions(&zero).unwrap().iter().all(|l| !l.is_positive()));
        // 0.5 in 3.1 is mantissa 1: bits 100 (LSB first).
        let v = VideoFeatureSequence::new(1, 3, vec![0.5, 0.0, 0.0]).unwrap();
        let a = enc.input_assumptions(&v).unwrap();
        let pol: Vec<bool> = a[..3].iter().map(|l| l.is_positive()).collect();
        assert_eq!(pol, vec![true, false, false]);
        assert!(enc.input_assumptions(&VideoFeatureSequence::zeros(2, 3)).is_err());
    }

    #[test]
    fn circuit_matches_forward_and_prediction_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for classes in [1, 2, 3] {
            let m = random_model(&mut rng, classes);
            let mut enc = encode_model(&m).unwrap();
            let is: Vec<Lit> = (0..classes).map(|c| enc.constrain_output_is(c).unwrap()).collect();
            let not: Vec<Lit> = (0..classes).map(|c| enc.constrain_output_not(c).unwrap()).collect();
            let mut s = CdclSolver::from_formula(enc.formula(), SolverConfig::default());
            for code in 0u64..1 << 9 {
                let codes: Vec<u64> = (0..3).map(|i| code >> (3 * i) & 7).collect();
                let input = m.input_from_codes(&codes);
                let want = quantized_forward_input(&m, &input).unwrap();
                let assume = enc.quantized_input_assumptions(&input).unwrap();
                let model = s.solve(&assume).unwrap().into_model().unwrap();
                assert_eq!(enc.decode_outputs(&model).unwrap(), want.mantissas);
                assert_eq!(enc.decode_input(&model), input);
                let pred = want.argmax();
                for c in 0..classes {
                    let mut a = assume.clone();
                    a.push(is[c]);
                    assert_eq!(s.solve(&a).unwrap().is_sat(), c == pred, "is {c}, pred {pred}");
                    a.pop();
                    a.push(not[c]);
                    assert_eq!(s.solve(&a).unwrap().is_sat(), c != pred, "not {c}, pred {pred}");
                }
            }
        }
    }

    #[test]
    fn flips_track_hamming_distance() {
        let m = random_model(&mut ChaCha8Rng::seed_from_u64(2), 2);
        let mut enc = encode_model(&m).unwrap();
        let orig = m.input_from_codes(&[5, 0, 3]);
        let bits = enc.flip_variables(&orig, Granularity::Bits).unwrap();
        let feats = enc.flip_variables(&orig, Granularity::Features).unwrap();
        assert_eq!(bits.len(), 9);
        assert_eq!(feats.len(), 3);
        let mut s = CdclSolver::from_formula(enc.formula(), SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let codes: Vec<u64> = (0..3).map(|_| rng.gen_range(0..8)).collect();
            let input = m.input_from_codes(&codes);
            let a = s
                .solve(&enc.quantized_input_assumptions(&input).unwrap())
                .unwrap()
                .into_model()
                .unwrap();
            let ham: u32 = codes.iter().zip([5u64, 0, 3]).map(|(a, b)| (a ^ b).count_ones()).sum();
            let changed = codes.iter().zip([5u64, 0, 3]).filter(|(a, b)| *a != b).count();
            assert_eq!(bits.count_in(&a), ham as usize);
            assert_eq!(feats.count_in(&a), changed);
        }
    }

    #[test]
    fn sequential_counter_exhaustive_six() {
        for k in 0..=6 {
            let mut b = CircuitBuilder::new();
            let xs: Vec<Lit> = (0..6).map(|_| b.new_var(VarRole::TseitinAux).pos()).collect();
            let g = at_most_k(&mut b, &xs, k);
            let mut s = CdclSolver::from_formula(b.formula(), SolverConfig::default());
            for code in 0u32..64 {
                let mut a: Vec<Lit> = (0..6).map(|i| xs[i] ^ (code >> i & 1 == 0)).collect();
                assert!(s.solve(&a).unwrap().is_sat(), "unguarded must impose nothing");
                a.push(g);
                let sat = s.solve(&a).unwrap().is_sat();
                assert_eq!(sat, code.count_ones() as usize <= k, "k={k} code={code:06b}");
            }
        }
    }
}
