//! Brute-force checkers used to validate the encoder, the solver and the
//! explanation algorithms.
//!
//! Nothing here reuses the code it checks: the forward pass is a separate
//! integer walk over the float parameters, enumeration is plain counting,
//! and the DPLL solver is a textbook recursion. Every enumeration has a hard
//! size limit and refuses to run past it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Assignment, CnfFormula, Lit};
use crate::encoder::{EncodedModel, Granularity};
use crate::model::{quantized_forward_input, LayerSpec, ModelError, ModelSpec, QuantizedInput};
use crate::solver::{CdclSolver, SatBackend, SolveResult, SolverConfig, SolverError};

pub const FIDELITY_MAX_BITS: usize = 20;
pub const CXP_MAX_BITS: usize = 12;
pub const CXP_FEATURES_MAX_BITS: usize = 16;
pub const AXP_MAX_FREE_BITS: usize = 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{what} needs {bits} bits, above the limit of {limit}{hint}")]
    GuardExceeded {
        what: &'static str,
        bits: usize,
        limit: usize,
        hint: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    /// Input bit pattern per feature, frame-major.
    pub input: Vec<u64>,
    pub expected: Vec<i64>,
    /// `None` when the circuit had no model under the input assumptions.
    pub circuit: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub inputs_checked: u64,
    pub exhaustive: bool,
    pub mismatches: Vec<Mismatch>,
}

impl FidelityReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn bits_per_feature(model: &ModelSpec) -> u32 {
    if model.binary_inputs() {
        1
    } else {
        model.quantization().activations.total_bits()
    }
}

/// Round half away from zero, then clamp to the signed `bits`-bit range.
fn to_mantissa(x: f64, bits: u32, frac: u32) -> i128 {
    let scaled = x * (frac as f64).exp2();
    let r = if scaled >= 0.0 {
        (scaled + 0.5).floor()
    } else {
        -((-scaled + 0.5).floor())
    };
    let hi = (1i128 << (bits - 1)) - 1;
    let lo = -(1i128 << (bits - 1));
    (r as i128).clamp(lo, hi)
}

fn clamp_bits(v: i128, bits: u32) -> i128 {
    v.clamp(-(1i128 << (bits - 1)), (1i128 << (bits - 1)) - 1)
}

/// Mantissa of a feature from its input bit pattern.
fn decode_feature(model: &ModelSpec, code: u64) -> i128 {
    let act = model.quantization().activations;
    if model.binary_inputs() {
        if code & 1 == 1 {
            1i128 << act.frac_bits()
        } else {
            0
        }
    } else {
        let n = act.total_bits();
        let raw = (code & ((1u64 << n) - 1)) as i128;
        if raw >= 1i128 << (n - 1) {
            raw - (1i128 << n)
        } else {
            raw
        }
    }
}

/// Integer logits for the input whose feature bit patterns are `codes`.
pub fn reference_logits(model: &ModelSpec, codes: &[u64]) -> Vec<i128> {
    let q = model.quantization();
    let (wb, wf) = (q.weights.total_bits(), q.weights.frac_bits());
    let (ab, af) = (q.activations.total_bits(), q.activations.frac_bits());
    let (pb, pf) = (wb + ab, wf + af);
    let last_linear = model
        .layers()
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::TemporalConv { .. }));
    let mut frames = model.input_frames();
    let mut chans = model.input_features();
    let mut x: Vec<i128> = codes.iter().map(|&c| decode_feature(model, c)).collect();
    // Narrowing from the accumulator back to activations: floor, then clamp.
    let narrow = |v: i128| clamp_bits(v.div_euclid(1i128 << (pf - af)), ab);
    for (li, layer) in model.layers().iter().enumerate() {
        let keep_wide = Some(li) == last_linear;
        match layer {
            LayerSpec::Dense {
                inputs,
                outputs,
                weights,
                bias,
            } => {
                let mut y = Vec::new();
                for o in 0..*outputs {
                    let mut acc = to_mantissa(bias[o], pb, pf);
                    for i in 0..*inputs {
                        acc += to_mantissa(weights[o * inputs + i], wb, wf) * x[i];
                    }
                    y.push(if keep_wide { acc } else { narrow(acc) });
                }
                x = y;
                frames = 1;
                chans = *outputs;
            }
            LayerSpec::TemporalConv {
                kernel_frames,
                inputs,
                outputs,
                weights,
                bias,
            } => {
                let out_frames = frames + 1 - kernel_frames;
                let mut y = vec![0i128; out_frames * outputs];
                for t in 0..out_frames {
                    for o in 0..*outputs {
                        let mut acc = to_mantissa(bias[o], pb, pf);
                        for j in 0..*kernel_frames {
                            for c in 0..*inputs {
                                let w = to_mantissa(weights[j * inputs * outputs + c * outputs + o], wb, wf);
                                acc += w * x[(t + j) * chans + c];
                            }
                        }
                        y[t * outputs + o] = if keep_wide { acc } else { narrow(acc) };
                    }
                }
                x = y;
                frames = out_frames;
                chans = *outputs;
            }
            LayerSpec::Relu => x.iter_mut().for_each(|v| *v = (*v).max(0)),
            LayerSpec::ThresholdStep { threshold } => {
                let t = to_mantissa(*threshold, ab, af);
                let one = to_mantissa(1.0, ab, af);
                x.iter_mut().for_each(|v| *v = if *v >= t { one } else { 0 });
            }
            LayerSpec::Flatten => {
                chans *= frames;
                frames = 1;
            }
        }
    }
    x
}

/// Predicted class, lowest index on ties.
pub fn reference_predict(model: &ModelSpec, codes: &[u64]) -> usize {
    let logits = reference_logits(model, codes);
    let mut best = 0;
    for k in 1..logits.len() {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

/// Feature bit patterns of a quantized input.
pub fn input_codes(model: &ModelSpec, input: &QuantizedInput) -> Vec<u64> {
    input
        .mantissas
        .iter()
        .map(|&m| model.mantissa_to_code(m))
        .collect()
}

fn unpack(packed: u64, features: usize, bits: u32) -> Vec<u64> {
    (0..features)
        .map(|i| packed >> (i as u32 * bits) & ((1u64 << bits) - 1))
        .collect()
}

fn check_one(
    model: &ModelSpec,
    enc: &EncodedModel,
    solver: &mut CdclSolver,
    codes: &[u64],
) -> Result<Option<Mismatch>, OracleError> {
    let input = model.input_from_codes(codes);
    let expected = quantized_forward_input(model, &input)?.mantissas;
    let independent = reference_logits(model, codes);
    let assumptions = enc
        .quantized_input_assumptions(&input)
        .map_err(|e| OracleError::Shape(e.to_string()))?;
    let circuit = match solver.solve(&assumptions)? {
        SolveResult::Sat(a) => enc.decode_outputs(&a),
        _ => None,
    };
    let agrees = circuit.as_ref() == Some(&expected)
        && independent.iter().map(|&v| v as i64).eq(expected.iter().copied());
    Ok((!agrees).then(|| Mismatch {
        input: codes.to_vec(),
        expected,
        circuit,
    }))
}

/// Checks every input bit pattern. `jobs` worker threads split the range;
/// mismatches come back sorted by input.
pub fn exhaustive_fidelity(
    model: &ModelSpec,
    enc: &EncodedModel,
    jobs: usize,
) -> Result<FidelityReport, OracleError> {
    let bits = bits_per_feature(model);
    let features = model.num_input_features();
    let total = features * bits as usize;
    if total > FIDELITY_MAX_BITS {
        return Err(OracleError::GuardExceeded {
            what: "exhaustive fidelity",
            bits: total,
            limit: FIDELITY_MAX_BITS,
            hint: "; use sampled fidelity instead",
        });
    }
    let count = 1u64 << total;
    let jobs = jobs.clamp(1, 64) as u64;
    let chunk = count.div_ceil(jobs);
    let results: Vec<Result<Vec<Mismatch>, OracleError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                s.spawn(move || {
                    let mut solver = CdclSolver::from_formula(enc.formula(), SolverConfig::default());
                    let mut out = Vec::new();
                    for packed in j * chunk..((j + 1) * chunk).min(count) {
                        let codes = unpack(packed, features, bits);
                        if let Some(m) = check_one(model, enc, &mut solver, &codes)? {
                            out.push(m);
                        }
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut mismatches = Vec::new();
    for r in results {
        mismatches.extend(r?);
    }
    mismatches.sort_by(|a, b| a.input.iter().rev().cmp(b.input.iter().rev()));
    Ok(FidelityReport {
        inputs_checked: count,
        exhaustive: true,
        mismatches,
    })
}

/// Checks `n` seeded random inputs.
pub fn sampled_fidelity(
    model: &ModelSpec,
    enc: &EncodedModel,
    n: u64,
    seed: u64,
) -> Result<FidelityReport, OracleError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bits = bits_per_feature(model);
    let mut solver = CdclSolver::from_formula(enc.formula(), SolverConfig::default());
    let mut mismatches = Vec::new();
    for _ in 0..n {
        let codes: Vec<u64> = (0..model.num_input_features())
            .map(|_| rng.gen_range(0..1u64 << bits))
            .collect();
        if let Some(m) = check_one(model, enc, &mut solver, &codes)? {
            mismatches.push(m);
        }
    }
    Ok(FidelityReport {
        inputs_checked: n,
        exhaustive: false,
        mismatches,
    })
}

/// Plain recursive DPLL with unit propagation and no learning.
pub fn dpll_reference(formula: &CnfFormula) -> SolveResult {
    let n = formula.num_vars() as usize;
    let mut values: Vec<Option<bool>> = vec![None; n + 1];
    let clauses: Vec<Vec<i64>> = formula
        .clauses()
        .iter()
        .map(|c| c.iter().map(|l| l.to_dimacs() as i64).collect())
        .collect();
    if dpll(&clauses, &mut values) {
        let model: Vec<bool> = values[1..].iter().map(|v| v.unwrap_or(false)).collect();
        SolveResult::Sat(Assignment::total(model))
    } else {
        SolveResult::Unsat
    }
}

fn lit_value(values: &[Option<bool>], l: i64) -> Option<bool> {
    values[l.unsigned_abs() as usize].map(|v| v == (l > 0))
}

fn dpll(clauses: &[Vec<i64>], values: &mut Vec<Option<bool>>) -> bool {
    let saved = values.clone();
    // Unit propagation to fixpoint.
    loop {
        let mut unit = None;
        let mut all_sat = true;
        for c in clauses {
            let mut unassigned = None;
            let mut free = 0;
            let mut sat = false;
            for &l in c {
                match lit_value(values, l) {
                    Some(true) => {
                        sat = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        free += 1;
                        unassigned = Some(l);
                    }
                }
            }
            if sat {
                continue;
            }
            all_sat = false;
            if free == 0 {
                *values = saved;
                return false;
            }
            if free == 1 && unit.is_none() {
                unit = unassigned;
            }
        }
        if all_sat {
            return true;
        }
        match unit {
            Some(l) => values[l.unsigned_abs() as usize] = Some(l > 0),
            None => break,
        }
    }
    let branch = clauses
        .iter()
        .flatten()
        .find(|&&l| values[l.unsigned_abs() as usize].is_none())
        .map(|l| l.unsigned_abs() as usize)
        .expect("an unsatisfied clause has a free literal");
    for choice in [true, false] {
        values[branch] = Some(choice);
        if dpll(clauses, values) {
            return true;
        }
        values[branch] = None;
    }
    *values = saved;
    false
}

/// Smallest number of changed bits (or features) turning the prediction
/// into `target`; `None` when no input reaches it.
pub fn brute_force_min_cxp(
    model: &ModelSpec,
    input: &QuantizedInput,
    target: usize,
    granularity: Granularity,
) -> Result<Option<usize>, OracleError> {
    let bits = bits_per_feature(model);
    let features = model.num_input_features();
    let total = features * bits as usize;
    let limit = match granularity {
        Granularity::Bits => CXP_MAX_BITS,
        Granularity::Features => CXP_FEATURES_MAX_BITS,
    };
    if total > limit {
        return Err(OracleError::GuardExceeded {
            what: "brute-force counterfactual search",
            bits: total,
            limit,
            hint: "",
        });
    }
    let orig = input_codes(model, input);
    let mut best: Option<usize> = None;
    for packed in 0..1u64 << total {
        let codes = unpack(packed, features, bits);
        let cost = match granularity {
            Granularity::Bits => codes
                .iter()
                .zip(&orig)
                .map(|(a, b)| (a ^ b).count_ones() as usize)
                .sum(),
            Granularity::Features => codes.iter().zip(&orig).filter(|(a, b)| a != b).count(),
        };
        if best.is_some_and(|b| cost >= b) {
            continue;
        }
        if reference_predict(model, &codes) == target {
            best = Some(cost);
        }
    }
    Ok(best)
}

/// True iff fixing the features in `fixed` (indices into the frame-major
/// feature list) to their values in `input` forces prediction `class`.
pub fn brute_force_axp_check(
    model: &ModelSpec,
    input: &QuantizedInput,
    fixed: &[usize],
    class: usize,
) -> Result<bool, OracleError> {
    let bits = bits_per_feature(model) as usize;
    let features = model.num_input_features();
    let free: Vec<usize> = (0..features).filter(|f| !fixed.contains(f)).collect();
    let free_bits = free.len() * bits;
    if free_bits > AXP_MAX_FREE_BITS {
        return Err(OracleError::GuardExceeded {
            what: "brute-force entailment check",
            bits: free_bits,
            limit: AXP_MAX_FREE_BITS,
            hint: "",
        });
    }
    let mut codes = input_codes(model, input);
    for packed in 0..1u64 << free_bits {
        for (k, &f) in free.iter().enumerate() {
            codes[f] = packed >> (k * bits) & ((1u64 << bits) - 1);
        }
        if reference_predict(model, &codes) != class {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Literal-level helper shared by tests: does `a` satisfy every clause?
pub fn satisfies(formula: &CnfFormula, a: &Assignment) -> bool {
    formula
        .clauses()
        .iter()
        .all(|c| c.iter().any(|&l: &Lit| a.value(l) == Some(true)))
}
