//! "Why?" and "Why not?" explanations on top of an [`EncodedModel`].
//!
//! [`explain_why`] shrinks the set of fixed input features one feature at a
//! time. In [`AxpMode::Entailment`] a feature stays free when the remaining
//! fixed features still force the prediction (the solver finds no input with
//! a different class). [`AxpMode::PaperLiteral`] instead frees a feature
//! whenever the remaining features are *consistent* with the prediction,
//! which the original input always witnesses, so it frees everything. It is
//! kept to document that behaviour.
//!
//! [`explain_whynot`] finds a minimum-cost change that makes the model
//! predict another class: one solve for any counterfactual, then linear
//! descent on a guarded cardinality bound until the bound is unsatisfiable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::Lit;
use crate::encoder::{EncodeError, EncodedModel, Granularity};
use crate::model::{predict_input, ModelError, ModelSpec, QuantizedInput};
use crate::solver::{BackendKind, SatBackend, SolveResult, SolverConfig, SolverError, SolverStats, Verdict};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("solver gave up (conflict budget exhausted) during {0}")]
    BudgetExhausted(&'static str),
    #[error("counterfactual failed re-verification: {0}")]
    Verification(String),
}

/// An input cell `(frame, feature)`.
pub type Feature = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxpMode {
    /// Free a feature iff the rest still forces the prediction.
    #[default]
    Entailment,
    /// Free a feature iff the rest is consistent with the prediction.
    PaperLiteral,
}

impl std::str::FromStr for AxpMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entailment" => Ok(AxpMode::Entailment),
            "paper-literal" => Ok(AxpMode::PaperLiteral),
            _ => Err(format!("unknown mode '{s}' (expected entailment or paper-literal)")),
        }
    }
}

/// Order in which features are tentatively freed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "order")]
pub enum FeatureOrder {
    #[default]
    Ascending,
    Shuffled { seed: u64 },
}

impl FeatureOrder {
    pub fn arrange(&self, frames: usize, features: usize) -> Vec<Feature> {
        let mut all: Vec<Feature> = (0..frames)
            .flat_map(|t| (0..features).map(move |d| (t, d)))
            .collect();
        if let FeatureOrder::Shuffled { seed } = self {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            all.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(*seed));
        }
        all
    }
}

/// One step of the deletion loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeCheck {
    pub frame: usize,
    pub feature: usize,
    pub verdict: Verdict,
    pub freed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbductiveExplanation {
    pub mode: AxpMode,
    pub order: FeatureOrder,
    pub predicted_class: usize,
    /// Input mantissas, frame-major.
    pub input: Vec<i64>,
    /// The features that stay fixed, ascending.
    pub features: Vec<Feature>,
    pub certificate: Vec<FreeCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CxpStatus {
    Found,
    /// No input at all makes the model predict the target class.
    UnreachableClass,
}

/// A changed bit, or a changed feature when `bit` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub frame: usize,
    pub feature: usize,
    pub bit: Option<u32>,
}

/// One solve of the descent: `bound` is `None` for the unbounded first call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bound: Option<usize>,
    pub verdict: Verdict,
    /// Cost of the solution found, when Sat.
    pub cost: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveExplanation {
    pub status: CxpStatus,
    pub granularity: Granularity,
    pub original_class: usize,
    pub target_class: usize,
    pub input: Vec<i64>,
    pub cost: Option<usize>,
    pub flips: Vec<Flip>,
    pub modified_input: Option<Vec<i64>>,
    pub descent: Vec<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Explanation {
    Why(AbductiveExplanation),
    WhyNot(ContrastiveExplanation),
}

/// An encoded model plus one incremental solver kept in sync with it.
pub struct Session {
    enc: EncodedModel,
    solver: Box<dyn SatBackend + Send>,
    synced: usize,
    synced_vars: u32,
}

impl Session {
    pub fn new(enc: &EncodedModel, backend: &BackendKind, config: &SolverConfig) -> Self {
        let solver = backend.instantiate(enc.formula(), config);
        Self {
            synced: enc.formula().num_clauses(),
            synced_vars: enc.formula().num_vars(),
            enc: enc.clone(),
            solver,
        }
    }

    pub fn encoded(&self) -> &EncodedModel {
        &self.enc
    }

    pub fn encoded_mut(&mut self) -> &mut EncodedModel {
        &mut self.enc
    }

    /// Pushes clauses added to the encoding since the last call.
    fn sync(&mut self) -> Result<(), SolverError> {
        let f = self.enc.formula();
        if f.num_vars() > self.synced_vars {
            self.solver.ensure_vars(f.num_vars());
            self.synced_vars = f.num_vars();
        }
        for c in &f.clauses()[self.synced..] {
            self.solver.add_clause(c)?;
        }
        self.synced = f.num_clauses();
        Ok(())
    }

    pub fn solve(&mut self, assumptions: &[Lit]) -> Result<SolveResult, SolverError> {
        self.sync()?;
        self.solver.solve(assumptions)
    }

    pub fn stats(&self) -> SolverStats {
        self.solver.stats()
    }

    fn fixed_assumptions(&self, input: &QuantizedInput, fixed: &[Feature]) -> Vec<Lit> {
        let d = self.enc.model().input_features();
        fixed
            .iter()
            .flat_map(|&(t, f)| self.enc.feature_assumptions(t * d + f, input.get(t, f)))
            .collect()
    }

    /// True iff fixing `features` to their values in `input` makes the
    /// guarded `output is not c` constraint `not_c` unsatisfiable.
    pub fn check_axp(
        &mut self,
        input: &QuantizedInput,
        features: &[Feature],
        not_c: Lit,
    ) -> Result<bool, ExplainError> {
        let mut a = self.fixed_assumptions(input, features);
        a.push(not_c);
        match self.solve(&a)? {
            SolveResult::Unsat => Ok(true),
            SolveResult::Sat(_) => Ok(false),
            SolveResult::BudgetExhausted => Err(ExplainError::BudgetExhausted("entailment check")),
        }
    }
}

fn check_input(model: &ModelSpec, input: &QuantizedInput) -> Result<(), ExplainError> {
    if input.frames != model.input_frames() || input.features != model.input_features() {
        return Err(ExplainError::InvalidQuery(format!(
            "model expects {}x{} features, got {}x{}",
            model.input_frames(),
            model.input_features(),
            input.frames,
            input.features
        )));
    }
    Ok(())
}

/// Subset-minimal set of fixed features that keeps the prediction.
pub fn explain_why(
    session: &mut Session,
    input: &QuantizedInput,
    mode: AxpMode,
    order: FeatureOrder,
) -> Result<AbductiveExplanation, ExplainError> {
    let model = session.encoded().model().clone();
    check_input(&model, input)?;
    let c = predict_input(&model, input)?;
    let guard = match mode {
        AxpMode::Entailment => session.encoded_mut().constrain_output_not(c)?,
        AxpMode::PaperLiteral => session.encoded_mut().constrain_output_is(c)?,
    };
    let sequence = order.arrange(model.input_frames(), model.input_features());
    let mut fixed: Vec<Feature> = sequence.clone();
    fixed.sort();
    let mut certificate = Vec::with_capacity(sequence.len());
    for &f in &sequence {
        let rest: Vec<Feature> = fixed.iter().copied().filter(|&g| g != f).collect();
        let mut a = session.fixed_assumptions(input, &rest);
        a.push(guard);
        let verdict = session.solve(&a)?.verdict();
        let freed = match (mode, verdict) {
            (_, Verdict::Unknown) => return Err(ExplainError::BudgetExhausted("feature deletion")),
            (AxpMode::Entailment, v) => v == Verdict::Unsat,
            (AxpMode::PaperLiteral, v) => v == Verdict::Sat,
        };
        if freed {
            fixed = rest;
        }
        certificate.push(FreeCheck {
            frame: f.0,
            feature: f.1,
            verdict,
            freed,
        });
    }
    Ok(AbductiveExplanation {
        mode,
        order,
        predicted_class: c,
        input: input.mantissas.clone(),
        features: fixed,
        certificate,
    })
}

/// Minimum-cost change of `input` that makes the model predict `target`.
pub fn explain_whynot(
    session: &mut Session,
    input: &QuantizedInput,
    target: usize,
    granularity: Granularity,
) -> Result<ContrastiveExplanation, ExplainError> {
    let model = session.encoded().model().clone();
    check_input(&model, input)?;
    let c1 = predict_input(&model, input)?;
    if target >= model.num_classes() {
        return Err(EncodeError::ClassOutOfRange {
            class: target,
            num_classes: model.num_classes(),
        }
        .into());
    }
    if target == c1 {
        return Err(ExplainError::InvalidQuery(format!(
            "the model already predicts class {target} for this input"
        )));
    }
    let flips = session.encoded_mut().flip_variables(input, granularity)?;
    let is_target = session.encoded_mut().constrain_output_is(target)?;
    let mut descent = Vec::new();
    let mut best = match session.solve(&[is_target])? {
        SolveResult::Sat(m) => m,
        SolveResult::Unsat => {
            descent.push(BoundCheck {
                bound: None,
                verdict: Verdict::Unsat,
                cost: None,
            });
            return Ok(ContrastiveExplanation {
                status: CxpStatus::UnreachableClass,
                granularity,
                original_class: c1,
                target_class: target,
                input: input.mantissas.clone(),
                cost: None,
                flips: Vec::new(),
                modified_input: None,
                descent,
            });
        }
        SolveResult::BudgetExhausted => return Err(ExplainError::BudgetExhausted("counterfactual search")),
    };
    let mut cost = flips.count_in(&best);
    descent.push(BoundCheck {
        bound: None,
        verdict: Verdict::Sat,
        cost: Some(cost),
    });
    while cost > 0 {
        let bound = cost - 1;
        let g = session.encoded_mut().cardinality_at_most(&flips, bound);
        match session.solve(&[is_target, g])? {
            SolveResult::Sat(m) => {
                let k = flips.count_in(&m);
                debug_assert!(k <= bound);
                descent.push(BoundCheck {
                    bound: Some(bound),
                    verdict: Verdict::Sat,
                    cost: Some(k),
                });
                best = m;
                cost = k;
            }
            SolveResult::Unsat => {
                descent.push(BoundCheck {
                    bound: Some(bound),
                    verdict: Verdict::Unsat,
                    cost: None,
                });
                break;
            }
            SolveResult::BudgetExhausted => return Err(ExplainError::BudgetExhausted("cost descent")),
        }
    }
    let modified = session.encoded().decode_input(&best);
    let got = predict_input(&model, &modified)?;
    if got != target {
        return Err(ExplainError::Verification(format!(
            "modified input predicts class {got}, not {target}"
        )));
    }
    let flipped: Vec<Flip> = flips
        .indicators
        .iter()
        .zip(&flips.keys)
        .filter(|(l, _)| best.value(**l) == Some(true))
        .map(|(_, &(frame, feature, bit))| Flip { frame, feature, bit })
        .collect();
    Ok(ContrastiveExplanation {
        status: CxpStatus::Found,
        granularity,
        original_class: c1,
        target_class: target,
        input: input.mantissas.clone(),
        cost: Some(cost),
        flips: flipped,
        modified_input: Some(modified.mantissas),
        descent,
    })
}

/// Standalone entailment test on a fresh solver.
pub fn check_axp(
    enc: &EncodedModel,
    input: &QuantizedInput,
    features: &[Feature],
    c: usize,
    backend: &BackendKind,
    config: &SolverConfig,
) -> Result<bool, ExplainError> {
    let mut session = Session::new(enc, backend, config);
    let not_c = session.encoded_mut().constrain_output_not(c)?;
    session.check_axp(input, features, not_c)
}

/// Per-feature line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVerdict {
    pub frame: usize,
    pub feature: usize,
    pub value: f64,
    /// `kept` / `freed` for "why", `flipped` / `unchanged` for "why not".
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub query: String,
    pub status: String,
    pub summary: String,
    pub features: Vec<FeatureVerdict>,
    pub certificate: String,
    pub solver_stats: SolverStats,
    pub explanation: Explanation,
}

impl ExplanationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Human- and machine-readable rendering of an explanation.
pub fn render_report(exp: &Explanation, model: &ModelSpec, stats: &SolverStats) -> ExplanationReport {
    let d = model.input_features();
    let ulp = model.quantization().activations.ulp();
    let value = |m: i64| m as f64 * ulp;
    match exp {
        Explanation::Why(a) => {
            let features = a
                .input
                .iter()
                .enumerate()
                .map(|(i, &m)| FeatureVerdict {
                    frame: i / d,
                    feature: i % d,
                    value: value(m),
                    verdict: if a.features.contains(&(i / d, i % d)) { "kept" } else { "freed" }.into(),
                    new_value: None,
                })
                .collect();
            let checks = a.certificate.len();
            let mode = match a.mode {
                AxpMode::Entailment => "entailment",
                AxpMode::PaperLiteral => "paper-literal",
            };
            ExplanationReport {
                query: format!("why class {}? (mode {mode})", a.predicted_class),
                status: "found".into(),
                summary: format!(
                    "{} of {} features are needed to keep class {}",
                    a.features.len(),
                    a.input.len(),
                    a.predicted_class
                ),
                features,
                certificate: format!(
                    "{checks} checks; freed {}, kept {}",
                    a.certificate.iter().filter(|c| c.freed).count(),
                    a.certificate.iter().filter(|c| !c.freed).count()
                ),
                solver_stats: stats.clone(),
                explanation: exp.clone(),
            }
        }
        Explanation::WhyNot(c) => {
            let features = c
                .input
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let new = c.modified_input.as_ref().map(|v| v[i]);
                    let changed = new.is_some_and(|n| n != m);
                    FeatureVerdict {
                        frame: i / d,
                        feature: i % d,
                        value: value(m),
                        verdict: if changed { "flipped" } else { "unchanged" }.into(),
                        new_value: new.filter(|_| changed).map(value),
                    }
                })
                .collect();
            let (status, summary) = match c.status {
                CxpStatus::Found => (
                    "found",
                    format!(
                        "changing {} {} turns class {} into class {}",
                        c.cost.unwrap_or(0),
                        match c.granularity {
                            Granularity::Bits => "bit(s)",
                            Granularity::Features => "feature(s)",
                        },
                        c.original_class,
                        c.target_class
                    ),
                ),
                CxpStatus::UnreachableClass => (
                    "unreachable-class",
                    format!("no input makes the model predict class {}", c.target_class),
                ),
            };
            let certificate = match c.descent.last() {
                Some(BoundCheck {
                    bound: Some(b),
                    verdict: Verdict::Unsat,
                    ..
                }) => format!("no change of cost <= {b} exists ({} solves)", c.descent.len()),
                _ => format!("{} solves", c.descent.len()),
            };
            ExplanationReport {
                query: format!("why not class {} instead of {}?", c.target_class, c.original_class),
                status: status.into(),
                summary,
                features,
                certificate,
                solver_stats: stats.clone(),
                explanation: exp.clone(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode_model;
    use crate::fixedpoint::FixedPointFormat;
    use crate::model::{LayerSpec, Quantization};

    fn and_model() -> ModelSpec {
        let f = FixedPointFormat::new(4, 0).unwrap();
        ModelSpec::new_binary(
            1,
            2,
            2,
            Quantization {
                weights: f,
                activations: f,
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

    fn session(m: &ModelSpec) -> Session {
        Session::new(&encode_model(m).unwrap(), &BackendKind::Internal, &SolverConfig::default())
    }

    #[test]
    fn and_model_why() {
        let m = and_model();
        let x11 = m.input_from_codes(&[1, 1]);
        let e = explain_why(&mut session(&m), &x11, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
        assert_eq!(e.predicted_class, 1);
        assert_eq!(e.features, vec![(0, 0), (0, 1)]);
        let x00 = m.input_from_codes(&[0, 0]);
        let e = explain_why(&mut session(&m), &x00, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
        assert_eq!(e.features, vec![(0, 1)]);
        // Freeing x1 first leaves x2 = 0 fixed, which already forces class 0.
        assert!(e.certificate[0].freed);
        for x in [&x11, &x00] {
            let e = explain_why(&mut session(&m), x, AxpMode::PaperLiteral, FeatureOrder::Ascending).unwrap();
            assert!(e.features.is_empty());
        }
    }

    #[test]
    fn and_model_whynot() {
        let m = and_model();
        let x11 = m.input_from_codes(&[1, 1]);
        let e = explain_whynot(&mut session(&m), &x11, 0, Granularity::Bits).unwrap();
        assert_eq!(e.status, CxpStatus::Found);
        assert_eq!(e.cost, Some(1));
        assert_eq!(e.flips.len(), 1);
        assert_eq!(e.descent.last().unwrap().verdict, Verdict::Unsat);
        let err = explain_whynot(&mut session(&m), &x11, 1, Granularity::Bits).unwrap_err();
        assert!(matches!(err, ExplainError::InvalidQuery(_)));
        let x00 = m.input_from_codes(&[0, 0]);
        let e = explain_whynot(&mut session(&m), &x00, 1, Granularity::Features).unwrap();
        assert_eq!(e.cost, Some(2));
        assert_eq!(e.modified_input, Some(vec![1, 1]));
    }

    #[test]
    fn unreachable_class_is_reported() {
        let f = FixedPointFormat::new(4, 0).unwrap();
        // Class 1's logit is constant -1; class 0's is never below 0.
        let m = ModelSpec::new_binary(
            1,
            1,
            2,
            Quantization {
                weights: f,
                activations: f,
            },
            vec![LayerSpec::Dense {
                inputs: 1,
                outputs: 2,
                weights: vec![1.0, 0.0],
                bias: vec![0.0, -1.0],
            }],
        )
        .unwrap();
        let x = m.input_from_codes(&[0]);
        let e = explain_whynot(&mut session(&m), &x, 1, Granularity::Bits).unwrap();
        assert_eq!(e.status, CxpStatus::UnreachableClass);
        let r = render_report(&Explanation::WhyNot(e), &m, &SolverStats::default());
        assert_eq!(r.status, "unreachable-class");
    }

    #[test]
    fn check_axp_edges_and_report_round_trip() {
        let m = and_model();
        let enc = encode_model(&m).unwrap();
        let x = m.input_from_codes(&[1, 1]);
        let be = BackendKind::Internal;
        let cfg = SolverConfig::default();
        assert!(check_axp(&enc, &x, &[(0, 0), (0, 1)], 1, &be, &cfg).unwrap());
        assert!(!check_axp(&enc, &x, &[], 1, &be, &cfg).unwrap());
        assert!(!check_axp(&enc, &x, &[(0, 0)], 1, &be, &cfg).unwrap());

        let mut s = session(&m);
        let e = explain_why(&mut s, &x, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
        let r = render_report(&Explanation::Why(e.clone()), &m, &s.stats());
        assert!(r.features.iter().all(|f| f.verdict == "kept"));
        let back = ExplanationReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back.explanation, Explanation::Why(e));
        assert_eq!(back, r);
    }

    #[test]
    fn shuffled_order_is_a_permutation() {
        let o = FeatureOrder::Shuffled { seed: 3 }.arrange(3, 2);
        let mut s = o.clone();
        s.sort();
        assert_eq!(s, FeatureOrder::Ascending.arrange(3, 2));
        assert_eq!(o, FeatureOrder::Shuffled { seed: 3 }.arrange(3, 2));
    }
}
