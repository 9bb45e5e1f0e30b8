mod common;

use common::*;
use proptest::prelude::*;
use satxplain::encoder::{encode_model, Granularity};
use satxplain::explain::{
    check_axp, explain_why, explain_whynot, render_report, AxpMode, CxpStatus, Explanation, ExplanationReport,
    FeatureOrder, Session,
};
use satxplain::model::{predict_input, quantized_forward_input, QuantizedInput};
use satxplain::oracle::{brute_force_axp_check, brute_force_min_cxp};
use satxplain::solver::{BackendKind, SolverConfig};

fn session_for(model: &satxplain::model::ModelSpec) -> Session {
    let enc = encode_model(model).unwrap();
    Session::new(&enc, &BackendKind::Internal, &SolverConfig::default())
}

fn indices(model: &satxplain::model::ModelSpec, fs: &[(usize, usize)]) -> Vec<usize> {
    fs.iter().map(|&(t, d)| t * model.input_features() + d).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn why_sets_are_sufficient_and_minimal(seed in 0u64..1000, codes in proptest::collection::vec(0u64..4, 4), shuffle in any::<bool>()) {
        let model = tiny_model(seed, 2, 2, fmt(2, 0), 4, 3);
        let input = model.input_from_codes(&codes);
        let c = predict_input(&model, &input).unwrap();
        let order = if shuffle { FeatureOrder::Shuffled { seed } } else { FeatureOrder::Ascending };
        let mut session = session_for(&model);
        let exp = explain_why(&mut session, &input, AxpMode::Entailment, order).unwrap();
        prop_assert_eq!(exp.predicted_class, c);
        let kept = indices(&model, &exp.features);
        prop_assert!(brute_force_axp_check(&model, &input, &kept, c).unwrap());
        for i in 0..kept.len() {
            let mut fewer = kept.clone();
            fewer.remove(i);
            prop_assert!(!brute_force_axp_check(&model, &input, &fewer, c).unwrap());
        }
    }

    #[test]
    fn whynot_cost_is_minimal(seed in 0u64..1000, codes in proptest::collection::vec(0u64..4, 4), bits in any::<bool>()) {
        let model = tiny_model(seed, 2, 2, fmt(2, 0), 4, 3);
        let input = model.input_from_codes(&codes);
        let c = predict_input(&model, &input).unwrap();
        let granularity = if bits { Granularity::Bits } else { Granularity::Features };
        let mut session = session_for(&model);
        for target in (0..3).filter(|&t| t != c) {
            let exp = explain_whynot(&mut session, &input, target, granularity).unwrap();
            let brute = brute_force_min_cxp(&model, &input, target, granularity).unwrap();
            prop_assert_eq!(exp.cost, brute);
            if exp.status == CxpStatus::Found {
                let modified = QuantizedInput {
                    frames: 2,
                    features: 2,
                    mantissas: exp.modified_input.clone().unwrap(),
                };
                prop_assert_eq!(quantized_forward_input(&model, &modified).unwrap().argmax(), target);
                prop_assert_eq!(exp.flips.len(), exp.cost.unwrap());
            }
        }
    }
}

#[test]
fn and_classifier_explanations() {
    let model = and_model();
    let mut session = session_for(&model);
    let both = model.input_from_codes(&[1, 1]);
    let exp = explain_why(&mut session, &both, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
    assert_eq!(exp.predicted_class, 1);
    assert_eq!(exp.features, vec![(0, 0), (0, 1)]);

    // With x1 = x2 = 0, either zero alone forces class 0; deletion in
    // ascending order frees x1 first and keeps x2.
    let neither = model.input_from_codes(&[0, 0]);
    let exp = explain_why(&mut session, &neither, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
    assert_eq!(exp.features, vec![(0, 1)]);

    let literal = explain_why(&mut session, &both, AxpMode::PaperLiteral, FeatureOrder::Ascending).unwrap();
    assert!(literal.features.is_empty());

    let cxp = explain_whynot(&mut session, &neither, 1, Granularity::Features).unwrap();
    assert_eq!(cxp.cost, Some(2));
    let cxp = explain_whynot(&mut session, &model.input_from_codes(&[1, 0]), 1, Granularity::Bits).unwrap();
    assert_eq!(cxp.cost, Some(1));
    assert_eq!(cxp.modified_input, Some(both.mantissas.clone()));
}

#[test]
fn incremental_session_matches_fresh_sessions() {
    let model = golden_model();
    let mut shared = session_for(&model);
    for input in fixture_inputs(&model).into_iter().take(4) {
        let a = explain_why(&mut shared, &input, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
        let b = explain_why(&mut session_for(&model), &input, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
        assert_eq!(a.features, b.features);
        let c = a.predicted_class;
        let t = (c + 1) % model.num_classes();
        let x = explain_whynot(&mut shared, &input, t, Granularity::Features).unwrap();
        let y = explain_whynot(&mut session_for(&model), &input, t, Granularity::Features).unwrap();
        assert_eq!(x.cost, y.cost);
    }
}

#[test]
fn standalone_entailment_check() {
    let model = and_model();
    let enc = encode_model(&model).unwrap();
    let input = model.input_from_codes(&[0, 1]);
    let cfg = SolverConfig::default();
    assert!(check_axp(&enc, &input, &[(0, 0)], 0, &BackendKind::Internal, &cfg).unwrap());
    assert!(!check_axp(&enc, &input, &[(0, 1)], 0, &BackendKind::Internal, &cfg).unwrap());
    assert!(!check_axp(&enc, &input, &[], 0, &BackendKind::Internal, &cfg).unwrap());
}

#[test]
fn whynot_rejects_the_predicted_class() {
    let model = and_model();
    let mut session = session_for(&model);
    let input = model.input_from_codes(&[1, 1]);
    assert!(explain_whynot(&mut session, &input, 1, Granularity::Bits).is_err());
    assert!(explain_whynot(&mut session, &input, 2, Granularity::Bits).is_err());
}

#[test]
fn reports_round_trip_through_json() {
    let model = golden_model();
    let mut session = session_for(&model);
    let input = fixture_inputs(&model).remove(1);
    let c = predict_input(&model, &input).unwrap();
    let why = explain_why(&mut session, &input, AxpMode::Entailment, FeatureOrder::Ascending).unwrap();
    let whynot = explain_whynot(&mut session, &input, (c + 2) % 4, Granularity::Bits).unwrap();
    for exp in [Explanation::Why(why), Explanation::WhyNot(whynot)] {
        let report = render_report(&exp, &model, &session.stats());
        assert_eq!(report.features.len(), model.num_input_features());
        let text = report.to_json();
        assert_eq!(ExplanationReport::from_json(&text).unwrap(), report);
        assert_eq!(report.explanation, exp);
    }
}
