mod common;

use std::f64::consts::SQRT_2;

use causalwit::process_space::{
    default_psi, ocb_decomposition, random_ordered_process, switch_process, trace_out_charlie, w_ocb, w_ocb_noisy,
    white_noise, Party, PartyLayout, ProcessMatrix,
};
use causalwit::tensor_ops::{c, min_eigenvalue, CMat, LabeledOperator};
use causalwit::witness_engine::{
    born_table, decompose_witness_ocb, estimate_from_probabilities, generalized_robustness, random_robustness,
    resample_table, s_ocb, separable_decomposition, standard_error, verify_witness, witness_expectation,
    witness_from_json, ProbabilityTable, SdpOptions, Separability, WitnessError, WitnessJson, SEPARABLE_BELOW,
    WITNESS_TOL,
};
use common::{max_diff, q, random_valid_process, rng};
use proptest::prelude::*;
use rand::Rng;

// Frozen output of tools/rg_ocb_oracle.py (SCS, eps 1e-10).
const RG_OCB: f64 = 0.17157287525340498;

fn opts() -> SdpOptions {
    SdpOptions::default()
}

fn bipartite_op(m: CMat) -> LabeledOperator {
    LabeledOperator::new(PartyLayout::bipartite_qubits().systems(), m).unwrap()
}

fn separable_mixture<R: Rng>(layout: &PartyLayout, p: f64, rng: &mut R) -> ProcessMatrix {
    let a = random_ordered_process(layout, &[0, 1], rng).unwrap();
    let b = random_ordered_process(layout, &[1, 0], rng).unwrap();
    let m = a.matrix() * c(p, 0.0) + b.matrix() * c(1.0 - p, 0.0);
    ProcessMatrix::new(LabeledOperator::new(layout.systems(), m).unwrap(), layout.clone()).unwrap()
}

#[test]
fn generalized_robustness_of_ocb_matches_fixture() {
    let r = generalized_robustness(&w_ocb(), &opts()).unwrap();
    assert!((r.value - RG_OCB).abs() < 1e-6, "{}", r.value);
    assert!((r.witness_value + r.value).abs() < 1e-6, "{} vs {}", r.witness_value, r.value);
    assert!(r.witness.check_certificate().holds(1e-7));
    // Ω = Σ components − W is a valid noise term.
    let noise = r.decomposition.noise.data();
    assert!(min_eigenvalue(noise) > -1e-7);
    assert!((r.decomposition.noise_weight - r.value).abs() < 1e-6);
}

#[test]
fn random_robustness_of_ocb_is_sqrt2_minus_1() {
    let r = random_robustness(&w_ocb(), &opts()).unwrap();
    assert!((r.value - (SQRT_2 - 1.0)).abs() < 1e-6, "{}", r.value);
    assert!((r.witness_value + r.value).abs() < 1e-6);
    assert!(r.witness.check_certificate().holds(1e-7));
}

#[test]
fn random_robustness_of_noisy_ocb() {
    let r = random_robustness(&w_ocb_noisy(0.2).unwrap(), &opts()).unwrap();
    assert!((r.value - (SQRT_2 - 1.0 - 0.2) / 1.2).abs() < 1e-6, "{}", r.value);
    let r = random_robustness(&w_ocb_noisy(SQRT_2 - 1.0).unwrap(), &opts()).unwrap();
    assert!(r.value.abs() < 1e-6, "{}", r.value);
}

#[test]
fn white_noise_has_zero_robustness() {
    let w = white_noise(&PartyLayout::bipartite_qubits());
    assert!(generalized_robustness(&w, &opts()).unwrap().value.abs() < 1e-7);
    assert!(random_robustness(&w, &opts()).unwrap().value.abs() < 1e-7);
}

#[test]
fn separable_decomposition_of_boundary_ocb() {
    let w = w_ocb_noisy(SQRT_2 - 1.0).unwrap();
    let Separability::Separable(parts) = separable_decomposition(&w, &opts()).unwrap() else {
        panic!("boundary process should be separable");
    };
    assert!(parts.residual < 1e-6, "{}", parts.residual);
    for (label, qk, wk) in &parts.components {
        assert!(*qk > 0.0);
        assert!(min_eigenvalue(wk.matrix()) > -1e-7, "{label}");
    }
    // The explicit pair is a valid decomposition too.
    let (ab, ba) = ocb_decomposition(SQRT_2 - 1.0).unwrap();
    let m = (ab.matrix() + ba.matrix()) * c(0.5, 0.0);
    assert!(max_diff(&m, w.matrix()) < 1e-12);
}

#[test]
fn switch_without_charlie_splits_evenly() {
    let w = trace_out_charlie(&switch_process(&default_psi(), false).unwrap()).unwrap();
    let Separability::Separable(parts) = separable_decomposition(&w, &opts()).unwrap() else {
        panic!("reduced switch should be separable");
    };
    assert_eq!(parts.components.len(), 2);
    for (_, qk, _) in &parts.components {
        assert!((qk - 0.5).abs() < 1e-6, "{qk}");
    }
    assert!(parts.residual < 1e-6);
}

#[test]
fn ocb_is_not_separable() {
    match separable_decomposition(&w_ocb(), &opts()).unwrap() {
        Separability::NotSeparable { witness, value } => {
            assert!((value - (1.0 - SQRT_2)).abs() < 1e-6, "{value}");
            assert!(witness.check_certificate().holds(1e-7));
        }
        Separability::Separable(_) => panic!("W_OCB reported separable"),
    }
}

#[test]
fn verify_accepts_known_witnesses() {
    let layout = PartyLayout::bipartite_qubits();
    let v = verify_witness(&bipartite_op(s_ocb()), &layout, WITNESS_TOL, &opts()).unwrap();
    assert!(v.accepted, "margin {}", v.margin);
    assert!(v.witness.unwrap().check_certificate().holds(1e-7));

    let id = CMat::identity(16, 16) * c(0.25, 0.0);
    assert!(verify_witness(&bipartite_op(id), &layout, WITNESS_TOL, &opts()).unwrap().accepted);
}

#[test]
fn verify_rejects_negated_ocb_witness() {
    let neg = bipartite_op(-s_ocb());
    // A separable process on which −S_OCB is negative.
    let noise = white_noise(&PartyLayout::bipartite_qubits());
    assert!((witness_expectation(&neg, &noise.op).unwrap() + 1.0).abs() < 1e-12);
    let v = verify_witness(&neg, &PartyLayout::bipartite_qubits(), WITNESS_TOL, &opts()).unwrap();
    assert!(!v.accepted);
    assert!(v.witness.is_none());
    assert!(v.margin < -0.1, "{}", v.margin);
}

#[test]
fn ocb_witness_expectations() {
    let s = bipartite_op(s_ocb());
    assert!((witness_expectation(&s, &w_ocb().op).unwrap() - (1.0 - SQRT_2)).abs() < 1e-12);
    let noise = white_noise(&PartyLayout::bipartite_qubits());
    assert!((witness_expectation(&s, &noise.op).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ocb_witness_nonnegative_on_random_separable() {
    let layout = PartyLayout::bipartite_qubits();
    let s = bipartite_op(s_ocb());
    let mut r = rng(7);
    for _ in 0..100 {
        let p = r.random::<f64>();
        let w = separable_mixture(&layout, p, &mut r);
        assert!(witness_expectation(&s, &w.op).unwrap() >= -1e-12);
    }
}

#[test]
fn expectation_aligns_factor_order() {
    let w = w_ocb();
    let s = bipartite_op(s_ocb());
    let order = ["B_I", "A_O", "B_O", "A_I"];
    let sp = causalwit::tensor_ops::permute_systems(&s, &order).unwrap();
    let a = witness_expectation(&s, &w.op).unwrap();
    let b = witness_expectation(&sp, &w.op).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn ocb_measurement_decomposition() {
    let d = decompose_witness_ocb();
    assert!(d.residual <= 1e-12, "{}", d.residual);
    for inst in d.alice.iter().chain(&d.bob) {
        assert!(inst.defect().unwrap() < 1e-12, "{}", inst.label);
    }
    let g = causalwit::tensor_ops::trace_product(&d.game, w_ocb().matrix()).re;
    assert!((g - (2.0 + SQRT_2) / 4.0).abs() < 1e-12, "{g}");
}

#[test]
fn estimate_from_exact_probabilities() {
    let d = decompose_witness_ocb();
    let t = born_table(&w_ocb(), &d.alice, &d.bob).unwrap();
    assert_eq!(t.cells.len(), 32);
    let v = estimate_from_probabilities(&d.coefficients, &t).unwrap();
    assert!((v - (1.0 - SQRT_2)).abs() < 1e-12, "{v}");
    let t = born_table(&white_noise(&PartyLayout::bipartite_qubits()), &d.alice, &d.bob).unwrap();
    assert!((estimate_from_probabilities(&d.coefficients, &t).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn estimate_from_sampled_counts() {
    let d = decompose_witness_ocb();
    let exact = born_table(&w_ocb(), &d.alice, &d.bob).unwrap();
    let shots = 1_000_000;
    let sampled = resample_table(&exact, shots, &mut rng(2024)).unwrap();
    let se = standard_error(&d.coefficients, &exact, shots).unwrap();
    assert!(se > 0.0 && se < 1e-3);
    let v = estimate_from_probabilities(&d.coefficients, &sampled).unwrap();
    assert!((v - (1.0 - SQRT_2)).abs() < 3.0 * se, "{v} se {se}");
}

#[test]
fn estimate_rejects_missing_cell() {
    let d = decompose_witness_ocb();
    let mut t = born_table(&w_ocb(), &d.alice, &d.bob).unwrap();
    t.cells.remove(&(1, 3, 0, 1));
    assert!(matches!(estimate_from_probabilities(&d.coefficients, &t), Err(WitnessError::MissingCell(_))));
    let empty = ProbabilityTable::default();
    assert!(estimate_from_probabilities(&d.coefficients, &empty).is_err());
}

#[test]
fn witness_json_roundtrip() {
    let r = random_robustness(&w_ocb(), &opts()).unwrap();
    let text = serde_json::to_string(&r.witness.to_json()).unwrap();
    let back: WitnessJson = serde_json::from_str(&text).unwrap();
    let (op, layout) = witness_from_json(&back).unwrap();
    assert_eq!(op.data(), r.witness.op.data());
    assert_eq!(layout, r.witness.layout);
    assert!(verify_witness(&op, &layout, WITNESS_TOL, &opts()).unwrap().accepted);
}

#[test]
fn unsupported_layouts_are_rejected() {
    let three = PartyLayout::new(vec![
        Party::new("A", vec![q("A_I")], vec![q("A_O")]),
        Party::new("B", vec![q("B_I")], vec![q("B_O")]),
        Party::new("C", vec![q("C_I")], vec![q("C_O")]),
    ]);
    let w = white_noise(&three);
    assert!(matches!(generalized_robustness(&w, &opts()), Err(WitnessError::Unsupported(_))));
    let s = LabeledOperator::identity(three.systems()).unwrap();
    assert!(matches!(verify_witness(&s, &three, WITNESS_TOL, &opts()), Err(WitnessError::Unsupported(_))));
}

#[test]
fn invalid_process_is_rejected() {
    let layout = PartyLayout::bipartite_qubits();
    let bad = ProcessMatrix::new(bipartite_op(causalwit::tensor_ops::pauli_string("ZZZZ")), layout).unwrap();
    assert!(generalized_robustness(&bad, &opts()).is_err());
    assert!(random_robustness(&bad, &opts()).is_err());
}

#[test]
fn non_hermitian_witness_is_rejected() {
    let mut m = s_ocb();
    m[(0, 1)] += c(0.0, 1.0);
    let r = verify_witness(&bipartite_op(m), &PartyLayout::bipartite_qubits(), WITNESS_TOL, &opts());
    assert!(matches!(r, Err(WitnessError::Invalid(_))));
}

#[test]
fn tripartite_switch_witness_is_certified() {
    let mut r = rng(11);
    let layout = PartyLayout::switch(true);
    // A separable tripartite process has zero robustness and its witness
    // carries one splitting per order.
    let a = random_ordered_process(&layout, &[0, 1, 2], &mut r).unwrap();
    let b = random_ordered_process(&layout, &[1, 0, 2], &mut r).unwrap();
    let m = (a.matrix() + b.matrix()) * c(0.5, 0.0);
    let w = ProcessMatrix::new(LabeledOperator::new(layout.systems(), m).unwrap(), layout).unwrap();
    let res = random_robustness(&w, &opts()).unwrap();
    assert!(res.value.abs() < SEPARABLE_BELOW, "{}", res.value);
    assert!(res.witness.check_certificate().holds(1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn robustness_duality_and_soundness(seed in any::<u64>()) {
        let w = random_valid_process(&PartyLayout::bipartite_qubits(), &mut rng(seed));
        for r in [generalized_robustness(&w, &opts()).unwrap(), random_robustness(&w, &opts()).unwrap()] {
            prop_assert!(r.value >= -1e-7);
            prop_assert!((r.value + r.witness_value).abs() < 1e-6, "value {} witness {}", r.value, r.witness_value);
            prop_assert!(r.witness.check_certificate().holds(1e-6));
        }
    }

    #[test]
    fn separable_mixtures_have_zero_robustness(seed in any::<u64>(), p in 0.0f64..1.0) {
        let w = separable_mixture(&PartyLayout::bipartite_qubits(), p, &mut rng(seed));
        let r = generalized_robustness(&w, &opts()).unwrap();
        prop_assert!(r.value.abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn generalized_robustness_is_convex(seed in any::<u64>(), p in 0.0f64..1.0) {
        let layout = PartyLayout::bipartite_qubits();
        let mut r = rng(seed);
        let w1 = random_valid_process(&layout, &mut r);
        let w2 = random_valid_process(&layout, &mut r);
        let m = w1.matrix() * c(p, 0.0) + w2.matrix() * c(1.0 - p, 0.0);
        let mix = ProcessMatrix::new(LabeledOperator::new(layout.systems(), m).unwrap(), layout).unwrap();
        let g = |w: &ProcessMatrix| generalized_robustness(w, &opts()).unwrap().value;
        prop_assert!(g(&mix) <= p * g(&w1) + (1.0 - p) * g(&w2) + 1e-6);
    }

    #[test]
    fn generalized_witness_bounded_by_one_on_valid(seed in any::<u64>()) {
        let layout = PartyLayout::bipartite_qubits();
        let r = generalized_robustness(&w_ocb(), &opts()).unwrap();
        let mut g = rng(seed);
        for _ in 0..10 {
            let omega = random_valid_process(&layout, &mut g);
            prop_assert!(witness_expectation(&r.witness.op, &omega.op).unwrap() <= 1.0 + 1e-8);
        }
    }
}
