mod common;

use causalwit::process_space::*;
use causalwit::tensor_ops::*;
use common::*;
use proptest::prelude::*;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const TOL: f64 = 1e-9;

fn ab() -> [usize; 2] {
    [0, 1]
}

fn ba() -> [usize; 2] {
    [1, 0]
}

#[test]
fn lv_fixes_valid_processes() {
    let w = w_ocb();
    let p = lv_project(&w.op, &w.layout).unwrap();
    assert!(max_diff(p.data(), w.matrix()) < 1e-14);
    for layout in [PartyLayout::bipartite_qubits(), PartyLayout::switch(true), PartyLayout::switch(false)] {
        let n = white_noise(&layout);
        let p = lv_project(&n.op, &layout).unwrap();
        assert!(max_diff(p.data(), n.matrix()) < 1e-14);
    }
}

#[test]
fn lv_is_idempotent_on_many_random_operators() {
    let layout = PartyLayout::bipartite_qubits();
    let sys = layout.systems();
    let mut r = rng(10);
    for _ in 0..1000 {
        let h = LabeledOperator::new(sys.clone(), random_herm(16, &mut r)).unwrap();
        let p = lv_project(&h, &layout).unwrap();
        let pp = lv_project(&p, &layout).unwrap();
        assert!(max_diff(p.data(), pp.data()) < 1e-10);
    }
}

#[test]
fn layout_mismatch_is_an_error() {
    let w = w_ocb();
    assert!(lv_project(&w.op, &PartyLayout::switch(true)).is_err());
    assert!(causal_order_project(&w.op, &[0, 0], &w.layout).is_err());
    assert!(causal_order_project(&w.op, &[0], &w.layout).is_err());
}

#[test]
fn order_projector_examples() {
    let w = w_ocb();
    for order in [ab(), ba()] {
        let p = causal_order_project(&w.op, &order, &w.layout).unwrap();
        assert!(max_abs(&(w.matrix() - p.data())) > 0.1);
        assert!(!is_causally_ordered(&w.op, &order, &w.layout, TOL).unwrap());
    }
    let (wab, wba) = ocb_decomposition(SQRT_2 - 1.0).unwrap();
    assert!(is_causally_ordered(&wab.op, &ab(), &wab.layout, TOL).unwrap());
    assert!(!is_causally_ordered(&wab.op, &ba(), &wab.layout, TOL).unwrap());
    assert!(is_causally_ordered(&wba.op, &ba(), &wba.layout, TOL).unwrap());

    // ρ ⊗ 1 without signalling in either direction.
    let mut r = rng(11);
    let layout = PartyLayout::bipartite_qubits();
    let rho = random_density(4, &mut r);
    let data = rho.kronecker(&CMat::identity(4, 4));
    let op = LabeledOperator::new(vec![q("A_I"), q("B_I"), q("A_O"), q("B_O")], data).unwrap();
    let op = permute_systems(&op, &["A_I", "A_O", "B_I", "B_O"]).unwrap();
    for order in [ab(), ba()] {
        let p = causal_order_project(&op, &order, &layout).unwrap();
        assert!(max_diff(p.data(), op.data()) < 1e-14);
        assert!(is_causally_ordered(&op, &order, &layout, TOL).unwrap());
    }
    let n = white_noise(&layout);
    assert!(is_causally_ordered(&n.op, &ab(), &layout, TOL).unwrap());
    assert!(is_causally_ordered(&n.op, &ba(), &layout, TOL).unwrap());
}

#[test]
fn validity_examples() {
    let w = w_ocb();
    let rep = is_valid_process(&w.op, &w.layout, TOL).unwrap();
    assert!(rep.verdict && rep.psd && rep.trace_ok && rep.subspace);
    assert!((rep.trace - 4.0).abs() < 1e-14);
    assert!(rep.min_eigenvalue >= -1e-12);

    let n = white_noise(&w.layout);
    assert!(is_valid_process(&n.op, &n.layout, TOL).unwrap().verdict);

    let mut r = rng(12);
    for _ in 0..20 {
        let p = random_psd(16, &mut r);
        let p = &p * c(4.0 / p.trace().re, 0.0);
        let op = LabeledOperator::new(w.layout.systems(), p).unwrap();
        let rep = is_valid_process(&op, &w.layout, TOL).unwrap();
        assert!(rep.psd && rep.trace_ok && !rep.subspace && !rep.verdict);
        assert!(is_causally_ordered(&op, &ab(), &w.layout, TOL).is_err());
        assert!(ProcessMatrix::new_valid(op, w.layout.clone(), TOL).is_err());
    }
}

#[test]
fn white_noise_shapes() {
    let n = white_noise(&PartyLayout::bipartite_qubits());
    assert!(max_diff(n.matrix(), &(CMat::identity(16, 16) * c(0.25, 0.0))) < 1e-15);
    let n = white_noise(&PartyLayout::switch(true));
    assert_eq!(n.op.dim(), 32);
    assert!(max_diff(n.matrix(), &(CMat::identity(32, 32) * c(0.125, 0.0))) < 1e-15);
    assert!((n.op.trace().re - 4.0).abs() < 1e-14);
    assert_eq!(n.d_o(), 4);
}

#[test]
fn ocb_noisy_family() {
    let w = w_ocb();
    assert_eq!(w_ocb_noisy(0.0).unwrap().matrix(), w.matrix());
    let far = w_ocb_noisy(1e12).unwrap();
    assert!(max_diff(far.matrix(), white_noise(&w.layout).matrix()) < 1e-11);
    assert!(matches!(w_ocb_noisy(-0.1), Err(ProcessError::NegativeNoise(_))));
    for l in [0.0, 0.1, SQRT_2 - 1.0, 1.0, 5.0] {
        let x = w_ocb_noisy(l).unwrap();
        assert!(is_valid_process(&x.op, &x.layout, TOL).unwrap().verdict);
    }
}

#[test]
fn ocb_decomposition_examples() {
    let l = SQRT_2 - 1.0;
    let (wab, wba) = ocb_decomposition(l).unwrap();
    let k = c(SQRT_2 / (1.0 + l), 0.0);
    let want = (CMat::identity(16, 16) + pauli_string("1ZZ1") * k) * c(0.25, 0.0);
    assert!(max_diff(wab.matrix(), &want) < 1e-15);
    let want = (CMat::identity(16, 16) + pauli_string("Z1XZ") * k) * c(0.25, 0.0);
    assert!(max_diff(wba.matrix(), &want) < 1e-15);

    for l in [SQRT_2 - 1.0, 1.0, 3.0] {
        let (wab, wba) = ocb_decomposition(l).unwrap();
        let mix = (wab.matrix() + wba.matrix()) * c(0.5, 0.0);
        assert!(max_diff(&mix, w_ocb_noisy(l).unwrap().matrix()) < 1e-14);
        for (part, order) in [(&wab, ab()), (&wba, ba())] {
            assert!(part.op.min_eigenvalue() >= -1e-12);
            assert!((part.op.trace().re - 4.0).abs() < 1e-13);
            assert!(is_causally_ordered(&part.op, &order, &part.layout, TOL).unwrap());
        }
    }
    assert!(matches!(ocb_decomposition(0.2), Err(ProcessError::BelowBoundary(_))));
    assert!(matches!(ocb_decomposition(-1.0), Err(ProcessError::NegativeNoise(_))));
}

fn psi_states() -> Vec<CVec> {
    let h = FRAC_1_SQRT_2;
    vec![ket(2, 0), ket(2, 1), qubit_state(c(h, 0.0), c(h, 0.0)), qubit_state(c(0.6, 0.0), c(0.0, 0.8))]
}

#[test]
fn switch_examples() {
    for psi in psi_states() {
        let v = switch_vector(&psi).unwrap();
        assert!((v.norm_sqr() - 4.0).abs() < 1e-13);
        let full = switch_process(&psi, false).unwrap();
        let red = switch_process(&psi, true).unwrap();
        assert_eq!(full.op.dim(), 64);
        assert_eq!(red.op.dim(), 32);
        for p in [&full, &red] {
            assert_eq!(p.d_o(), 4);
            assert!(is_valid_process(&p.op, &p.layout, TOL).unwrap().verdict);
        }
        let cparty = &red.layout.parties[2];
        assert_eq!(cparty.d_in(), 2);
        assert_eq!(full.layout.parties[2].d_in(), 4);
        assert_eq!(full.layout.parties[2].d_out(), 1);
        // rank one
        let mut e = full.op.eigenvalues();
        e.sort_by(f64::total_cmp);
        assert!((e[63] - 4.0).abs() < 1e-12 && e[62].abs() < 1e-12);
    }
    assert!(matches!(switch_vector(&qubit_state(c(1.0, 0.0), c(1.0, 0.0))), Err(ProcessError::NotNormalized(_))));
}

#[test]
fn switch_contraction_gives_superposed_orders() {
    let mut r = rng(13);
    for psi in psi_states() {
        let w = switch_vector(&psi).unwrap();
        let ua = random_unitary(2, &mut r);
        let ub = random_unitary(2, &mut r);
        let (va, vb) = (cj_pure(&ua), cj_pure(&ub));
        // result indexed by (target, control)
        let mut out = CVec::zeros(4);
        for i in 0..16 {
            let (a, b) = (i / 4, i % 4);
            for tc in 0..4 {
                out[tc] += va[a].conj() * vb[b].conj() * w.data[i * 4 + tc];
            }
        }
        let ba_psi = &ub * &ua * &psi;
        let ab_psi = &ua * &ub * &psi;
        for t in 0..2 {
            assert!((out[2 * t] - ba_psi[t] * FRAC_1_SQRT_2).norm() < 1e-12);
            assert!((out[2 * t + 1] - ab_psi[t] * FRAC_1_SQRT_2).norm() < 1e-12);
        }
    }
}

#[test]
fn charlie_trace_is_an_even_mixture_of_orders() {
    let phi = projector(&(ket(4, 0) + ket(4, 3)));
    for psi in psi_states() {
        let rho = projector(&psi);
        let first = rho.kronecker(&phi).kronecker(&CMat::identity(2, 2));
        let second = LabeledOperator::new(vec![q("B_I"), q("B_O"), q("A_I"), q("A_O")], first.clone()).unwrap();
        let second = permute_systems(&second, &["A_I", "A_O", "B_I", "B_O"]).unwrap();
        let want = (first + second.data()) * c(0.5, 0.0);

        let full = trace_out_charlie(&switch_process(&psi, false).unwrap()).unwrap();
        let red = trace_out_charlie(&switch_process(&psi, true).unwrap()).unwrap();
        assert_eq!(full.layout, PartyLayout::bipartite_qubits());
        assert!(max_diff(full.matrix(), &want) < 1e-14);
        assert!(max_diff(full.matrix(), red.matrix()) < 1e-14);
        assert!((full.op.trace().re - 4.0).abs() < 1e-13);
    }
    assert!(trace_out_charlie(&w_ocb()).is_err());
}

fn chan(cj: CMat, inputs: Vec<SystemLabel>, outputs: Vec<SystemLabel>) -> Channel {
    Channel { cj, inputs, outputs }
}

#[test]
fn compose_local_identity_maps() {
    let w = w_ocb();
    let id = cj_from_kraus(&[CMat::identity(2, 2)]).unwrap().into_data();
    let maps: Vec<LocalMaps> = ["A", "B"]
        .iter()
        .map(|p| LocalMaps {
            party: p.to_string(),
            pre: Some(chan(id.clone(), vec![q(&format!("{p}_I"))], vec![q(&format!("{p}_I"))])),
            post: Some(chan(id.clone(), vec![q(&format!("{p}_O"))], vec![q(&format!("{p}_O"))])),
        })
        .collect();
    let out = compose_local(&w, &maps).unwrap();
    assert_eq!(out.op.systems(), w.op.systems());
    assert!(max_diff(out.matrix(), w.matrix()) < 1e-14);
}

#[test]
fn discarding_extra_input_prepares_zero() {
    let (w1, mapped) = causalwit::witness_engine::monotonicity_processes().unwrap();
    let zero = projector(&ket(2, 0));
    let want = tensor(&w_ocb().op, &LabeledOperator::single("A_I'", zero).unwrap()).unwrap();
    let names: Vec<&str> = mapped.op.names();
    let want = permute_systems(&want, &names).unwrap();
    assert!(max_diff(mapped.matrix(), want.data()) < 1e-14);
    for p in [&w1, &mapped] {
        assert!(is_valid_process(&p.op, &p.layout, TOL).unwrap().verdict);
    }
}

#[test]
fn non_cptp_map_is_rejected() {
    let w = w_ocb();
    let bad = chan(CMat::identity(4, 4), vec![q("A_I")], vec![q("A_I")]);
    let err = compose_local(&w, &[LocalMaps { party: "A".into(), pre: Some(bad), post: None }]);
    assert!(matches!(err, Err(ProcessError::NotCptp(_))));
    let mut r = rng(14);
    let neg = chan(-random_channel_cj(2, 2, &mut r), vec![q("A_I")], vec![q("A_I")]);
    let err = compose_local(&w, &[LocalMaps { party: "A".into(), pre: Some(neg), post: None }]);
    assert!(matches!(err, Err(ProcessError::NotCptp(_))));
}

/// CJ of post ∘ C ∘ pre for the party maps.
fn pulled_back(c_op: &CMat, pre: &Channel, post: &Channel) -> CMat {
    cj_from_map(pre.d_in(), post.d_out(), |rho| {
        let r1 = cj_apply_raw(&pre.cj, rho).unwrap();
        let r2 = cj_apply_raw(c_op, &r1).unwrap();
        cj_apply_raw(&post.cj, &r2).unwrap()
    })
}

#[test]
fn compose_local_matches_probabilities() {
    let mut r = rng(15);
    let w = w_ocb();
    for _ in 0..5 {
        let mut maps = Vec::new();
        for p in ["A", "B"] {
            let pre = chan(random_channel_cj(2, 2, &mut r), vec![q(&format!("{p}_I"))], vec![q(&format!("{p}_I2"))]);
            let post = chan(random_channel_cj(2, 2, &mut r), vec![q(&format!("{p}_O2"))], vec![q(&format!("{p}_O"))]);
            maps.push(LocalMaps { party: p.into(), pre: Some(pre), post: Some(post) });
        }
        let out = compose_local(&w, &maps).unwrap();
        assert_eq!(out.op.names(), vec!["A_I2", "A_O2", "B_I2", "B_O2"]);
        assert!(is_valid_process(&out.op, &out.layout, TOL).unwrap().verdict);
        for _ in 0..5 {
            let ca = random_psd(4, &mut r);
            let cb = random_psd(4, &mut r);
            let lhs = trace_product(&ca.kronecker(&cb), out.matrix());
            let pa = pulled_back(&ca, maps[0].pre.as_ref().unwrap(), maps[0].post.as_ref().unwrap());
            let pb = pulled_back(&cb, maps[1].pre.as_ref().unwrap(), maps[1].post.as_ref().unwrap());
            let rhs = trace_product(&pa.kronecker(&pb), w.matrix());
            assert!((lhs - rhs).norm() < 1e-9, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn compose_local_keeps_order_and_spectrum() {
    let mut r = rng(16);
    let (wab, _) = ocb_decomposition(1.0).unwrap();
    let w = w_ocb();
    for _ in 0..5 {
        let maps: Vec<LocalMaps> = ["A", "B"]
            .iter()
            .map(|p| {
                let (i, o) = (q(&format!("{p}_I")), q(&format!("{p}_O")));
                LocalMaps {
                    party: p.to_string(),
                    pre: Some(Channel::unitary(&random_unitary(2, &mut r), vec![i.clone()], vec![i])),
                    post: Some(Channel::unitary(&random_unitary(2, &mut r), vec![o.clone()], vec![o])),
                }
            })
            .collect();
        let out = compose_local(&w, &maps).unwrap();
        let mut e1 = w.op.eigenvalues();
        let mut e2 = out.op.eigenvalues();
        e1.sort_by(f64::total_cmp);
        e2.sort_by(f64::total_cmp);
        for (x, y) in e1.iter().zip(&e2) {
            assert!((x - y).abs() < 1e-10);
        }
        let o2 = compose_local(&wab, &maps).unwrap();
        assert!(is_causally_ordered(&o2.op, &ab(), &o2.layout, TOL).unwrap());
    }
}

#[test]
fn random_ordered_processes_are_valid_and_ordered() {
    let mut r = rng(17);
    let bi = PartyLayout::bipartite_qubits();
    for order in [ab(), ba()] {
        for _ in 0..5 {
            let w = random_ordered_process(&bi, &order, &mut r).unwrap();
            assert!(is_valid_process(&w.op, &bi, TOL).unwrap().verdict);
            assert!(is_causally_ordered(&w.op, &order, &bi, TOL).unwrap());
        }
    }
    let tri = PartyLayout::switch(true);
    for order in [[0, 1, 2], [1, 0, 2], [2, 0, 1]] {
        let w = random_ordered_process(&tri, &order, &mut r).unwrap();
        assert!(is_valid_process(&w.op, &tri, TOL).unwrap().verdict);
        assert!(is_causally_ordered(&w.op, &order, &tri, TOL).unwrap());
    }
}

#[test]
fn named_processes_and_json() {
    for name in ["ocb", "ocb-noisy:0.5", "switch", "switch-reduced", "white-noise"] {
        let w = named_process(name).unwrap();
        assert!(is_valid_process(&w.op, &w.layout, TOL).unwrap().verdict, "{name}");
        let text = serde_json::to_string(&w.to_json()).unwrap();
        let back: ProcessJson = serde_json::from_str(&text).unwrap();
        assert_eq!(ProcessMatrix::from_json(&back).unwrap(), w);
    }
    assert!(matches!(named_process("nope"), Err(ProcessError::UnknownName(_))));
    assert!(matches!(named_process("ocb-noisy:x"), Err(ProcessError::UnknownName(_))));
}

fn apply(p: &TrPoly, sys: &[SystemLabel], m: &CMat) -> CMat {
    p.apply_raw(sys, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projectors_commute(seed in any::<u64>(), tri in any::<bool>()) {
        let layout = if tri { PartyLayout::switch(true) } else { PartyLayout::bipartite_qubits() };
        let sys = layout.systems();
        let n = total_dim(&sys);
        let orders: Vec<Vec<usize>> = if tri {
            vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]
        } else {
            vec![vec![0, 1], vec![1, 0]]
        };
        let mut polys = vec![lv_poly(&layout, &sys)];
        polys.extend(orders.iter().map(|o| order_poly(&layout, &sys, o)));
        let mut r = rng(seed);
        let x = random_herm(n, &mut r);
        let y = random_herm(n, &mut r);
        for p in &polys {
            let px = apply(p, &sys, &x);
            prop_assert!(max_diff(&px, &apply(p, &sys, &px)) < 1e-10);
            let lhs = trace_product(&px, &y);
            let rhs = trace_product(&x, &apply(p, &sys, &y));
            prop_assert!((lhs - rhs).norm() < 1e-10);
            for p2 in &polys {
                let a = apply(p, &sys, &apply(p2, &sys, &x));
                let b = apply(p2, &sys, &apply(p, &sys, &x));
                prop_assert!(max_diff(&a, &b) < 1e-10);
            }
        }
    }

    #[test]
    fn ordered_projection_of_valid_operator_is_one_way(seed in any::<u64>()) {
        let layout = PartyLayout::bipartite_qubits();
        let mut r = rng(seed);
        let h = LabeledOperator::new(layout.systems(), random_herm(16, &mut r)).unwrap();
        let v = lv_project(&h, &layout).unwrap();
        let w = causal_order_project(&v, &ab(), &layout).unwrap();
        // W = _{B_O} W and _{A_O B_I B_O} W = _{B_I B_O} W
        let bo = trace_and_replace(&w, &["B_O"]).unwrap();
        prop_assert!(max_diff(bo.data(), w.data()) < 1e-10);
        let l = trace_and_replace(&w, &["A_O", "B_I", "B_O"]).unwrap();
        let rr = trace_and_replace(&w, &["B_I", "B_O"]).unwrap();
        prop_assert!(max_diff(l.data(), rr.data()) < 1e-10);
    }

    #[test]
    fn perturbed_valid_processes_stay_valid(seed in any::<u64>()) {
        let layout = PartyLayout::bipartite_qubits();
        let mut r = rng(seed);
        let w = random_valid_process(&layout, &mut r);
        prop_assert!(is_valid_process(&w.op, &layout, TOL).unwrap().verdict);
    }
}
