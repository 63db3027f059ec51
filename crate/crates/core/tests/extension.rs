mod common;

use common::{cascade, heading, heading_chain, random_expr, seeded};
use nonlin::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn chain_reduces_to_heading_one_state_at_a_time() {
    for n in 3..=7 {
        let cert = reduce_integrator(&heading_chain(n));
        assert_eq!(cert.count(), n - 2);
        assert!(cert.reduced.same_up_to_renaming(&heading()), "{}", serialize(&cert.reduced));
        assert!(verify_roundtrip(&cert));
    }
    let cert = reduce_integrator(&heading_chain(5));
    let stripped: Vec<&str> = cert.steps.iter().map(|s| s.stripped_state.as_str()).collect();
    assert_eq!(stripped, ["x5", "x4", "x3"]);
    assert_eq!(cert.reduced.input_names(), ["u_x3"]);
    assert_eq!(serialize(&cert.reduced), "system chain\nstates x1 x2\ninputs u_x3\ndx1 = sin(u_x3)\ndx2 = cos(u_x3)\n");
}

#[test]
fn heading_extends_to_the_three_state_chain() {
    let ext = extend(&heading()).unwrap();
    assert!(ext.extended.same_up_to_renaming(&heading_chain(3)));
}

#[test]
fn cascade_extension_is_the_listed_affine_system() {
    let ext = extend(&cascade()).unwrap();
    let listed = parse("system listed\nstates x1 x2 x3 x4\ninputs v\ndx1 = x4\ndx2 = x3^3\ndx3 = x4^3\ndx4 = v\n").unwrap();
    assert!(ext.extended.same_up_to_renaming(&listed));
    assert!(to_affine(&ext.extended).is_ok());
    let err = to_affine(&cascade()).unwrap_err();
    assert_eq!((err.state.as_str(), err.input.as_str()), ("x3", "u"));
    assert_eq!(ext.mapping[0].state_index, 3);
}

#[test]
fn smallest_extension() {
    let s = parse("system s\nstates x1\ninputs u\ndx1 = u\n").unwrap();
    let ext = extend(&s).unwrap();
    assert_eq!(serialize(&ext.extended), "system s\nstates x1 u\ninputs v_u\ndx1 = u\ndu = v_u\n");
}

#[test]
fn non_affine_input_is_irreducible() {
    let s = parse("system s\nstates x1 x2\ninputs u\ndx1 = sin(u)\ndx2 = x1\n").unwrap();
    let cert = reduce_integrator(&s);
    assert_eq!(cert.count(), 0);
    assert!(verify_roundtrip(&cert));
}

#[test]
fn tampered_certificates_fail() {
    let cert = reduce_integrator(&heading_chain(5));
    let mut bad = cert.clone();
    let edited = parse("system chain\nstates x1 x2 x3 x4 x5\ninputs u\ndx1 = sin(x3)\ndx2 = cos(x3)\ndx3 = x4\ndx4 = 2*x5\ndx5 = u\n").unwrap();
    bad.original = edited.clone();
    assert!(!verify_roundtrip(&bad));
    let mut bad = cert.clone();
    bad.steps[1].before = edited;
    assert!(!verify_roundtrip(&bad));
    let mut bad = cert.clone();
    bad.reduced = parse("system chain\nstates x1 x2\ninputs u\ndx1 = sin(u)\ndx2 = sin(u)\n").unwrap();
    assert!(!verify_roundtrip(&bad));
    let json = cert.to_json();
    assert_eq!(ReductionCertificate::from_json(&json).unwrap(), cert);
}

#[test]
fn linear_with_pure_integrator_third_row() {
    // with a zero third row, ẋ3 = u is a bare integrator
    let s = parse("system lin\nstates x1 x2 x3\ninputs u\ndx1 = 0.5*x1 + x2 + 2*x3\ndx2 = -x1 + 3*x3\ndx3 = u\n").unwrap();
    let cert = reduce_integrator(&s);
    assert_eq!(cert.count(), 1);
    let want = parse("system lin\nstates x1 x2\ninputs w\ndx1 = 0.5*x1 + x2 + 2*w\ndx2 = -x1 + 3*w\n").unwrap();
    assert!(cert.reduced.same_up_to_renaming(&want));
}

/// A random system in which every input occurs somewhere, sometimes with
/// integrator rows mixed in.
fn random_used_inputs(seed: u64) -> ControlSystem {
    let mut rng = seeded(seed);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=3);
    let mut rhs: Vec<Expr> = (0..n).map(|_| random_expr(&mut rng, n, m, 3)).collect();
    for i in 0..m {
        if !rhs.iter().any(|e| e.contains_var(Var::Input(i))) {
            let k = rng.random_range(0..n);
            let taken = std::mem::replace(&mut rhs[k], Expr::zero());
            rhs[k] = if rng.random_bool(0.5) {
                Expr::input(i)
            } else {
                taken + Expr::input(i).sin()
            };
        }
    }
    let states = (1..=n).map(|i| format!("x{i}")).collect();
    let inputs = (1..=m).map(|i| format!("u{i}")).collect();
    ControlSystem::new("r", states, inputs, rhs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn reduce_undoes_extend(seed in any::<u64>()) {
        let s = random_used_inputs(seed);
        let own = reduce_integrator(&s);
        let cert = reduce_integrator(&extend(&s).unwrap().extended);
        prop_assert!(verify_roundtrip(&cert));
        prop_assert_eq!(cert.count(), s.m() + own.count());
        prop_assert!(cert.reduced.same_up_to_renaming(&own.reduced));
        if own.count() == 0 {
            prop_assert!(cert.reduced.same_up_to_renaming(&s), "{}", serialize(&s));
        }
    }

    #[test]
    fn reduction_terminates_and_keeps_a_state(seed in any::<u64>()) {
        let s = random_used_inputs(seed);
        let cert = reduce_integrator(&s);
        prop_assert!(cert.count() < s.n().max(1));
        prop_assert!(cert.reduced.n() >= 1);
        prop_assert_eq!(cert.reduced.n() + cert.count(), s.n());
    }

    #[test]
    fn extension_shape(seed in any::<u64>()) {
        let s = random_used_inputs(seed);
        let ext = extend(&s).unwrap();
        let (n, m) = (s.n(), s.m());
        prop_assert_eq!(ext.extended.n(), n + m);
        prop_assert_eq!(ext.extended.m(), m);
        prop_assert!(to_affine(&ext.extended).is_ok());
        for i in 0..m {
            prop_assert_eq!(&ext.extended.rhs()[n + i], &Expr::input(i));
        }
        for k in 0..n {
            let back = ext.extended.rhs()[k].map_vars(&|v| match v {
                Var::State(j) if j >= n => Expr::input(j - n),
                v => Expr::var(v),
            });
            prop_assert_eq!(&back, &s.rhs()[k]);
        }
    }
}
