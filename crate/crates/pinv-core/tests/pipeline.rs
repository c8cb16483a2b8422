use num_rational::BigRational;
use num_traits::Zero;
use pinv_core::cegis::{run_exact, run_sub, FrozenClock, Mode, RunConfig};
use pinv_core::eval::eval_exact;
use pinv_core::verify::{check_exact, check_sub, expectations_equivalent, Status, VerifyConfig};
use pinv_core::wpe::char_fn_apply;
use pinv_core::{parse_expr, parse_program, Expr};
use proptest::prelude::*;

const GEO: &str = "var x : bool; var n : int; var p : prob;
    while (x == 0) { n = n + 1; x ~ bernoulli(p); }";

fn small(mode: Mode, seed: u64) -> RunConfig {
    RunConfig { mode, nruns: 200, nstates: 100, seed, timings: false, max_iterations: Some(5), ..RunConfig::default() }
}

#[test]
fn geo_exact_round_trip() {
    let prog = parse_program(GEO).unwrap();
    let post = parse_expr("n", &prog.vars).unwrap();
    let r = run_exact(&prog, &post, &small(Mode::Exact, 2), &FrozenClock).unwrap();
    let inv = r.invariant.expect("geo is learned");
    let truth = parse_expr("n + [x == 0]/p", &prog.vars).unwrap();
    assert!(expectations_equivalent(&inv, &truth, &prog.vars));
    assert_eq!(check_exact(&inv, &prog, &post, &VerifyConfig::default()).status, Status::VerifiedExact);
}

#[test]
fn geo_sub_is_a_lower_bound() {
    let prog = parse_program(GEO).unwrap();
    let post = parse_expr("n", &prog.vars).unwrap();
    let pre = parse_expr("n + [x == 0]", &prog.vars).unwrap();
    let r = run_sub(&prog, &pre, &post, &small(Mode::Sub, 0), &FrozenClock).unwrap();
    let inv = r.invariant.expect("a sub-invariant is found");
    assert!(check_sub(&inv, &prog, &pre, &post, &VerifyConfig::default()).status.is_verified());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn scaled_geo_invariants_are_refuted_with_genuine_states(k in 1i64..40) {
        prop_assume!(k != 20);
        let prog = parse_program(GEO).unwrap();
        let post = parse_expr("n", &prog.vars).unwrap();
        let inv = parse_expr(&format!("n + [x == 0]*({k}/20)/p"), &prog.vars).unwrap();
        let v = check_exact(&inv, &prog, &post, &VerifyConfig::default());
        prop_assert_eq!(v.status, Status::Refuted);
        let d = Expr::sub(char_fn_apply(&prog, &post, &inv), inv.clone());
        for c in &v.counterexamples {
            let exact = eval_exact(&d, &c.state.0).unwrap();
            prop_assert!(!exact.is_zero());
            // The violation is |1 - k/20| wherever the guard holds.
            prop_assert_eq!(exact, BigRational::new((20 - k).into(), 20.into()));
        }
    }
}
