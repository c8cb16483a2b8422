//! Weakest pre-expectations of loop-free commands.

use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::One;

use crate::ast::{BoolExpr, Cmd, Dist, Expr, Program};

/// `wpe(c, e)`: the expected value of `e` after running `c`.
pub fn wpe_loopfree(c: &Cmd, e: &Expr) -> Expr {
    match c {
        Cmd::Skip => e.clone(),
        Cmd::Assign(v, rhs) => e.substitute(*v, rhs),
        Cmd::Sample(v, Dist::Bernoulli(q)) => {
            let hit = e.substitute(*v, &Expr::one());
            let miss = e.substitute(*v, &Expr::zero());
            if hit == miss {
                return hit;
            }
            Expr::add(
                Expr::mul(q.clone(), hit),
                Expr::mul(Expr::sub(Expr::one(), q.clone()), miss),
            )
        }
        Cmd::Sample(v, Dist::Discrete(support)) => {
            let branches: Vec<Expr> = support.iter().map(|(val, _)| e.substitute(*v, &Expr::Const(val.clone()))).collect();
            if branches.windows(2).all(|w| w[0] == w[1]) && total_is_one(support) {
                return branches.into_iter().next().unwrap_or_else(Expr::zero);
            }
            Expr::sum(support.iter().zip(branches).map(|((_, w), b)| Expr::mul(w.clone(), b)))
        }
        Cmd::Seq(cs) => cs.iter().rev().fold(e.clone(), |acc, c| wpe_loopfree(c, &acc)),
        Cmd::If(b, t, f) => {
            let then_e = wpe_loopfree(t, e);
            let else_e = wpe_loopfree(f, e);
            if then_e == else_e {
                return then_e;
            }
            Expr::add(
                Expr::mul(Expr::ind(b.clone()), then_e),
                Expr::mul(Expr::ind(BoolExpr::not(b.clone())), else_e),
            )
        }
    }
}

fn total_is_one(support: &[(BigRational, Expr)]) -> bool {
    let mut total = BigRational::from_integer(0.into());
    for (_, w) in support {
        match w.as_const() {
            Some(c) => total += c,
            None => return false,
        }
    }
    total == BigRational::one()
}

/// The characteristic function `[G]*wpe(P, inv) + [not G]*post`.
pub fn char_fn_apply(prog: &Program, post: &Expr, inv: &Expr) -> Expr {
    Expr::add(
        Expr::mul(Expr::ind(prog.guard.clone()), wpe_loopfree(&prog.body, inv)),
        Expr::mul(Expr::ind(BoolExpr::not(prog.guard.clone())), post.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::eval_expr;
    use crate::parse::{parse_expr, parse_program};
    use crate::poly::plain_ratfn;
    use proptest::prelude::*;

    const GEO: &str = "var x : bool; var n : int; var p : prob;
        while (x == 0) { n = n + 1; x ~ bernoulli(p); }";

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn skip_is_identity() {
        let p = parse_program(GEO).unwrap();
        let e = parse_expr("n + [x == 0]/p", &p.vars).unwrap();
        assert_eq!(wpe_loopfree(&Cmd::Skip, &e), e);
    }

    #[test]
    fn bernoulli_indicator() {
        let p = parse_program("var x : bool; var p : prob; while (x == 0) { x ~ bernoulli(p); }").unwrap();
        let e = parse_expr("[x == 1]", &p.vars).unwrap();
        assert_eq!(wpe_loopfree(&p.body, &e), parse_expr("p", &p.vars).unwrap());
    }

    #[test]
    fn geo_tree_is_fixed_point() {
        let p = parse_program(GEO).unwrap();
        let inv = parse_expr("[x != 0]*n + [x == 0]*(n + 1/p)", &p.vars).unwrap();
        let w = wpe_loopfree(&p.body, &inv);
        let target = plain_ratfn(&parse_expr("n + 1/p", &p.vars).unwrap()).unwrap();
        for n in 0..4 {
            let env = [q(0, 1), q(n, 1), q(1, 3)];
            assert_eq!(eval_expr(&w, &env).unwrap(), target.eval(&env).unwrap());
        }
        let post = parse_expr("n", &p.vars).unwrap();
        let phi = char_fn_apply(&p, &post, &inv);
        for (x, n) in [(0, 2), (1, 5)] {
            let env = [q(x, 1), q(n, 1), q(2, 5)];
            assert_eq!(eval_expr(&phi, &env).unwrap(), eval_expr(&inv, &env).unwrap());
        }
    }

    #[test]
    fn guard_false_collapses_to_post() {
        let p = parse_program("var x : int; while (false) { x = x + 1; }").unwrap();
        let post = parse_expr("x", &p.vars).unwrap();
        assert_eq!(char_fn_apply(&p, &post, &post), post);
    }

    proptest! {
        #[test]
        fn linearity(a in -4i64..5, x in 0i64..2, n in -3i64..6, pn in 1i64..9) {
            let p = parse_program(GEO).unwrap();
            let e1 = parse_expr("n*n + [x == 0]*p", &p.vars).unwrap();
            let e2 = parse_expr("x + 2*n", &p.vars).unwrap();
            let combo = Expr::add(Expr::mul(Expr::int(a), e1.clone()), e2.clone());
            let env = [q(x, 1), q(n, 1), q(pn, 10)];
            let lhs = eval_expr(&wpe_loopfree(&p.body, &combo), &env).unwrap();
            let rhs = q(a, 1) * eval_expr(&wpe_loopfree(&p.body, &e1), &env).unwrap()
                + eval_expr(&wpe_loopfree(&p.body, &e2), &env).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
