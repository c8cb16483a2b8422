//! Feature lists for linear and multiplicative leaf models.
//!
//! Base features (variables and user features) are classified as
//! probabilities, integers, booleans or other reals. Linear leaves get
//! pairwise products within and across compatible classes; multiplicative
//! leaves get sums, differences and complements, since a product of powers
//! already expresses products.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{is_boolean_expr, is_integral_expr, is_probability_expr, Expr, Program, State, VarId, Vars};
use crate::eval::EvalError;
use crate::exec::CompiledExpr;
use crate::poly::{plain_ratfn, RatFn};
use crate::print::expr_to_string;

pub const FEATURE_CAP: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Linear,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("{count} {kind:?} features exceed the cap of {cap}")]
    TooMany { kind: FeatureKind, count: usize, cap: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeatureClass {
    Prob,
    Int,
    Bool,
    Real,
}

pub fn classify(e: &Expr, vars: &Vars) -> FeatureClass {
    if is_boolean_expr(e, vars) {
        FeatureClass::Bool
    } else if is_probability_expr(e, vars) {
        FeatureClass::Prob
    } else if is_integral_expr(e, vars) {
        FeatureClass::Int
    } else {
        FeatureClass::Real
    }
}

#[derive(Clone, Debug)]
pub struct Feature {
    pub name: String,
    pub expr: Expr,
    pub class: FeatureClass,
    compiled: CompiledExpr,
}

impl Feature {
    pub fn new(expr: Expr, vars: &Vars) -> Self {
        Feature {
            name: expr_to_string(&expr, vars),
            class: classify(&expr, vars),
            compiled: CompiledExpr::new(&expr),
            expr,
        }
    }

    pub fn eval(&self, state: &[f64]) -> Result<f64, EvalError> {
        self.compiled.eval(state)
    }
}

#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub features: Vec<Feature>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn eval(&self, state: &State) -> Result<Vec<f64>, EvalError> {
        self.features.iter().map(|f| f.eval(&state.0)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Rational(RatFn),
    Syntax(Expr),
}

struct Collector<'a> {
    vars: &'a Vars,
    boolean: BTreeSet<VarId>,
    seen: BTreeSet<Key>,
    out: Vec<Feature>,
}

impl Collector<'_> {
    fn key(&self, e: &Expr) -> Option<Key> {
        match plain_ratfn(e) {
            Ok(f) => {
                let f = RatFn { num: f.num.reduce_idempotent(&self.boolean), den: f.den.reduce_idempotent(&self.boolean) }
                    .normalized();
                if f.num.as_constant().is_some() && f.is_polynomial() {
                    return None;
                }
                Some(Key::Rational(f))
            }
            Err(_) if e.contains_indicator() => Some(Key::Syntax(e.clone())),
            Err(_) => None,
        }
    }

    fn push(&mut self, e: Expr) {
        if let Some(k) = self.key(&e) {
            if self.seen.insert(k) {
                self.out.push(Feature::new(e, self.vars));
            }
        }
    }
}

fn by_class(base: &[Expr], vars: &Vars, class: FeatureClass) -> Vec<Expr> {
    base.iter().filter(|e| classify(e, vars) == class).cloned().collect()
}

fn upper_pairs(xs: &[Expr], diagonal: bool) -> Vec<(Expr, Expr)> {
    let mut out = Vec::new();
    for i in 0..xs.len() {
        for j in i..xs.len() {
            if i != j || diagonal {
                out.push((xs[i].clone(), xs[j].clone()));
            }
        }
    }
    out
}

fn cross(xs: &[Expr], ys: &[Expr]) -> Vec<(Expr, Expr)> {
    xs.iter().flat_map(|x| ys.iter().map(move |y| (x.clone(), y.clone()))).collect()
}

/// The linear and multiplicative feature lists for `prog` and the target
/// expectation `pexp`.
pub fn get_features(prog: &Program, pexp: &[Expr]) -> Result<(FeatureSet, FeatureSet), FeatureError> {
    let vars = &prog.vars;
    let mut base: Vec<Expr> = vars.state_ids().map(Expr::Var).collect();
    base.extend(prog.features.iter().cloned());
    let ps = by_class(&base, vars, FeatureClass::Prob);
    let ns = by_class(&base, vars, FeatureClass::Int);
    let bs = by_class(&base, vars, FeatureClass::Bool);
    let xs = by_class(&base, vars, FeatureClass::Real);
    let boolean: BTreeSet<VarId> =
        vars.state_ids().filter(|&v| vars.ty(v) == crate::ast::VarType::Bool).collect();

    let start = |vars| {
        let mut c = Collector { vars, boolean: boolean.clone(), seen: BTreeSet::new(), out: Vec::new() };
        c.push(prog.guard_indicator());
        for e in pexp {
            c.push(e.clone());
        }
        for e in &base {
            c.push(e.clone());
        }
        c
    };

    let mut lin = start(vars);
    let mut products = upper_pairs(&ps, true);
    products.extend(upper_pairs(&ns, true));
    products.extend(upper_pairs(&xs, true));
    products.extend(cross(&ns, &xs));
    products.extend(upper_pairs(&bs, true));
    for (a, b) in products {
        lin.push(Expr::mul(a, b));
    }

    let mut mul = start(vars);
    let one = Expr::one();
    for p in &ps {
        mul.push(Expr::add(one.clone(), p.clone()));
        mul.push(Expr::sub(one.clone(), p.clone()));
    }
    for (a, b) in upper_pairs(&ps, false) {
        mul.push(Expr::add(a.clone(), b.clone()));
        mul.push(Expr::sub(Expr::add(a.clone(), b.clone()), Expr::mul(a, b)));
    }
    let mut sums = upper_pairs(&ns, false);
    sums.extend(upper_pairs(&xs, false));
    sums.extend(cross(&ns, &xs));
    sums.extend(upper_pairs(&bs, false));
    for (a, b) in sums {
        mul.push(Expr::add(a.clone(), b.clone()));
        mul.push(Expr::sub(a.clone(), b.clone()));
        mul.push(Expr::sub(b, a));
    }

    let check = |kind, c: Collector| {
        if c.out.len() > FEATURE_CAP {
            Err(FeatureError::TooMany { kind, count: c.out.len(), cap: FEATURE_CAP })
        } else {
            Ok(FeatureSet { kind, features: c.out })
        }
    };
    Ok((check(FeatureKind::Linear, lin)?, check(FeatureKind::Multiplicative, mul)?))
}

/// Value of `e` as a rational constant, if it has no variables.
pub fn constant_value(e: &Expr) -> Option<BigRational> {
    plain_ratfn(e).ok().and_then(|f| if f.is_polynomial() { f.num.as_constant() } else { None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_expr, parse_program};

    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool;
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";

    #[test]
    fn geo0_lists() {
        let p = parse_program(GEO0).unwrap();
        let z = parse_expr("z", &p.vars).unwrap();
        let (fl, fm) = get_features(&p, &[z]).unwrap();
        let names = fl.names();
        for want in ["[flip == 0]", "z", "flip", "p1", "p1*p1", "z*z"] {
            assert!(names.iter().any(|n| n == want), "{} missing from {:?}", want, names);
        }
        assert!(!names.iter().any(|n| n == "flip*flip"));
        let mnames = fm.names();
        for want in ["1 - p1", "1 + p1"] {
            assert!(mnames.iter().any(|n| n == want), "{} missing from {:?}", want, mnames);
        }
        assert!(!names.iter().any(|n| n == "d"));
    }

    #[test]
    fn single_boolean() {
        let p = parse_program("var b : bool; while (b == 1) { b = 0; }").unwrap();
        let (fl, _) = get_features(&p, &[parse_expr("b", &p.vars).unwrap()]).unwrap();
        assert_eq!(fl.names(), ["[b == 1]", "b"]);
    }

    #[test]
    fn user_feature_in_both() {
        let p = parse_program("var x : bool; var y : int; var p : prob; feature 1/p; while (x == 0) { x ~ bernoulli(p); }").unwrap();
        let (fl, fm) = get_features(&p, &[parse_expr("y", &p.vars).unwrap()]).unwrap();
        assert!(fl.index_of("1/p").is_some());
        assert!(fm.index_of("1/p").is_some());
    }

    #[test]
    fn deterministic_and_evaluable() {
        let p = parse_program(GEO0).unwrap();
        let z = parse_expr("z", &p.vars).unwrap();
        let (a, _) = get_features(&p, &[z.clone()]).unwrap();
        let (b, _) = get_features(&p, &[z]).unwrap();
        assert_eq!(a.names(), b.names());
        let vals = a.eval(&State(alloc::vec![3.0, 0.0, 0.5, 0.0])).unwrap();
        assert_eq!(vals.len(), a.len());
    }
}
