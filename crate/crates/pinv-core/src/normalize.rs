//! Canonical piecewise-rational form of an expectation.
//!
//! Every comparison inside an indicator becomes an atom `e rel 0`. Linear
//! atoms are canonicalized (primitive integer coefficients, integer
//! tightening) so syntactically different but equivalent tests coincide.
//! Regions are enumerated depth-first over atom truth values; a false
//! equality splits into the two open half-spaces so every region is a convex
//! cell. Cells proven empty by Fourier–Motzkin are dropped. In each surviving
//! cell the expectation is a single rational function.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::ast::{BoolExpr, CmpOp, Expr, VarId, VarType, Vars};
use crate::linear::{implied_equalities, maybe_feasible, solve_equalities, tighten, Constraint, LinExpr, Rel, Tight};
use crate::poly::{expr_to_ratfn, plain_ratfn, Poly, RatFn, RatFnError};

pub const ATOM_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("{atoms} atomic predicates exceed the cap of {cap}")]
    RegionExplosion { atoms: usize, cap: usize },
    #[error("division by an expression that vanishes identically in a reachable region")]
    Undefined,
}

/// `value rel 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    Linear(Constraint),
    Opaque { value: RatFn, rel: Rel },
}

impl Atom {
    pub fn holds(&self, env: &[BigRational]) -> Option<bool> {
        match self {
            Atom::Linear(c) => Some(c.holds(env)),
            Atom::Opaque { value, rel } => {
                let v = value.eval(env)?;
                Some(match rel {
                    Rel::Le => !v.is_positive(),
                    Rel::Lt => v.is_negative(),
                    Rel::Eq => v.is_zero(),
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Formula {
    Const(bool),
    Atom(usize),
    Not(alloc::boxed::Box<Formula>),
    And(alloc::boxed::Box<Formula>, alloc::boxed::Box<Formula>),
    Or(alloc::boxed::Box<Formula>, alloc::boxed::Box<Formula>),
}

impl Formula {
    /// Three-valued evaluation under a partial assignment.
    pub fn eval(&self, assign: &[Option<bool>]) -> Option<bool> {
        match self {
            Formula::Const(b) => Some(*b),
            Formula::Atom(i) => assign[*i],
            Formula::Not(a) => a.eval(assign).map(|b| !b),
            Formula::And(a, b) => match (a.eval(assign), b.eval(assign)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            Formula::Or(a, b) => match (a.eval(assign), b.eval(assign)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
        }
    }
}

/// A convex cell of the state space with a fixed truth value per atom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub assignment: Vec<bool>,
    pub cell: Vec<Constraint>,
    pub value: RatFn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardedRationalForm {
    pub atoms: Vec<Atom>,
    pub regions: Vec<Region>,
    pub integral: BTreeSet<VarId>,
    pub boolean: BTreeSet<VarId>,
}

/// Linear constraints implied by the variable types alone.
pub fn type_constraints(vars: &Vars, used: &BTreeSet<VarId>) -> Vec<Constraint> {
    let mut out = Vec::new();
    for &v in used {
        if matches!(vars.ty(v), VarType::Bool | VarType::Prob) {
            out.push(Constraint::new(LinExpr::var(v).neg(), Rel::Le));
            out.push(Constraint::new(LinExpr::var(v).add(&LinExpr::constant(-BigRational::one())), Rel::Le));
        }
    }
    out
}

struct Builder {
    integral: BTreeSet<VarId>,
    atoms: Vec<Atom>,
    index: BTreeMap<Atom, usize>,
    formulas: BTreeMap<BoolExpr, Formula>,
}

impl Builder {
    fn atom(&mut self, a: Atom) -> Formula {
        if let Some(&i) = self.index.get(&a) {
            return Formula::Atom(i);
        }
        let i = self.atoms.len();
        self.atoms.push(a.clone());
        self.index.insert(a, i);
        Formula::Atom(i)
    }

    fn comparison(&mut self, op: CmpOp, a: &Expr, b: &Expr) -> Result<Formula, NormalizeError> {
        let d = plain_ratfn(&Expr::sub(a.clone(), b.clone())).map_err(|_| NormalizeError::Undefined)?;
        let (value, rel, negate) = match op {
            CmpOp::Lt => (d, Rel::Lt, false),
            CmpOp::Le => (d, Rel::Le, false),
            CmpOp::Gt => (d.neg(), Rel::Lt, false),
            CmpOp::Ge => (d.neg(), Rel::Le, false),
            CmpOp::Eq => (d, Rel::Eq, false),
            CmpOp::Ne => (d, Rel::Eq, true),
        };
        let f = match value.is_polynomial().then(|| value.num.to_linear()).flatten() {
            Some(lin) => match tighten(Constraint::new(lin, rel), &self.integral) {
                Tight::Trivial => Formula::Const(true),
                Tight::Contradiction => Formula::Const(false),
                Tight::Keep(c) => self.atom(Atom::Linear(c)),
            },
            None => self.atom(Atom::Opaque { value, rel }),
        };
        Ok(if negate { Formula::Not(alloc::boxed::Box::new(f)) } else { f })
    }

    fn formula(&mut self, b: &BoolExpr) -> Result<Formula, NormalizeError> {
        if let Some(f) = self.formulas.get(b) {
            return Ok(f.clone());
        }
        let f = match b {
            BoolExpr::Const(v) => Formula::Const(*v),
            BoolExpr::Not(a) => Formula::Not(alloc::boxed::Box::new(self.formula(a)?)),
            BoolExpr::And(a, c) => {
                Formula::And(alloc::boxed::Box::new(self.formula(a)?), alloc::boxed::Box::new(self.formula(c)?))
            }
            BoolExpr::Or(a, c) => {
                Formula::Or(alloc::boxed::Box::new(self.formula(a)?), alloc::boxed::Box::new(self.formula(c)?))
            }
            BoolExpr::Cmp(op, x, y) => {
                let inner = x.first_indicator().or_else(|| y.first_indicator()).cloned();
                match inner {
                    None => self.comparison(*op, x, y)?,
                    Some(ind) => {
                        let cond = self.formula(&ind)?;
                        let on = BoolExpr::Cmp(*op, x.replace_indicator(&ind, true), y.replace_indicator(&ind, true));
                        let off = BoolExpr::Cmp(*op, x.replace_indicator(&ind, false), y.replace_indicator(&ind, false));
                        let on = self.formula(&on)?;
                        let off = self.formula(&off)?;
                        Formula::Or(
                            alloc::boxed::Box::new(Formula::And(alloc::boxed::Box::new(cond.clone()), alloc::boxed::Box::new(on))),
                            alloc::boxed::Box::new(Formula::And(
                                alloc::boxed::Box::new(Formula::Not(alloc::boxed::Box::new(cond))),
                                alloc::boxed::Box::new(off),
                            )),
                        )
                    }
                }
            }
        };
        self.formulas.insert(b.clone(), f.clone());
        Ok(f)
    }

    fn collect(&mut self, e: &Expr) -> Result<(), NormalizeError> {
        match e {
            Expr::Const(_) | Expr::Var(_) => Ok(()),
            Expr::Neg(a) | Expr::Pow(a, _) => self.collect(a),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                self.collect(a)?;
                self.collect(b)
            }
            Expr::Ind(b) => self.formula(b).map(|_| ()),
        }
    }
}

fn atom_constraints(atom: &Atom, value: bool) -> Vec<Vec<Constraint>> {
    match atom {
        Atom::Opaque { .. } => alloc::vec![Vec::new()],
        Atom::Linear(c) => match (c.rel, value) {
            (_, true) => alloc::vec![alloc::vec![c.clone()]],
            (Rel::Le, false) => alloc::vec![alloc::vec![Constraint::new(c.expr.neg(), Rel::Lt)]],
            (Rel::Lt, false) => alloc::vec![alloc::vec![Constraint::new(c.expr.neg(), Rel::Le)]],
            (Rel::Eq, false) => alloc::vec![
                alloc::vec![Constraint::new(c.expr.clone(), Rel::Lt)],
                alloc::vec![Constraint::new(c.expr.neg(), Rel::Lt)],
            ],
        },
    }
}

/// Piecewise-rational normal form of `e` over the variables of `vars`.
pub fn normalize(e: &Expr, vars: &Vars) -> Result<GuardedRationalForm, NormalizeError> {
    normalize_with(e, vars, &[])
}

/// As [`normalize`], restricted to states satisfying `extra`.
pub fn normalize_with(e: &Expr, vars: &Vars, extra: &[Constraint]) -> Result<GuardedRationalForm, NormalizeError> {
    let integral = vars.integral_set();
    let boolean: BTreeSet<VarId> = vars.ids().filter(|&v| vars.ty(v) == VarType::Bool).collect();
    let mut b = Builder { integral: integral.clone(), atoms: Vec::new(), index: BTreeMap::new(), formulas: BTreeMap::new() };
    b.collect(e)?;
    if b.atoms.len() > ATOM_CAP {
        return Err(NormalizeError::RegionExplosion { atoms: b.atoms.len(), cap: ATOM_CAP });
    }
    let mut used = e.vars();
    for a in &b.atoms {
        match a {
            Atom::Linear(c) => used.extend(c.expr.coeffs.keys().copied()),
            Atom::Opaque { value, .. } => used.extend(value.vars()),
        }
    }
    let mut base = type_constraints(vars, &used);
    base.extend_from_slice(extra);
    let mut form = GuardedRationalForm { atoms: b.atoms, regions: Vec::new(), integral, boolean };
    if !maybe_feasible(&base, &form.integral) {
        return Ok(form);
    }
    let formulas = b.formulas;
    let mut assign: Vec<Option<bool>> = alloc::vec![None; form.atoms.len()];
    let mut regions = Vec::new();
    enumerate(&form, &formulas, e, 0, &mut assign, &mut base, &mut regions)?;
    form.regions = regions;
    Ok(form)
}

fn enumerate(
    form: &GuardedRationalForm,
    formulas: &BTreeMap<BoolExpr, Formula>,
    e: &Expr,
    depth: usize,
    assign: &mut Vec<Option<bool>>,
    cell: &mut Vec<Constraint>,
    out: &mut Vec<Region>,
) -> Result<(), NormalizeError> {
    if depth == form.atoms.len() {
        let value = expr_to_ratfn(e, &mut |b| formulas.get(b).and_then(|f| f.eval(assign)));
        let value = match value {
            Ok(v) => v,
            Err(RatFnError::ZeroDivisor) => return Err(NormalizeError::Undefined),
            Err(RatFnError::UnresolvedIndicator) => return Err(NormalizeError::Undefined),
        };
        out.push(Region { assignment: assign.iter().map(|a| a.unwrap_or(false)).collect(), cell: cell.clone(), value });
        return Ok(());
    }
    for truth in [true, false] {
        for pieces in atom_constraints(&form.atoms[depth], truth) {
            let mark = cell.len();
            cell.extend(pieces);
            if cell.len() == mark || maybe_feasible(cell, &form.integral) {
                assign[depth] = Some(truth);
                enumerate(form, formulas, e, depth + 1, assign, cell, out)?;
                assign[depth] = None;
            }
            cell.truncate(mark);
        }
    }
    Ok(())
}

impl Region {
    pub fn contains(&self, atoms: &[Atom], env: &[BigRational]) -> bool {
        atoms.iter().zip(&self.assignment).all(|(a, &t)| a.holds(env) == Some(t)) && self.cell.iter().all(|c| c.holds(env))
    }

    /// Numerator after eliminating the equalities implied by the cell and
    /// applying `b^k = b` for boolean variables.
    pub fn reduced_numerator(&self, integral: &BTreeSet<VarId>, boolean: &BTreeSet<VarId>) -> Poly {
        let mut num = self.value.num.clone();
        for (v, by) in solve_equalities(&implied_equalities(&self.cell, integral), integral) {
            num = num.substitute(v, &Poly::from_linear(&by));
        }
        num.reduce_idempotent(boolean)
    }
}

impl GuardedRationalForm {
    pub fn region_at(&self, env: &[BigRational]) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(&self.atoms, env))
    }

    /// Value at a state, `None` if the state is in no region or a
    /// denominator vanishes there.
    pub fn eval_at(&self, env: &[BigRational]) -> Option<BigRational> {
        self.region_at(env)?.value.eval(env)
    }

    pub fn eval_f64(&self, state: &[f64]) -> Option<f64> {
        let env: Vec<BigRational> = state.iter().map(|&x| BigRational::from_float(x)).collect::<Option<_>>()?;
        self.eval_at(&env).map(|v| crate::num::to_f64(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::eval_expr;
    use crate::parse::{parse_expr, parse_program};
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn prog() -> crate::ast::Program {
        parse_program("var x : bool; var n, b, rounds : int; var p : prob; while (x == 0) { skip }").unwrap()
    }

    #[test]
    fn guarded_cancellation() {
        let p = prog();
        let e = parse_expr("[x == 0]*(n + 1/p) - [x == 0]*n", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.regions.len(), 2);
        let zero_region = g.regions.iter().find(|r| !r.assignment[0]).unwrap();
        assert!(zero_region.value.is_zero());
        let one = g.regions.iter().find(|r| r.assignment[0]).unwrap();
        assert_eq!(one.value, plain_ratfn(&parse_expr("1/p", &p.vars).unwrap()).unwrap());
    }

    #[test]
    fn wpe_difference_vanishes() {
        let p = prog();
        let e = parse_expr("n + 1/p - (p*(n + 1) + (1 - p)*(n + 1 + 1/p))", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        assert_eq!(g.regions.len(), 1);
        assert!(g.regions[0].value.is_zero());
    }

    #[test]
    fn mart_regions() {
        let p = prog();
        let e = parse_expr("[b > 0]*(1/p) + rounds", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        assert_eq!(g.regions.len(), 2);
        let mut values: Vec<RatFn> = g.regions.iter().map(|r| r.value.clone()).collect();
        values.sort();
        let mut expect = alloc::vec![
            plain_ratfn(&parse_expr("1/p + rounds", &p.vars).unwrap()).unwrap(),
            plain_ratfn(&parse_expr("rounds", &p.vars).unwrap()).unwrap(),
        ];
        expect.sort();
        assert_eq!(values, expect);
    }

    #[test]
    fn equivalent_atoms_merge_and_empty_cells_drop() {
        let p = prog();
        let e = parse_expr("[n > 0]*n + [n >= 1]*2 + [0 < n and n < 1]*7", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        assert_eq!(g.atoms.len(), 2);
        for r in &g.regions {
            let env = [q(0, 1), q(3, 1), q(0, 1), q(0, 1), q(1, 2)];
            if r.contains(&g.atoms, &env) {
                assert_eq!(r.value.eval(&env).unwrap(), q(5, 1));
            }
        }
        assert!(g.regions.iter().all(|r| r.value.eval(&[q(0, 1), q(1, 1), q(0, 1), q(0, 1), q(1, 2)]) != Some(q(10, 1))));
    }

    #[test]
    fn implied_equality_pins_boolean() {
        let p = prog();
        let e = parse_expr("[x != 0]*(x - 1) + [x == 0]*x", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        for r in &g.regions {
            assert!(r.reduced_numerator(&g.integral, &g.boolean).is_zero());
        }
    }

    #[test]
    fn atom_cap() {
        let p = prog();
        let text: Vec<alloc::string::String> = (0..13).map(|k| alloc::format!("[n > {}]", k)).collect();
        let e = parse_expr(&text.join(" + "), &p.vars).unwrap();
        assert_eq!(normalize(&e, &p.vars), Err(NormalizeError::RegionExplosion { atoms: 13, cap: ATOM_CAP }));
    }

    #[test]
    fn indicator_inside_comparison() {
        let p = prog();
        let e = parse_expr("[n + [x == 0] > 2]*p", &p.vars).unwrap();
        let g = normalize(&e, &p.vars).unwrap();
        for (x, n, want) in [(0, 2, q(1, 3)), (1, 2, q(0, 1)), (1, 3, q(1, 3))] {
            let env = [q(x, 1), q(n, 1), q(0, 1), q(0, 1), q(1, 3)];
            assert_eq!(g.eval_at(&env), Some(want));
        }
    }

    proptest! {
        #[test]
        fn agrees_with_eval(x in 0i64..2, n in -4i64..8, b in -3i64..4, r in 0i64..5, pn in 1i64..10) {
            let p = prog();
            let e = parse_expr("[x != 0]*n + [x == 0]*(n + 1/p) + [b > 0 and n <= b]*(n*b - rounds/p) - [n == b]*p^2", &p.vars).unwrap();
            let g = normalize(&e, &p.vars).unwrap();
            let env = [q(x, 1), q(n, 1), q(b, 1), q(r, 1), q(pn, 10)];
            prop_assert_eq!(g.eval_at(&env), Some(eval_expr(&e, &env).unwrap()));
        }
    }
}
