//! Abstract syntax of single-loop probabilistic programs and expectations.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::num::exact_ratio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Bool,
    Int,
    Prob,
    Real,
}

impl VarType {
    pub fn is_integral(self) -> bool {
        matches!(self, VarType::Bool | VarType::Int)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            VarType::Bool => "bool",
            VarType::Int => "int",
            VarType::Prob => "prob",
            VarType::Real => "real",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub ty: VarType,
    /// Body temporaries. They are not part of the loop state.
    pub local: bool,
}

/// Variable table. State variables come first, locals after them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vars {
    decls: Vec<VarDecl>,
    n_state: usize,
}

impl Vars {
    pub fn new(decls: Vec<VarDecl>) -> Self {
        let (mut state, locals): (Vec<_>, Vec<_>) = decls.into_iter().partition(|d| !d.local);
        let n_state = state.len();
        state.extend(locals);
        Vars { decls: state, n_state }
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.n_state
    }

    pub fn decl(&self, id: VarId) -> &VarDecl {
        &self.decls[id.index()]
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.decls[id.index()].name
    }

    pub fn ty(&self, id: VarId) -> VarType {
        self.decls[id.index()].ty
    }

    pub fn lookup(&self, name: &str) -> Option<VarId> {
        self.decls.iter().position(|d| d.name == name).map(|i| VarId(i as u32))
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.decls.len()).map(|i| VarId(i as u32))
    }

    pub fn state_ids(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.n_state).map(|i| VarId(i as u32))
    }

    pub fn decls(&self) -> &[VarDecl] {
        &self.decls
    }

    pub fn integral_set(&self) -> BTreeSet<VarId> {
        self.ids().filter(|&v| self.ty(v).is_integral()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    pub fn holds<T: PartialOrd>(self, a: &T, b: &T) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Arithmetic expression. Doubles as the expectation language: indicators
/// `[b]` turn boolean expressions into 0/1 values.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Const(BigRational),
    Var(VarId),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Ind(Box<BoolExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoolExpr {
    Const(bool),
    Cmp(CmpOp, Expr, Expr),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Dist {
    Bernoulli(Expr),
    /// Finite support: value and weight expression per outcome.
    Discrete(Vec<(BigRational, Expr)>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cmd {
    Skip,
    Assign(VarId, Expr),
    Sample(VarId, Dist),
    Seq(Vec<Cmd>),
    If(BoolExpr, Box<Cmd>, Box<Cmd>),
}

/// `while guard { body }` together with its variable table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub vars: Vars,
    pub guard: BoolExpr,
    pub body: Cmd,
    /// Extra features supplied with the program text.
    pub features: Vec<Expr>,
}

/// Values of the state variables, indexed by [`VarId`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn get(&self, v: VarId) -> f64 {
        self.0[v.index()]
    }

    /// Exact rational image of every entry.
    pub fn to_rationals(&self) -> Vec<BigRational> {
        self.0.iter().map(|&x| exact_ratio(x).unwrap_or_else(BigRational::zero)).collect()
    }
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Const(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn ratio(n: i64, d: i64) -> Expr {
        Expr::Const(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn zero() -> Expr {
        Expr::Const(BigRational::zero())
    }

    pub fn one() -> Expr {
        Expr::Const(BigRational::one())
    }

    pub fn var(v: VarId) -> Expr {
        Expr::Var(v)
    }

    pub fn as_const(&self) -> Option<&BigRational> {
        match self {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero_const(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_zero())
    }

    pub fn is_one_const(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_one())
    }

    pub fn ind(b: BoolExpr) -> Expr {
        match b {
            BoolExpr::Const(true) => Expr::one(),
            BoolExpr::Const(false) => Expr::zero(),
            b => Expr::Ind(Box::new(b)),
        }
    }

    /// `a + b` with constant folding.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (a, b) if b.is_zero_const() => a,
            (a, b) if a.is_zero_const() => b,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    /// `a - b` with constant folding.
    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (a, b) if b.is_zero_const() => a,
            (a, b) if a.is_zero_const() => Expr::neg(b),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    /// `a * b`; a zero factor absorbs the other side.
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (a, b) if a.is_zero_const() || b.is_zero_const() => Expr::zero(),
            (a, b) if a.is_one_const() => b,
            (a, b) if b.is_one_const() => a,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if !y.is_zero() => Expr::Const(x / y),
            (a, _) if a.is_zero_const() => Expr::zero(),
            (a, b) if b.is_one_const() => a,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn pow(a: Expr, k: i32) -> Expr {
        match (a, k) {
            (_, 0) => Expr::one(),
            (a, 1) => a,
            (Expr::Const(x), k) if k > 0 || !x.is_zero() => {
                let r = num_traits::pow(x.clone(), k.unsigned_abs() as usize);
                Expr::Const(if k < 0 { r.recip() } else { r })
            }
            (a, k) => Expr::Pow(Box::new(a), k),
        }
    }

    /// Sum of terms, left-nested; the empty sum is 0.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Replaces every occurrence of `v` by `by`, folding constants.
    pub fn substitute(&self, v: VarId, by: &Expr) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(w) => {
                if *w == v {
                    by.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Neg(a) => Expr::neg(a.substitute(v, by)),
            Expr::Add(a, b) => Expr::add(a.substitute(v, by), b.substitute(v, by)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(v, by), b.substitute(v, by)),
            Expr::Mul(a, b) => {
                let a = a.substitute(v, by);
                if a.is_zero_const() {
                    return a;
                }
                Expr::mul(a, b.substitute(v, by))
            }
            Expr::Div(a, b) => Expr::div(a.substitute(v, by), b.substitute(v, by)),
            Expr::Pow(a, k) => Expr::pow(a.substitute(v, by), *k),
            Expr::Ind(b) => Expr::ind(b.substitute(v, by)),
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Ind(b) => b.collect_vars(out),
        }
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn contains_indicator(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) => a.contains_indicator(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_indicator() || b.contains_indicator()
            }
            Expr::Ind(_) => true,
        }
    }

    /// First indicator subterm in left-to-right order.
    pub fn first_indicator(&self) -> Option<&BoolExpr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Neg(a) | Expr::Pow(a, _) => a.first_indicator(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.first_indicator().or_else(|| b.first_indicator())
            }
            Expr::Ind(b) => Some(b),
        }
    }

    /// Replaces each indicator equal to `target` by the constant `value`.
    pub fn replace_indicator(&self, target: &BoolExpr, value: bool) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::neg(a.replace_indicator(target, value)),
            Expr::Pow(a, k) => Expr::pow(a.replace_indicator(target, value), *k),
            Expr::Add(a, b) => Expr::add(a.replace_indicator(target, value), b.replace_indicator(target, value)),
            Expr::Sub(a, b) => Expr::sub(a.replace_indicator(target, value), b.replace_indicator(target, value)),
            Expr::Mul(a, b) => Expr::mul(a.replace_indicator(target, value), b.replace_indicator(target, value)),
            Expr::Div(a, b) => Expr::div(a.replace_indicator(target, value), b.replace_indicator(target, value)),
            Expr::Ind(b) => {
                if **b == *target {
                    if value {
                        Expr::one()
                    } else {
                        Expr::zero()
                    }
                } else {
                    self.clone()
                }
            }
        }
    }

    /// Applies `f` to every rational constant outside indicators.
    pub fn map_constants(&self, f: &mut dyn FnMut(&BigRational) -> BigRational) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(f(c)),
            Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.map_constants(f))),
            Expr::Pow(a, k) => Expr::Pow(Box::new(a.map_constants(f)), *k),
            Expr::Add(a, b) => Expr::Add(Box::new(a.map_constants(f)), Box::new(b.map_constants(f))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.map_constants(f)), Box::new(b.map_constants(f))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.map_constants(f)), Box::new(b.map_constants(f))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.map_constants(f)), Box::new(b.map_constants(f))),
            Expr::Ind(b) => Expr::Ind(b.clone()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => 1 + a.size() + b.size(),
            Expr::Ind(b) => 1 + b.size(),
        }
    }
}

impl BoolExpr {
    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> BoolExpr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => BoolExpr::Const(op.holds(x, y)),
            _ => BoolExpr::Cmp(op, a, b),
        }
    }

    pub fn not(b: BoolExpr) -> BoolExpr {
        match b {
            BoolExpr::Const(v) => BoolExpr::Const(!v),
            BoolExpr::Not(inner) => *inner,
            b => BoolExpr::Not(Box::new(b)),
        }
    }

    pub fn and(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        match (a, b) {
            (BoolExpr::Const(false), _) | (_, BoolExpr::Const(false)) => BoolExpr::Const(false),
            (BoolExpr::Const(true), b) => b,
            (a, BoolExpr::Const(true)) => a,
            (a, b) => BoolExpr::And(Box::new(a), Box::new(b)),
        }
    }

    pub fn or(a: BoolExpr, b: BoolExpr) -> BoolExpr {
        match (a, b) {
            (BoolExpr::Const(true), _) | (_, BoolExpr::Const(true)) => BoolExpr::Const(true),
            (BoolExpr::Const(false), b) => b,
            (a, BoolExpr::Const(false)) => a,
            (a, b) => BoolExpr::Or(Box::new(a), Box::new(b)),
        }
    }

    pub fn substitute(&self, v: VarId, by: &Expr) -> BoolExpr {
        match self {
            BoolExpr::Const(_) => self.clone(),
            BoolExpr::Cmp(op, a, b) => BoolExpr::cmp(*op, a.substitute(v, by), b.substitute(v, by)),
            BoolExpr::Not(a) => BoolExpr::not(a.substitute(v, by)),
            BoolExpr::And(a, b) => BoolExpr::and(a.substitute(v, by), b.substitute(v, by)),
            BoolExpr::Or(a, b) => BoolExpr::or(a.substitute(v, by), b.substitute(v, by)),
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Cmp(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            BoolExpr::Not(a) => a.collect_vars(out),
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            BoolExpr::Const(_) => 1,
            BoolExpr::Cmp(_, a, b) => 1 + a.size() + b.size(),
            BoolExpr::Not(a) => 1 + a.size(),
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl Cmd {
    pub fn assigned_vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Cmd::Skip => {}
            Cmd::Assign(v, _) | Cmd::Sample(v, _) => {
                out.insert(*v);
            }
            Cmd::Seq(cs) => cs.iter().for_each(|c| c.assigned_vars(out)),
            Cmd::If(_, a, b) => {
                a.assigned_vars(out);
                b.assigned_vars(out);
            }
        }
    }
}

impl Program {
    /// `[G]` as an expectation.
    pub fn guard_indicator(&self) -> Expr {
        Expr::ind(self.guard.clone())
    }

    pub fn state_len(&self) -> usize {
        self.vars.state_len()
    }

    pub fn state_from_pairs(&self, pairs: &[(&str, f64)]) -> Option<State> {
        let mut values = alloc::vec![0.0; self.vars.state_len()];
        for (name, value) in pairs {
            let id = self.vars.lookup(name)?;
            if id.index() >= values.len() {
                return None;
            }
            values[id.index()] = *value;
        }
        Some(State(values))
    }
}

/// Whether every value of `e` is an integer when integral variables are.
pub fn is_integral_expr(e: &Expr, vars: &Vars) -> bool {
    match e {
        Expr::Const(c) => c.is_integer(),
        Expr::Var(v) => vars.ty(*v).is_integral(),
        Expr::Neg(a) => is_integral_expr(a, vars),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => is_integral_expr(a, vars) && is_integral_expr(b, vars),
        Expr::Div(..) => false,
        Expr::Pow(a, k) => *k >= 0 && is_integral_expr(a, vars),
        Expr::Ind(_) => true,
    }
}

/// Whether `e` only takes the values 0 and 1.
pub fn is_boolean_expr(e: &Expr, vars: &Vars) -> bool {
    match e {
        Expr::Const(c) => c.is_zero() || c.is_one(),
        Expr::Var(v) => vars.ty(*v) == VarType::Bool,
        Expr::Ind(_) => true,
        Expr::Mul(a, b) => is_boolean_expr(a, vars) && is_boolean_expr(b, vars),
        _ => false,
    }
}

/// Whether `e` is guaranteed to lie in [0, 1].
pub fn is_probability_expr(e: &Expr, vars: &Vars) -> bool {
    match e {
        Expr::Const(c) => !c.is_negative() && *c <= BigRational::one(),
        Expr::Var(v) => matches!(vars.ty(*v), VarType::Prob | VarType::Bool),
        Expr::Ind(_) => true,
        Expr::Mul(a, b) => is_probability_expr(a, vars) && is_probability_expr(b, vars),
        Expr::Sub(a, b) => a.is_one_const() && is_probability_expr(b, vars),
        Expr::Pow(a, k) => *k >= 0 && is_probability_expr(a, vars),
        _ => false,
    }
}
