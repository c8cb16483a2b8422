//! Exact linear arithmetic over the rationals.
//!
//! Feasibility is decided by Fourier–Motzkin elimination. Constraints over
//! integer variables only are tightened (`e < 0` becomes `e + 1 <= 0`, and
//! coefficients are divided by their gcd with the constant rounded), which is
//! sound for integer solutions and removes most spurious rational ones.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::ast::VarId;

/// Maximum number of constraints kept during elimination.
pub const FM_CAP: usize = 4000;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinExpr {
    pub coeffs: BTreeMap<VarId, BigRational>,
    pub constant: BigRational,
}

impl LinExpr {
    pub fn constant(c: BigRational) -> Self {
        LinExpr { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        let mut l = LinExpr::default();
        l.add_coeff(v, BigRational::one());
        l
    }

    pub fn add_coeff(&mut self, v: VarId, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let slot = self.coeffs.entry(v).or_insert_with(BigRational::zero);
        *slot += c;
        if slot.is_zero() {
            self.coeffs.remove(&v);
        }
    }

    pub fn coeff(&self, v: VarId) -> BigRational {
        self.coeffs.get(&v).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.constant += &other.constant;
        for (v, c) in &other.coeffs {
            out.add_coeff(*v, c.clone());
        }
        out
    }

    pub fn scale(&self, k: &BigRational) -> LinExpr {
        if k.is_zero() {
            return LinExpr::default();
        }
        LinExpr {
            coeffs: self.coeffs.iter().map(|(v, c)| (*v, c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn neg(&self) -> LinExpr {
        self.scale(&-BigRational::one())
    }

    pub fn substitute(&self, v: VarId, by: &LinExpr) -> LinExpr {
        match self.coeffs.get(&v) {
            None => self.clone(),
            Some(c) => {
                let mut rest = self.clone();
                rest.coeffs.remove(&v);
                rest.add(&by.scale(c))
            }
        }
    }

    pub fn eval(&self, env: &[BigRational]) -> BigRational {
        let mut acc = self.constant.clone();
        for (v, c) in &self.coeffs {
            acc += c * &env[v.index()];
        }
        acc
    }

    pub fn eval_f64(&self, env: &[f64]) -> f64 {
        let mut acc = crate::num::to_f64(&self.constant);
        for (v, c) in &self.coeffs {
            acc += crate::num::to_f64(c) * env[v.index()];
        }
        acc
    }

    /// Positive multiple with coprime integer coefficients and constant.
    pub fn primitive(&self) -> LinExpr {
        let mut lcm = BigInt::one();
        for c in self.coeffs.values().chain(core::iter::once(&self.constant)) {
            lcm = lcm.lcm(c.denom());
        }
        let mut gcd = BigInt::zero();
        for c in self.coeffs.values().chain(core::iter::once(&self.constant)) {
            gcd = gcd.gcd(&(c * BigRational::from_integer(lcm.clone())).to_integer());
        }
        if gcd.is_zero() {
            return self.clone();
        }
        self.scale(&BigRational::new(lcm, gcd.abs()))
    }
}

/// Relation of an expression to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Le,
    Lt,
    Eq,
}

/// `expr rel 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Constraint {
    pub expr: LinExpr,
    pub rel: Rel,
}

impl Constraint {
    pub fn new(expr: LinExpr, rel: Rel) -> Self {
        Constraint { expr, rel }
    }

    /// `lhs <= rhs`.
    pub fn le(lhs: LinExpr, rhs: LinExpr) -> Self {
        Constraint::new(lhs.add(&rhs.neg()), Rel::Le)
    }

    pub fn holds(&self, env: &[BigRational]) -> bool {
        let v = self.expr.eval(env);
        match self.rel {
            Rel::Le => !v.is_positive(),
            Rel::Lt => v.is_negative(),
            Rel::Eq => v.is_zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    /// Elimination exceeded [`FM_CAP`]; callers must treat this as feasible.
    Unknown,
}

/// Result of canonicalizing a single constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tight {
    Trivial,
    Contradiction,
    Keep(Constraint),
}

fn all_integral(e: &LinExpr, integral: &BTreeSet<VarId>) -> bool {
    e.coeffs.keys().all(|v| integral.contains(v))
}

fn ceil(r: &BigRational) -> BigRational {
    BigRational::from_integer(r.ceil().to_integer())
}

/// Canonical, tightened form of a constraint.
pub fn tighten(c: Constraint, integral: &BTreeSet<VarId>) -> Tight {
    if c.expr.is_constant() {
        let v = &c.expr.constant;
        let ok = match c.rel {
            Rel::Le => !v.is_positive(),
            Rel::Lt => v.is_negative(),
            Rel::Eq => v.is_zero(),
        };
        return if ok { Tight::Trivial } else { Tight::Contradiction };
    }
    let mut e = c.expr;
    let mut rel = c.rel;
    if all_integral(&e, integral) {
        let mut lin = LinExpr { coeffs: e.coeffs.clone(), constant: BigRational::zero() }.primitive();
        let scale = lin.coeffs.values().next().unwrap() / e.coeffs.values().next().unwrap();
        let k = &e.constant * &scale;
        match rel {
            Rel::Eq => {
                if !k.is_integer() {
                    return Tight::Contradiction;
                }
                lin.constant = k;
            }
            Rel::Le => lin.constant = ceil(&k),
            Rel::Lt => {
                lin.constant = if k.is_integer() { k + BigRational::one() } else { ceil(&k) };
                rel = Rel::Le;
            }
        }
        e = lin;
    } else {
        e = e.primitive();
    }
    if rel == Rel::Eq {
        if e.coeffs.values().next().map_or(false, |c| c.is_negative()) {
            e = e.neg();
        }
    }
    Tight::Keep(Constraint { expr: e, rel })
}

fn canonical_set(
    cs: impl IntoIterator<Item = Constraint>,
    integral: &BTreeSet<VarId>,
) -> Option<BTreeSet<Constraint>> {
    let mut out = BTreeSet::new();
    for c in cs {
        match tighten(c, integral) {
            Tight::Trivial => {}
            Tight::Contradiction => return None,
            Tight::Keep(k) => {
                out.insert(k);
            }
        }
    }
    Some(out)
}

/// Solves one equality for a variable, preferring non-integer variables.
fn pick_pivot(e: &LinExpr, integral: &BTreeSet<VarId>) -> VarId {
    e.coeffs.keys().copied().find(|v| !integral.contains(v)).unwrap_or_else(|| *e.coeffs.keys().next().unwrap())
}

fn solve_for(e: &LinExpr, v: VarId) -> LinExpr {
    let c = e.coeff(v);
    let mut rest = e.clone();
    rest.coeffs.remove(&v);
    rest.scale(&(-c.recip()))
}

/// Decides whether the conjunction has a solution (integer on `integral`).
pub fn is_feasible(constraints: &[Constraint], integral: &BTreeSet<VarId>) -> Feasibility {
    let mut set = match canonical_set(constraints.iter().cloned(), integral) {
        Some(s) => s,
        None => return Feasibility::Infeasible,
    };
    loop {
        if let Some(eq) = set.iter().find(|c| c.rel == Rel::Eq).cloned() {
            set.remove(&eq);
            let v = pick_pivot(&eq.expr, integral);
            let by = solve_for(&eq.expr, v);
            let next = set.iter().map(|c| Constraint::new(c.expr.substitute(v, &by), c.rel));
            set = match canonical_set(next.collect::<Vec<_>>(), integral) {
                Some(s) => s,
                None => return Feasibility::Infeasible,
            };
            continue;
        }
        let vars: BTreeSet<VarId> = set.iter().flat_map(|c| c.expr.coeffs.keys().copied()).collect();
        let best = vars.iter().copied().min_by_key(|v| {
            let pos = set.iter().filter(|c| c.expr.coeff(*v).is_positive()).count();
            let neg = set.iter().filter(|c| c.expr.coeff(*v).is_negative()).count();
            pos * neg
        });
        let v = match best {
            Some(v) => v,
            None => return Feasibility::Feasible,
        };
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for c in set.into_iter() {
            let k = c.expr.coeff(v);
            if k.is_positive() {
                pos.push(c);
            } else if k.is_negative() {
                neg.push(c);
            } else {
                rest.push(c);
            }
        }
        if pos.len() * neg.len() + rest.len() > FM_CAP {
            return Feasibility::Unknown;
        }
        for p in &pos {
            let kp = p.expr.coeff(v);
            for n in &neg {
                let kn = -n.expr.coeff(v);
                let combined = p.expr.scale(&kn).add(&n.expr.scale(&kp));
                let rel = if p.rel == Rel::Lt || n.rel == Rel::Lt { Rel::Lt } else { Rel::Le };
                rest.push(Constraint::new(combined, rel));
            }
        }
        set = match canonical_set(rest, integral) {
            Some(s) => s,
            None => return Feasibility::Infeasible,
        };
    }
}

/// True unless the conjunction is provably unsatisfiable.
pub fn maybe_feasible(constraints: &[Constraint], integral: &BTreeSet<VarId>) -> bool {
    is_feasible(constraints, integral) != Feasibility::Infeasible
}

/// Inequalities `e <= 0` of the system that can only hold with equality.
pub fn implied_equalities(constraints: &[Constraint], integral: &BTreeSet<VarId>) -> Vec<LinExpr> {
    let mut out: Vec<LinExpr> = constraints.iter().filter(|c| c.rel == Rel::Eq).map(|c| c.expr.clone()).collect();
    for (i, c) in constraints.iter().enumerate() {
        if c.rel != Rel::Le {
            continue;
        }
        let mut probe: Vec<Constraint> = constraints.to_vec();
        probe[i] = Constraint::new(c.expr.clone(), Rel::Lt);
        if is_feasible(&probe, integral) == Feasibility::Infeasible {
            out.push(c.expr.clone());
        }
    }
    out
}

/// Triangular solution of a set of equalities: each pair `(v, e)` states
/// `v = e`, and no `e` mentions a solved variable.
pub fn solve_equalities(eqs: &[LinExpr], integral: &BTreeSet<VarId>) -> Vec<(VarId, LinExpr)> {
    let mut solved: Vec<(VarId, LinExpr)> = Vec::new();
    for e in eqs {
        let mut e = e.clone();
        for (v, by) in &solved {
            e = e.substitute(*v, by);
        }
        if e.is_constant() {
            continue;
        }
        let v = pick_pivot(&e, integral);
        let by = solve_for(&e, v);
        for (_, prev) in solved.iter_mut() {
            *prev = prev.substitute(v, &by);
        }
        solved.push((v, by));
    }
    solved
}

/// Closed bounds on `v` implied by the constraints, when finite.
pub fn var_bounds(
    constraints: &[Constraint],
    v: VarId,
    integral: &BTreeSet<VarId>,
) -> (Option<BigRational>, Option<BigRational>) {
    let mut set: Vec<Constraint> = Vec::new();
    for c in constraints {
        if c.rel == Rel::Eq {
            set.push(Constraint::new(c.expr.clone(), Rel::Le));
            set.push(Constraint::new(c.expr.neg(), Rel::Le));
        } else {
            set.push(c.clone());
        }
    }
    let others: BTreeSet<VarId> =
        set.iter().flat_map(|c| c.expr.coeffs.keys().copied()).filter(|w| *w != v).collect();
    for w in others {
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for c in set.drain(..) {
            let k = c.expr.coeff(w);
            if k.is_positive() {
                pos.push(c);
            } else if k.is_negative() {
                neg.push(c);
            } else {
                rest.push(c);
            }
        }
        if pos.len() * neg.len() + rest.len() > FM_CAP {
            return (None, None);
        }
        for p in &pos {
            let kp = p.expr.coeff(w);
            for n in &neg {
                let kn = -n.expr.coeff(w);
                let rel = if p.rel == Rel::Lt || n.rel == Rel::Lt { Rel::Lt } else { Rel::Le };
                rest.push(Constraint::new(p.expr.scale(&kn).add(&n.expr.scale(&kp)), rel));
            }
        }
        set = match canonical_set(rest, integral) {
            Some(s) => s.into_iter().collect(),
            None => return (None, None),
        };
    }
    let (mut lo, mut hi): (Option<BigRational>, Option<BigRational>) = (None, None);
    for c in &set {
        let k = c.expr.coeff(v);
        if k.is_zero() {
            continue;
        }
        let bound = -&c.expr.constant / &k;
        let upper = k.is_positive();
        if c.rel == Rel::Eq || upper {
            hi = Some(hi.map_or(bound.clone(), |h: BigRational| h.min(bound.clone())));
        }
        if c.rel == Rel::Eq || !upper {
            lo = Some(lo.map_or(bound.clone(), |l: BigRational| l.max(bound)));
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64) -> BigRational {
        BigRational::from_integer(n.into())
    }

    fn lin(terms: &[(u32, i64)], c: i64) -> LinExpr {
        let mut l = LinExpr::constant(q(c));
        for &(v, k) in terms {
            l.add_coeff(VarId(v), q(k));
        }
        l
    }

    #[test]
    fn strict_integer_gap() {
        let ints: BTreeSet<VarId> = [VarId(0)].into_iter().collect();
        // 0 < x < 1
        let cs = [Constraint::new(lin(&[(0, -1)], 0), Rel::Lt), Constraint::new(lin(&[(0, 1)], -1), Rel::Lt)];
        assert_eq!(is_feasible(&cs, &ints), Feasibility::Infeasible);
        assert_eq!(is_feasible(&cs, &BTreeSet::new()), Feasibility::Feasible);
    }

    #[test]
    fn chained_bounds() {
        let none = BTreeSet::new();
        // x <= y, y <= z, z < x
        let cs = [
            Constraint::new(lin(&[(0, 1), (1, -1)], 0), Rel::Le),
            Constraint::new(lin(&[(1, 1), (2, -1)], 0), Rel::Le),
            Constraint::new(lin(&[(2, 1), (0, -1)], 0), Rel::Lt),
        ];
        assert_eq!(is_feasible(&cs, &none), Feasibility::Infeasible);
        let eqs = implied_equalities(&cs[..2], &none);
        assert!(eqs.is_empty());
        let mut closed = cs.to_vec();
        closed[2].rel = Rel::Le;
        assert_eq!(implied_equalities(&closed, &none).len(), 3);
    }

    #[test]
    fn equality_parity() {
        let ints: BTreeSet<VarId> = [VarId(0), VarId(1)].into_iter().collect();
        let cs = [Constraint::new(lin(&[(0, 2), (1, 4)], -3), Rel::Eq)];
        assert_eq!(is_feasible(&cs, &ints), Feasibility::Infeasible);
    }

    #[test]
    fn bounds_projection() {
        let none = BTreeSet::new();
        // 0 <= x <= y <= 5
        let cs = [
            Constraint::new(lin(&[(0, -1)], 0), Rel::Le),
            Constraint::new(lin(&[(0, 1), (1, -1)], 0), Rel::Le),
            Constraint::new(lin(&[(1, 1)], -5), Rel::Le),
        ];
        assert_eq!(var_bounds(&cs, VarId(0), &none), (Some(q(0)), Some(q(5))));
        let sol = solve_equalities(&[lin(&[(0, 1), (1, -2)], 1)], &none);
        assert_eq!(sol.len(), 1);
    }

    proptest! {
        // A system satisfied by a known rational point is never reported infeasible.
        #[test]
        fn witnessed_systems_are_feasible(
            point in proptest::collection::vec(-5i64..6, 3),
            rows in proptest::collection::vec((proptest::collection::vec(-3i64..4, 3), 0i64..4, 0u8..3), 1..7),
        ) {
            let env: Vec<BigRational> = point.iter().map(|&x| q(x)).collect();
            let ints: BTreeSet<VarId> = (0..3).map(VarId).collect();
            let cs: Vec<Constraint> = rows.iter().map(|(coef, slack, kind)| {
                let terms: Vec<(u32, i64)> = coef.iter().enumerate().map(|(i, &k)| (i as u32, k)).collect();
                let mut e = lin(&terms, 0);
                let val = e.eval(&env);
                let rel = match kind { 0 => Rel::Le, 1 => Rel::Lt, _ => Rel::Eq };
                let shift = match rel { Rel::Eq => val.clone(), Rel::Lt => val.clone() + q(*slack + 1), Rel::Le => val.clone() + q(*slack) };
                e.constant = -shift;
                Constraint::new(e, rel)
            }).collect();
            for c in &cs { prop_assert!(c.holds(&env)); }
            prop_assert_ne!(is_feasible(&cs, &ints), Feasibility::Infeasible);
        }
    }
}
