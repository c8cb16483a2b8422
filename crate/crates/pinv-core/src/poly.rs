//! Sparse multivariate polynomials and rational functions over the rationals.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::ast::{BoolExpr, Expr, VarId};

use crate::linear::LinExpr;

/// Power product with strictly positive exponents, sorted by variable.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(VarId, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: VarId) -> Self {
        Monomial(alloc::vec![(v, 1)])
    }

    pub fn from_pairs(mut pairs: Vec<(VarId, u32)>) -> Self {
        pairs.retain(|&(_, e)| e > 0);
        pairs.sort();
        let mut out: Vec<(VarId, u32)> = Vec::with_capacity(pairs.len());
        for (v, e) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += e,
                _ => out.push((v, e)),
            }
        }
        Monomial(out)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(VarId, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent(&self, v: VarId) -> u32 {
        self.0.iter().find(|&&(w, _)| w == v).map_or(0, |&(_, e)| e)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() || j < other.0.len() {
            match (self.0.get(i), other.0.get(j)) {
                (Some(&(a, ea)), Some(&(b, eb))) if a == b => {
                    out.push((a, ea + eb));
                    i += 1;
                    j += 1;
                }
                (Some(&(a, ea)), Some(&(b, _))) if a < b => {
                    out.push((a, ea));
                    i += 1;
                }
                (Some(_), Some(&(b, eb))) => {
                    out.push((b, eb));
                    j += 1;
                }
                (Some(&x), None) => {
                    out.push(x);
                    i += 1;
                }
                (None, Some(&y)) => {
                    out.push(y);
                    j += 1;
                }
                (None, None) => break,
            }
        }
        Monomial(out)
    }

    pub fn gcd(&self, other: &Monomial) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter_map(|&(v, e)| {
                    let f = other.exponent(v);
                    (f > 0).then_some((v, e.min(f)))
                })
                .collect(),
        )
    }

    /// `self / other`, assuming `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter_map(|&(v, e)| {
                    let r = e - other.exponent(v);
                    (r > 0).then_some((v, r))
                })
                .collect(),
        )
    }

    pub fn without(&self, v: VarId) -> Monomial {
        Monomial(self.0.iter().copied().filter(|&(w, _)| w != v).collect())
    }

    pub fn eval<S: crate::eval::Scalar>(&self, env: &[S]) -> S {
        let mut acc = S::one();
        for &(v, e) in &self.0 {
            for _ in 0..e {
                acc = acc * env[v.index()].clone();
            }
        }
        acc
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Poly {
    terms: BTreeMap<Monomial, BigRational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn one() -> Self {
        Poly::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Poly::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(v: VarId) -> Self {
        let mut p = Poly::zero();
        p.add_term(Monomial::var(v), BigRational::one());
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, BigRational)>>(terms: I) -> Self {
        let mut p = Poly::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            alloc::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(c);
            }
            alloc::collections::btree_map::Entry::Occupied(mut slot) => {
                *slot.get_mut() += c;
                if slot.get().is_zero() {
                    slot.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn coefficient(&self, m: &Monomial) -> BigRational {
        self.terms.get(m).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, v: VarId) -> u32 {
        self.terms.keys().map(|m| m.exponent(v)).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        self.terms.keys().flat_map(|m| m.0.iter().map(|&(v, _)| v)).collect()
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly { terms: self.terms.iter().map(|(m, k)| (m.clone(), k * c)).collect() }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Poly {
        Poly { terms: self.terms.iter().map(|(n, k)| (n.mul(m), k.clone())).collect() }
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::one();
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn eval<S: crate::eval::Scalar>(&self, env: &[S]) -> S {
        let mut acc = S::zero();
        for (m, c) in &self.terms {
            acc = acc + S::from_rational(c) * m.eval(env);
        }
        acc
    }

    /// Replaces `v` by the polynomial `by`.
    pub fn substitute(&self, v: VarId, by: &Poly) -> Poly {
        if self.degree_in(v) == 0 {
            return self.clone();
        }
        let mut powers: Vec<Poly> = alloc::vec![Poly::one()];
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let e = m.exponent(v) as usize;
            while powers.len() <= e {
                let next = &powers[powers.len() - 1] * by;
                powers.push(next);
            }
            let rest = m.without(v);
            for (pm, pc) in &powers[e].terms {
                out.add_term(rest.mul(pm), c * pc);
            }
        }
        out
    }

    /// Greatest common monomial factor of all terms.
    pub fn monomial_content(&self) -> Monomial {
        let mut it = self.terms.keys();
        let first = match it.next() {
            Some(m) => m.clone(),
            None => return Monomial::one(),
        };
        it.fold(first, |acc, m| acc.gcd(m))
    }

    pub fn div_monomial(&self, m: &Monomial) -> Poly {
        Poly { terms: self.terms.iter().map(|(n, k)| (n.div(m), k.clone())).collect() }
    }

    /// Coefficient of the largest monomial.
    pub fn leading_coefficient(&self) -> Option<&BigRational> {
        self.terms.values().next_back()
    }

    /// Positive rational multiple with coprime integer coefficients.
    pub fn primitive(&self) -> (Poly, BigRational) {
        if self.is_zero() {
            return (Poly::zero(), BigRational::one());
        }
        let mut lcm = BigInt::one();
        for c in self.terms.values() {
            lcm = lcm.lcm(c.denom());
        }
        let mut gcd = BigInt::zero();
        for c in self.terms.values() {
            let n = (c * BigRational::from_integer(lcm.clone())).to_integer();
            gcd = gcd.gcd(&n);
        }
        let factor = BigRational::new(lcm, gcd.abs());
        (self.scale(&factor), factor)
    }

    /// Linear view, if the total degree is at most one.
    pub fn to_linear(&self) -> Option<LinExpr> {
        if self.total_degree() > 1 {
            return None;
        }
        let mut lin = LinExpr::constant(self.coefficient(&Monomial::one()));
        for (m, c) in &self.terms {
            if let [(v, 1)] = m.0.as_slice() {
                lin.add_coeff(*v, c.clone());
            }
        }
        Some(lin)
    }

    pub fn from_linear(l: &LinExpr) -> Poly {
        let mut p = Poly::constant(l.constant.clone());
        for (v, c) in &l.coeffs {
            p.add_term(Monomial::var(*v), c.clone());
        }
        p
    }

    /// Applies `x^k = x` for the variables in `idempotent` (0/1 values).
    pub fn reduce_idempotent(&self, idempotent: &BTreeSet<VarId>) -> Poly {
        Poly::from_terms(self.terms.iter().map(|(m, c)| {
            let pairs = m.0.iter().map(|&(v, e)| (v, if idempotent.contains(&v) { 1 } else { e })).collect();
            (Monomial(pairs), c.clone())
        }))
    }

    /// Expression with the same value.
    pub fn to_expr(&self) -> Expr {
        let mut out = Expr::zero();
        for (m, c) in self.terms.iter() {
            let mut term = Expr::one();
            for &(v, e) in &m.0 {
                term = Expr::mul(term, Expr::pow(Expr::Var(v), e as i32));
            }
            let neg = c.is_negative();
            let term = Expr::mul(Expr::Const(c.abs()), term);
            out = if out.is_zero_const() {
                if neg {
                    Expr::neg(term)
                } else {
                    term
                }
            } else if neg {
                Expr::sub(out, term)
            } else {
                Expr::add(out, term)
            };
        }
        out
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect() }
    }
}

/// Quotient of two polynomials; the denominator is never the zero polynomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatFn {
    pub num: Poly,
    pub den: Poly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatFnError {
    /// Division by a polynomial that is identically zero.
    ZeroDivisor,
    /// An indicator whose value is not fixed by the caller.
    UnresolvedIndicator,
}

impl RatFn {
    pub fn from_poly(p: Poly) -> Self {
        RatFn { num: p, den: Poly::one() }
    }

    pub fn constant(c: BigRational) -> Self {
        RatFn::from_poly(Poly::constant(c))
    }

    pub fn zero() -> Self {
        RatFn::from_poly(Poly::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.as_constant().is_some()
    }

    /// Canonical representative: monic-leading denominator, shared monomial
    /// factors cancelled, constant denominators folded into the numerator.
    pub fn normalized(mut self) -> Self {
        if self.num.is_zero() {
            return RatFn::zero();
        }
        if let Some(c) = self.den.as_constant() {
            return RatFn::from_poly(self.num.scale(&c.recip()));
        }
        let g = self.num.monomial_content().gcd(&self.den.monomial_content());
        if !g.is_one() {
            self.num = self.num.div_monomial(&g);
            self.den = self.den.div_monomial(&g);
        }
        if let Some(c) = self.den.as_constant() {
            return RatFn::from_poly(self.num.scale(&c.recip()));
        }
        let lead = self.den.leading_coefficient().cloned().unwrap_or_else(BigRational::one);
        let inv = lead.recip();
        RatFn { num: self.num.scale(&inv), den: self.den.scale(&inv) }
    }

    pub fn add(&self, other: &RatFn) -> RatFn {
        if self.den == other.den {
            return RatFn { num: &self.num + &other.num, den: self.den.clone() }.normalized();
        }
        RatFn { num: &(&self.num * &other.den) + &(&other.num * &self.den), den: &self.den * &other.den }.normalized()
    }

    pub fn neg(&self) -> RatFn {
        RatFn { num: -&self.num, den: self.den.clone() }
    }

    pub fn sub(&self, other: &RatFn) -> RatFn {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &RatFn) -> RatFn {
        if self.is_zero() || other.is_zero() {
            return RatFn::zero();
        }
        RatFn { num: &self.num * &other.num, den: &self.den * &other.den }.normalized()
    }

    pub fn div(&self, other: &RatFn) -> Result<RatFn, RatFnError> {
        if other.is_zero() {
            return Err(RatFnError::ZeroDivisor);
        }
        Ok(RatFn { num: &self.num * &other.den, den: &self.den * &other.num }.normalized())
    }

    pub fn pow(&self, k: i32) -> Result<RatFn, RatFnError> {
        let up = RatFn { num: self.num.pow(k.unsigned_abs()), den: self.den.pow(k.unsigned_abs()) };
        if k < 0 {
            RatFn::from_poly(Poly::one()).div(&up)
        } else {
            Ok(up.normalized())
        }
    }

    pub fn eval<S: crate::eval::Scalar>(&self, env: &[S]) -> Option<S> {
        self.num.eval(env).checked_div(&self.den.eval(env))
    }

    pub fn substitute(&self, v: VarId, by: &Poly) -> RatFn {
        RatFn { num: self.num.substitute(v, by), den: self.den.substitute(v, by) }
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        let mut out = self.num.vars();
        out.extend(self.den.vars());
        out
    }
}

/// Rational-function image of `e`; indicator values come from `ind`.
///
/// A zero factor absorbs an undefined partner, as in evaluation.
pub fn expr_to_ratfn(e: &Expr, ind: &mut dyn FnMut(&BoolExpr) -> Option<bool>) -> Result<RatFn, RatFnError> {
    Ok(match e {
        Expr::Const(c) => RatFn::constant(c.clone()),
        Expr::Var(v) => RatFn::from_poly(Poly::var(*v)),
        Expr::Neg(a) => expr_to_ratfn(a, ind)?.neg(),
        Expr::Add(a, b) => expr_to_ratfn(a, ind)?.add(&expr_to_ratfn(b, ind)?),
        Expr::Sub(a, b) => expr_to_ratfn(a, ind)?.sub(&expr_to_ratfn(b, ind)?),
        Expr::Mul(a, b) => match expr_to_ratfn(a, ind) {
            Ok(x) if x.is_zero() => x,
            Ok(x) => x.mul(&expr_to_ratfn(b, ind)?),
            Err(err) => match expr_to_ratfn(b, ind) {
                Ok(y) if y.is_zero() => y,
                _ => return Err(err),
            },
        },
        Expr::Div(a, b) => expr_to_ratfn(a, ind)?.div(&expr_to_ratfn(b, ind)?)?,
        Expr::Pow(a, k) => expr_to_ratfn(a, ind)?.pow(*k)?,
        Expr::Ind(b) => match ind(b) {
            Some(true) => RatFn::constant(BigRational::one()),
            Some(false) => RatFn::zero(),
            None => return Err(RatFnError::UnresolvedIndicator),
        },
    })
}

/// Rational-function image of an indicator-free expression.
pub fn plain_ratfn(e: &Expr) -> Result<RatFn, RatFnError> {
    expr_to_ratfn(e, &mut |_| None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_expr, parse_program};
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn geo_wpe_identity() {
        let p = parse_program("var n : int; var p : prob; while (n < 0) { skip }").unwrap();
        let lhs = plain_ratfn(&parse_expr("n + 1/p", &p.vars).unwrap()).unwrap();
        let rhs = plain_ratfn(&parse_expr("p*(n + 1) + (1 - p)*(n + 1 + 1/p)", &p.vars).unwrap()).unwrap();
        assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn cancellation_and_substitution() {
        let p = parse_program("var x, y : int; while (x < 0) { skip }").unwrap();
        let f = plain_ratfn(&parse_expr("(x*y + x^2)/x", &p.vars).unwrap()).unwrap();
        assert!(f.is_polynomial());
        let x = p.vars.lookup("x").unwrap();
        let y = p.vars.lookup("y").unwrap();
        let g = f.num.substitute(x, &(&Poly::var(y) + &Poly::one()));
        assert_eq!(g.eval(&[q(0, 1), q(3, 1)]), q(7, 1));
        assert_eq!(plain_ratfn(&parse_expr("1/(x - x)", &p.vars).unwrap()), Err(RatFnError::ZeroDivisor));
    }

    #[test]
    fn primitive_form() {
        let p = Poly::from_terms([(Monomial::one(), q(3, 2)), (Monomial::var(VarId(0)), q(-9, 4))]);
        let (prim, factor) = p.primitive();
        assert_eq!(factor, q(4, 3));
        assert_eq!(prim.coefficient(&Monomial::one()), q(2, 1));
        assert_eq!(prim.coefficient(&Monomial::var(VarId(0))), q(-3, 1));
    }

    fn small_poly() -> impl Strategy<Value = Poly> {
        proptest::collection::vec((0u32..3, 0u32..3, -4i64..5), 0..5).prop_map(|ts| {
            Poly::from_terms(ts.into_iter().map(|(a, b, c)| {
                (Monomial::from_pairs(alloc::vec![(VarId(0), a), (VarId(1), b)]), q(c, 1))
            }))
        })
    }

    proptest! {
        #[test]
        fn ring_laws(a in small_poly(), b in small_poly(), c in small_poly(), x in -5i64..6, y in -5i64..6) {
            let env = [q(x, 1), q(y, 2)];
            prop_assert_eq!((&(&a + &b) * &c).eval(&env), a.eval(&env) * c.eval(&env) + b.eval(&env) * c.eval(&env));
            prop_assert_eq!(&(&a - &a), &Poly::zero());
            prop_assert_eq!(a.pow(2).eval(&env), a.eval(&env) * a.eval(&env));
            let sub = a.substitute(VarId(0), &b);
            let inner = b.eval(&env);
            prop_assert_eq!(sub.eval(&env), a.eval(&[inner, q(y, 2)]));
        }

        #[test]
        fn ratfn_eval_agrees(a in small_poly(), b in small_poly(), c in small_poly(), x in 1i64..6, y in 1i64..6) {
            let env = [q(x, 3), q(y, 7)];
            let fb = RatFn { num: b.clone(), den: Poly::one() };
            let den = &(&c * &c) + &Poly::one();
            let fc = RatFn { num: a.clone(), den: den.clone() }.normalized();
            let sum = fb.add(&fc);
            let expect = b.eval(&env) + a.eval(&env) / den.eval(&env);
            prop_assert_eq!(sum.eval(&env).unwrap(), expect);
        }
    }
}
