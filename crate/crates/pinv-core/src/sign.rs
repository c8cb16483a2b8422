//! Sign certificates for polynomials on convex cells.
//!
//! Three exact tests are tried in order: a term-by-term sign argument from
//! the variable signs the cell implies, Fourier–Motzkin refutation of
//! `p > 0` when `p` is linear, and Bernstein bounds with subdivision on a
//! bounding box.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::ast::VarId;
use crate::linear::{is_feasible, var_bounds, Constraint, Feasibility, Rel};
use crate::poly::{Monomial, Poly};

/// Closed interval per variable.
pub type VarBox = BTreeMap<VarId, (BigRational, BigRational)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignProof {
    /// Every term has the required sign.
    TermSigns,
    /// Linear and refuted by Fourier–Motzkin on the cell.
    Linear,
    /// Bernstein coefficients on the verification box.
    Bernstein,
}

impl SignProof {
    /// Whether the certificate depends on the verification box.
    pub fn uses_box(self) -> bool {
        self == SignProof::Bernstein
    }
}

const MAX_BOXES: usize = 4096;
const MAX_DEPTH: u32 = 12;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sign {
    NonNeg,
    NonPos,
    Zero,
    Unknown,
}

fn var_signs(vars: &BTreeSet<VarId>, cell: &[Constraint], integral: &BTreeSet<VarId>) -> BTreeMap<VarId, Sign> {
    vars.iter()
        .map(|&v| {
            let (lo, hi) = var_bounds(cell, v, integral);
            let nonneg = lo.as_ref().map_or(false, |l| !l.is_negative());
            let nonpos = hi.as_ref().map_or(false, |h| !h.is_positive());
            let s = match (nonneg, nonpos) {
                (true, true) => Sign::Zero,
                (true, false) => Sign::NonNeg,
                (false, true) => Sign::NonPos,
                _ => Sign::Unknown,
            };
            (v, s)
        })
        .collect()
}

fn monomial_sign(m: &Monomial, signs: &BTreeMap<VarId, Sign>) -> Sign {
    let mut negative = false;
    for &(v, e) in m.factors() {
        match signs.get(&v).copied().unwrap_or(Sign::Unknown) {
            Sign::Zero => return Sign::Zero,
            _ if e % 2 == 0 => {}
            Sign::NonNeg => {}
            Sign::NonPos => negative = !negative,
            Sign::Unknown => return Sign::Unknown,
        }
    }
    if negative {
        Sign::NonPos
    } else {
        Sign::NonNeg
    }
}

/// `p <= 0` (or `< 0` when `strict`) from the signs of its terms.
fn term_signs(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, strict: bool) -> bool {
    let signs = var_signs(&p.vars(), cell, integral);
    let mut strict_ok = !strict;
    for (m, c) in p.terms() {
        let s = monomial_sign(m, &signs);
        let ok = match s {
            Sign::Zero => true,
            Sign::NonNeg => !c.is_positive(),
            Sign::NonPos => !c.is_negative(),
            Sign::Unknown => false,
        };
        if !ok {
            return false;
        }
        if m.is_one() && c.is_negative() {
            strict_ok = true;
        }
    }
    strict_ok
}

fn linear_refutes(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, strict: bool) -> bool {
    let lin = match p.to_linear() {
        Some(l) => l,
        None => return false,
    };
    let mut probe: Vec<Constraint> = cell.to_vec();
    let rel = if strict { Rel::Le } else { Rel::Lt };
    probe.push(Constraint::new(lin.neg(), rel));
    is_feasible(&probe, integral) == Feasibility::Infeasible
}

fn binom(n: u32, k: u32) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Dense tensor of Bernstein coefficients of `p` over `[0,1]^k` in `order`.
fn bernstein_coefficients(p: &Poly, order: &[VarId]) -> Vec<BigRational> {
    let degs: Vec<u32> = order.iter().map(|&v| p.degree_in(v)).collect();
    let dims: Vec<usize> = degs.iter().map(|&d| d as usize + 1).collect();
    let total: usize = dims.iter().product();
    let mut coef = alloc::vec![BigRational::zero(); total];
    let stride = |i: usize| dims[i + 1..].iter().product::<usize>();
    for (m, c) in p.terms() {
        let mut idx = 0;
        for (i, &v) in order.iter().enumerate() {
            idx += m.exponent(v) as usize * stride(i);
        }
        coef[idx] += c;
    }
    for (axis, &n) in degs.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let s = stride(axis);
        let len = dims[axis];
        let weights: Vec<Vec<BigRational>> = (0..=n)
            .map(|i| (0..=i).map(|j| BigRational::new(binom(i, j), binom(n, j))).collect())
            .collect();
        for base in 0..total {
            if (base / s) % len != 0 {
                continue;
            }
            let fiber: Vec<BigRational> = (0..len).map(|k| coef[base + k * s].clone()).collect();
            for i in 0..len {
                let mut acc = BigRational::zero();
                for j in 0..=i {
                    acc += &weights[i][j] * &fiber[j];
                }
                coef[base + i * s] = acc;
            }
        }
    }
    coef
}

fn rescale(p: &Poly, bx: &VarBox) -> Poly {
    let mut out = p.clone();
    for (&v, (lo, hi)) in bx {
        let by = &Poly::constant(lo.clone()) + &Poly::var(v).scale(&(hi - lo));
        out = out.substitute(v, &by);
    }
    out
}

/// Bernstein proof that `p <= 0` (or `< 0`) on `bx`, with subdivision.
pub fn bernstein_nonpositive(p: &Poly, bx: &VarBox, strict: bool) -> bool {
    let order: Vec<VarId> = p.vars().into_iter().collect();
    if order.iter().any(|v| !bx.contains_key(v)) {
        return false;
    }
    let mut stack: Vec<(VarBox, u32)> = alloc::vec![(order.iter().map(|v| (*v, bx[v].clone())).collect(), 0)];
    let mut visited = 0;
    while let Some((cur, depth)) = stack.pop() {
        visited += 1;
        if visited > MAX_BOXES {
            return false;
        }
        let coef = bernstein_coefficients(&rescale(p, &cur), &order);
        let bad = |c: &BigRational| if strict { !c.is_negative() } else { c.is_positive() };
        if !coef.iter().any(bad) {
            continue;
        }
        let first = coef.first().map_or(false, bad);
        let last = coef.last().map_or(false, bad);
        if first || last || depth >= MAX_DEPTH {
            // A corner coefficient is an actual value of p, so this box
            // cannot be certified.
            return false;
        }
        let (&v, _) = cur
            .iter()
            .max_by(|a, b| (&a.1 .1 - &a.1 .0).cmp(&(&b.1 .1 - &b.1 .0)))
            .expect("nonempty box");
        let (lo, hi) = cur[&v].clone();
        if lo == hi {
            return false;
        }
        let mid = (&lo + &hi) / BigRational::from_integer(2.into());
        let mut left = cur.clone();
        left.insert(v, (lo, mid.clone()));
        let mut right = cur;
        right.insert(v, (mid, hi));
        stack.push((left, depth + 1));
        stack.push((right, depth + 1));
    }
    true
}

/// Box for the variables of `p`: cell bounds intersected with `domain`.
pub fn cell_box(vars: &BTreeSet<VarId>, cell: &[Constraint], integral: &BTreeSet<VarId>, domain: &VarBox) -> Option<VarBox> {
    let mut out = VarBox::new();
    for &v in vars {
        let (lo, hi) = var_bounds(cell, v, integral);
        let (dlo, dhi) = match domain.get(&v) {
            Some((a, b)) => (Some(a.clone()), Some(b.clone())),
            None => (None, None),
        };
        let lo = match (lo, dlo) {
            (Some(a), Some(b)) => a.max(b),
            (a, b) => a.or(b)?,
        };
        let hi = match (hi, dhi) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => a.or(b)?,
        };
        if lo > hi {
            return None;
        }
        out.insert(v, (lo, hi));
    }
    Some(out)
}

/// Certificate that `p <= 0` everywhere on the cell (on the part inside
/// `domain` for box-based proofs).
pub fn prove_nonpositive(
    p: &Poly,
    cell: &[Constraint],
    integral: &BTreeSet<VarId>,
    domain: &VarBox,
) -> Option<SignProof> {
    prove(p, cell, integral, domain, false)
}

/// Certificate that `p < 0` everywhere on the cell.
pub fn prove_negative(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, domain: &VarBox) -> Option<SignProof> {
    prove(p, cell, integral, domain, true)
}

fn prove(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, domain: &VarBox, strict: bool) -> Option<SignProof> {
    if let Some(c) = p.as_constant() {
        let ok = if strict { c.is_negative() } else { !c.is_positive() };
        return ok.then_some(SignProof::TermSigns);
    }
    if term_signs(p, cell, integral, strict) {
        return Some(SignProof::TermSigns);
    }
    if linear_refutes(p, cell, integral, strict) {
        return Some(SignProof::Linear);
    }
    let bx = cell_box(&p.vars(), cell, integral, domain)?;
    bernstein_nonpositive(p, &bx, strict).then_some(SignProof::Bernstein)
}
