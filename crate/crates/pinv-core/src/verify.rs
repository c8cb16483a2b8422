//! Exact and numeric checking of candidate invariants.
//!
//! Exact invariants are checked by normalizing `D = inv - Phi(inv)` into
//! guarded rational form and testing every region numerator for the zero
//! polynomial. Sub-invariants need `pre - inv <= 0` and
//! `[G]*(inv - wpe(body, inv)) <= 0`, proven region by region with sign
//! certificates. Whatever cannot be decided exactly is searched numerically
//! on the verification domain.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::ast::{Expr, Program, State, VarId, VarType, Vars};
use crate::eval::eval_expr;
use crate::exec::CompiledExpr;
use crate::linear::{var_bounds, Constraint, Rel};
use crate::normalize::{normalize, GuardedRationalForm, Region};
use crate::poly::Poly;
use crate::print::expr_to_string;
use crate::rng::RandomStream;
use crate::sampler::{Domain, VerificationDomain};
use crate::sign::{prove_negative, prove_nonpositive, SignProof, VarBox};
use crate::wpe::{char_fn_apply, wpe_loopfree};

/// Violations at or below this are treated as float noise.
pub const TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    VerifiedExact,
    VerifiedBounded,
    Refuted,
}

impl Status {
    pub fn is_verified(self) -> bool {
        self != Status::Refuted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub state: State,
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionNote {
    pub cell: String,
    pub proof: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub counterexamples: Vec<Counterexample>,
    pub side_conditions: Vec<String>,
    pub regions: Vec<RegionNote>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub domain: VerificationDomain,
    /// Counterexamples to return on refutation.
    pub max_counterexamples: usize,
    pub starts: usize,
    pub climbs: usize,
    pub seed: u64,
    /// Largest integer range that is split into cases.
    pub case_split: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { domain: Domain::default(), max_counterexamples: 8, starts: 512, climbs: 16, seed: 0, case_split: 16 }
    }
}

fn constraint_string(c: &Constraint, vars: &Vars) -> String {
    let lhs = expr_to_string(&Poly::from_linear(&c.expr).to_expr(), vars);
    let op = match c.rel {
        Rel::Le => "<=",
        Rel::Lt => "<",
        Rel::Eq => "==",
    };
    format!("{} {} 0", lhs, op)
}

fn cell_string(cell: &[Constraint], vars: &Vars) -> String {
    if cell.is_empty() {
        return "true".to_string();
    }
    cell.iter().map(|c| constraint_string(c, vars)).collect::<Vec<_>>().join(" and ")
}

/// Integer variable of `p` with at most `cap` values on the cell.
fn finite_int_var(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, cap: usize) -> Option<(VarId, i64, i64)> {
    for v in p.vars() {
        if !integral.contains(&v) {
            continue;
        }
        if let (Some(lo), Some(hi)) = var_bounds(cell, v, integral) {
            let lo = lo.ceil().to_integer().to_i64()?;
            let hi = hi.floor().to_integer().to_i64()?;
            if hi >= lo && ((hi - lo) as usize) < cap {
                return Some((v, lo, hi));
            }
        }
    }
    None
}

fn fix_var(cell: &[Constraint], v: VarId, k: i64) -> Vec<Constraint> {
    let mut out = cell.to_vec();
    let mut e = crate::linear::LinExpr::var(v);
    e.constant = -BigRational::from_integer(k.into());
    out.push(Constraint::new(e, Rel::Eq));
    out
}

fn substitute_int(p: &Poly, v: VarId, k: i64) -> Poly {
    p.substitute(v, &Poly::constant(BigRational::from_integer(k.into())))
}

/// `p == 0` on the cell, splitting small integer ranges into cases.
fn zero_on_cell(p: &Poly, cell: &[Constraint], integral: &BTreeSet<VarId>, boolean: &BTreeSet<VarId>, cap: usize, depth: usize) -> bool {
    let p = p.reduce_idempotent(boolean);
    if p.is_zero() {
        return true;
    }
    if depth >= 4 {
        return false;
    }
    match finite_int_var(&p, cell, integral, cap) {
        Some((v, lo, hi)) => {
            (lo..=hi).all(|k| zero_on_cell(&substitute_int(&p, v, k), &fix_var(cell, v, k), integral, boolean, cap, depth + 1))
        }
        None => false,
    }
}

/// Sign proof for `p <= 0` on the cell, splitting small integer ranges.
fn nonpositive_on_cell(
    p: &Poly,
    cell: &[Constraint],
    integral: &BTreeSet<VarId>,
    boolean: &BTreeSet<VarId>,
    bx: &VarBox,
    cap: usize,
    depth: usize,
) -> Option<SignProof> {
    let p = p.reduce_idempotent(boolean);
    if let Some(proof) = prove_nonpositive(&p, cell, integral, bx) {
        return Some(proof);
    }
    if depth >= 3 {
        return None;
    }
    let (v, lo, hi) = finite_int_var(&p, cell, integral, cap)?;
    let mut worst = SignProof::TermSigns;
    for k in lo..=hi {
        let proof = nonpositive_on_cell(&substitute_int(&p, v, k), &fix_var(cell, v, k), integral, boolean, bx, cap, depth + 1)?;
        if proof.uses_box() {
            worst = proof;
        } else if !worst.uses_box() && proof == SignProof::Linear {
            worst = proof;
        }
    }
    Some(worst)
}

fn proof_name(p: SignProof) -> &'static str {
    match p {
        SignProof::TermSigns => "term signs",
        SignProof::Linear => "linear refutation",
        SignProof::Bernstein => "bernstein bounds on the domain box",
    }
}

/// Sign of a region denominator, with the side condition it rests on.
fn denominator_sign(region: &Region, form: &GuardedRationalForm, bx: &VarBox, vars: &Vars) -> Option<(bool, Option<String>)> {
    let den = &region.value.den;
    if let Some(c) = den.as_constant() {
        return Some((c.is_positive(), None));
    }
    let den_s = expr_to_string(&den.to_expr(), vars);
    if let Some(p) = prove_negative(&-den, &region.cell, &form.integral, bx) {
        let why = if p.uses_box() { " on the verification domain" } else { "" };
        return Some((true, Some(format!("{} > 0{}", den_s, why))));
    }
    if let Some(p) = prove_negative(den, &region.cell, &form.integral, bx) {
        let why = if p.uses_box() { " on the verification domain" } else { "" };
        return Some((false, Some(format!("{} < 0{}", den_s, why))));
    }
    None
}

enum Exact {
    /// Proven; `true` when some certificate needed the domain box.
    Proven { boxed: bool },
    Unknown,
}

fn exact_zero(form: &GuardedRationalForm, vars: &Vars, cfg: &VerifyConfig, v: &mut Verdict) -> Exact {
    let bx = cfg.domain.var_box(vars);
    for r in &form.regions {
        let num = r.reduced_numerator(&form.integral, &form.boolean);
        if !zero_on_cell(&num, &r.cell, &form.integral, &form.boolean, cfg.case_split, 0) {
            return Exact::Unknown;
        }
        if !r.value.den.as_constant().is_some() {
            match denominator_sign(r, form, &bx, vars) {
                Some((_, Some(cond))) => push_unique(&mut v.side_conditions, cond),
                _ => push_unique(
                    &mut v.side_conditions,
                    format!("{} != 0", expr_to_string(&r.value.den.to_expr(), vars)),
                ),
            }
        }
        v.regions.push(RegionNote { cell: cell_string(&r.cell, vars), proof: "identity".to_string() });
    }
    Exact::Proven { boxed: false }
}

fn exact_nonpositive(form: &GuardedRationalForm, vars: &Vars, cfg: &VerifyConfig, v: &mut Verdict) -> Exact {
    let bx = cfg.domain.var_box(vars);
    let mut boxed = false;
    for r in &form.regions {
        let num = r.reduced_numerator(&form.integral, &form.boolean);
        let oriented = if r.value.den.as_constant().is_some() {
            if r.value.den.as_constant().map_or(false, |c| c.is_negative()) {
                -&num
            } else {
                num
            }
        } else {
            match denominator_sign(r, form, &bx, vars) {
                Some((positive, cond)) => {
                    if let Some(c) = cond {
                        push_unique(&mut v.side_conditions, c);
                    }
                    if positive {
                        num
                    } else {
                        -&num
                    }
                }
                None => return Exact::Unknown,
            }
        };
        match nonpositive_on_cell(&oriented, &r.cell, &form.integral, &form.boolean, &bx, cfg.case_split, 0) {
            Some(p) => {
                boxed |= p.uses_box();
                v.regions.push(RegionNote { cell: cell_string(&r.cell, vars), proof: proof_name(p).to_string() });
            }
            None => return Exact::Unknown,
        }
    }
    Exact::Proven { boxed }
}

fn collect_divisors(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Const(_) | Expr::Var(_) | Expr::Ind(_) => {}
        Expr::Neg(a) => collect_divisors(a, out),
        Expr::Pow(a, k) => {
            if *k < 0 && a.as_const().is_none() && !out.contains(a) {
                out.push((**a).clone());
            }
            collect_divisors(a, out);
        }
        Expr::Div(a, b) => {
            collect_divisors(a, out);
            collect_divisors(b, out);
            if b.as_const().is_none() && !out.contains(b) {
                out.push((**b).clone());
            }
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            collect_divisors(a, out);
            collect_divisors(b, out);
        }
    }
}

/// Records the sign assumptions on the divisors of `e`.
fn divisor_conditions(e: &Expr, vars: &Vars, cfg: &VerifyConfig, v: &mut Verdict) {
    let mut divs = Vec::new();
    collect_divisors(e, &mut divs);
    let bx = cfg.domain.var_box(vars);
    for d in divs {
        let text = expr_to_string(&d, vars);
        let cond = match crate::poly::plain_ratfn(&d) {
            Ok(f) if f.is_polynomial() => {
                let used = f.num.vars();
                let cell = crate::normalize::type_constraints(vars, &used);
                let integral = vars.integral_set();
                if prove_negative(&-&f.num, &cell, &integral, &VarBox::new()).is_some() {
                    format!("{} > 0", text)
                } else if prove_negative(&-&f.num, &cell, &integral, &bx).is_some() {
                    format!("{} > 0 on the verification domain", text)
                } else if prove_negative(&f.num, &cell, &integral, &bx).is_some() {
                    format!("{} < 0 on the verification domain", text)
                } else {
                    format!("{} != 0", text)
                }
            }
            _ => format!("{} != 0", text),
        };
        push_unique(&mut v.side_conditions, cond);
    }
}

fn push_unique(xs: &mut Vec<String>, s: String) {
    if !xs.contains(&s) {
        xs.push(s);
    }
}

fn empty_verdict(status: Status) -> Verdict {
    Verdict { status, counterexamples: Vec::new(), side_conditions: Vec::new(), regions: Vec::new() }
}

/// Exact-invariant check of `inv` against `Phi(inv)`.
pub fn check_exact(inv: &Expr, prog: &Program, post: &Expr, cfg: &VerifyConfig) -> Verdict {
    let d = Expr::sub(inv.clone(), char_fn_apply(prog, post, inv));
    let mut v = empty_verdict(Status::VerifiedExact);
    let exact = match normalize(&d, &prog.vars) {
        Ok(form) => exact_zero(&form, &prog.vars, cfg, &mut v),
        Err(e) => {
            v.side_conditions.push(format!("normal form unavailable: {}", e));
            Exact::Unknown
        }
    };
    if let Exact::Proven { .. } = exact {
        divisor_conditions(&d, &prog.vars, cfg, &mut v);
        return v;
    }
    v.regions.clear();
    numeric(&[d], true, prog, cfg, v)
}

/// Sub-invariant check: `pre <= inv` and `[G]*inv <= [G]*wpe(body, inv)`.
pub fn check_sub(inv: &Expr, prog: &Program, pre: &Expr, _post: &Expr, cfg: &VerifyConfig) -> Verdict {
    let d1 = Expr::sub(pre.clone(), inv.clone());
    let d2 = Expr::mul(Expr::ind(prog.guard.clone()), Expr::sub(inv.clone(), wpe_loopfree(&prog.body, inv)));
    let mut v = empty_verdict(Status::VerifiedExact);
    let mut boxed = false;
    let mut proven = true;
    for d in [&d1, &d2] {
        match normalize(d, &prog.vars) {
            Ok(form) => match exact_nonpositive(&form, &prog.vars, cfg, &mut v) {
                Exact::Proven { boxed: b } => boxed |= b,
                Exact::Unknown => proven = false,
            },
            Err(e) => {
                v.side_conditions.push(format!("normal form unavailable: {}", e));
                proven = false;
            }
        }
        if !proven {
            break;
        }
    }
    if proven {
        divisor_conditions(&d1, &prog.vars, cfg, &mut v);
        divisor_conditions(&d2, &prog.vars, cfg, &mut v);
        if boxed {
            v.status = Status::VerifiedBounded;
            push_unique(&mut v.side_conditions, format!("certified on the domain {}", cfg.domain));
        }
        return v;
    }
    v.regions.clear();
    numeric(&[d1, d2], false, prog, cfg, v)
}

fn numeric(ds: &[Expr], absolute: bool, prog: &Program, cfg: &VerifyConfig, mut v: Verdict) -> Verdict {
    let rng = RandomStream::new(cfg.seed);
    let cex = search(ds, absolute, &prog.vars, &cfg.domain, cfg, &rng);
    if cex.is_empty() {
        v.status = Status::VerifiedBounded;
        push_unique(&mut v.side_conditions, format!("no violation above {:e} found on the domain {}", TOLERANCE, cfg.domain));
    } else {
        v.status = Status::Refuted;
        v.counterexamples = cex;
    }
    v
}

/// States in the domain where `d > 0`, most violating first.
pub fn find_counterexamples(d: &Expr, vars: &Vars, dom: &VerificationDomain, k: usize, rng: &RandomStream) -> Vec<Counterexample> {
    let cfg = VerifyConfig { max_counterexamples: k, ..VerifyConfig::default() };
    search(core::slice::from_ref(d), false, vars, dom, &cfg, rng)
}

struct Objective {
    compiled: Vec<CompiledExpr>,
    exprs: Vec<Expr>,
    absolute: bool,
}

impl Objective {
    fn fast(&self, s: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for c in &self.compiled {
            if let Ok(x) = c.eval(s) {
                let x = if self.absolute { x.abs() } else { x };
                if x.is_finite() && x > best {
                    best = x;
                }
            }
        }
        best
    }

    fn exact(&self, s: &State) -> Option<f64> {
        let env = s.to_rationals();
        let mut best: Option<BigRational> = None;
        for e in &self.exprs {
            if let Ok(x) = eval_expr(e, &env) {
                let x = if self.absolute { x.abs() } else { x };
                if best.as_ref().map_or(true, |b| x > *b) {
                    best = Some(x);
                }
            }
        }
        best.map(|b| crate::num::to_f64(&b))
    }
}

/// Box corners are all tried as starts up to this many state variables.
const MAX_CORNER_BITS: usize = 12;

fn search(ds: &[Expr], absolute: bool, vars: &Vars, dom: &Domain, cfg: &VerifyConfig, rng: &RandomStream) -> Vec<Counterexample> {
    let obj = Objective { compiled: ds.iter().map(CompiledExpr::new).collect(), exprs: ds.to_vec(), absolute };
    let ids: Vec<VarId> = vars.state_ids().collect();
    let width = vars.state_len();
    let mut draw = rng.split(0);
    let mut starts: Vec<(Vec<f64>, f64)> = (0..cfg.starts)
        .map(|_| {
            let mut s = alloc::vec![0.0; width];
            for &v in &ids {
                s[v.index()] = dom.draw(vars, v, &mut draw);
            }
            let f = obj.fast(&s);
            (s, f)
        })
        .collect();
    let mut corner = |high: &dyn Fn(usize) -> bool| {
        let mut s = alloc::vec![0.0; width];
        for (k, &v) in ids.iter().enumerate() {
            let (lo, hi) = dom.range(vars, v);
            s[v.index()] = if high(k) { hi } else { lo };
        }
        let f = obj.fast(&s);
        starts.push((s, f));
    };
    if ids.len() <= MAX_CORNER_BITS {
        for bits in 0..1u32 << ids.len() {
            corner(&|k| bits >> k & 1 == 1);
        }
    } else {
        let mut pick = rng.split(1);
        for _ in 0..cfg.starts {
            let high: Vec<bool> = ids.iter().map(|_| pick.next_f64() < 0.5).collect();
            corner(&|k| high[k]);
        }
    }
    starts.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    let mut pool: Vec<(Vec<f64>, f64)> = Vec::new();
    for (s, f) in starts.iter().take(cfg.climbs) {
        pool.push(climb(&obj, vars, dom, &ids, s.clone(), *f));
    }
    pool.extend(starts.into_iter());
    pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    let mut out: Vec<Counterexample> = Vec::new();
    for (s, f) in pool {
        if out.len() >= cfg.max_counterexamples {
            break;
        }
        if !(f > TOLERANCE) {
            break;
        }
        let state = State(s);
        if out.iter().any(|c| c.state == state) {
            continue;
        }
        if let Some(violation) = obj.exact(&state) {
            if violation > TOLERANCE {
                out.push(Counterexample { state, violation });
            }
        }
    }
    out.sort_by(|a, b| b.violation.partial_cmp(&a.violation).unwrap_or(core::cmp::Ordering::Equal));
    out
}

const INV_PHI: f64 = 0.618_033_988_749_895;

/// Coordinate ascent: unit steps for integers, flips for booleans and
/// golden-section search for reals.
fn climb(obj: &Objective, vars: &Vars, dom: &Domain, ids: &[VarId], mut s: Vec<f64>, mut f: f64) -> (Vec<f64>, f64) {
    for _round in 0..20 {
        let mut improved = false;
        for &v in ids {
            let i = v.index();
            let (lo, hi) = dom.range(vars, v);
            match vars.ty(v) {
                VarType::Bool => {
                    let old = s[i];
                    s[i] = 1.0 - old;
                    let g = obj.fast(&s);
                    if g > f {
                        f = g;
                        improved = true;
                    } else {
                        s[i] = old;
                    }
                }
                VarType::Int => {
                    for dir in [1.0, -1.0] {
                        loop {
                            let old = s[i];
                            let next = old + dir;
                            if next < lo || next > hi {
                                break;
                            }
                            s[i] = next;
                            let g = obj.fast(&s);
                            if g > f {
                                f = g;
                                improved = true;
                            } else {
                                s[i] = old;
                                break;
                            }
                        }
                    }
                }
                VarType::Prob | VarType::Real => {
                    let old = s[i];
                    let (mut a, mut b) = (lo, hi);
                    let at = |x: f64, s: &mut Vec<f64>| {
                        s[i] = x;
                        obj.fast(s)
                    };
                    let mut c = b - INV_PHI * (b - a);
                    let mut d = a + INV_PHI * (b - a);
                    let mut fc = at(c, &mut s);
                    let mut fd = at(d, &mut s);
                    for _ in 0..40 {
                        if fc >= fd {
                            b = d;
                            d = c;
                            fd = fc;
                            c = b - INV_PHI * (b - a);
                            fc = at(c, &mut s);
                        } else {
                            a = c;
                            c = d;
                            fc = fd;
                            d = a + INV_PHI * (b - a);
                            fd = at(d, &mut s);
                        }
                    }
                    let mut best = (old, f);
                    for x in [lo, hi, (a + b) / 2.0] {
                        let g = at(x, &mut s);
                        if g > best.1 {
                            best = (x, g);
                        }
                    }
                    s[i] = best.0;
                    if best.1 > f {
                        f = best.1;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    (s, f)
}

/// Whether `a - b` normalizes to zero in every region.
pub fn expectations_equivalent(a: &Expr, b: &Expr, vars: &Vars) -> bool {
    match normalize(&Expr::sub(a.clone(), b.clone()), vars) {
        Ok(form) => form.regions.iter().all(|r| {
            let num = r.reduced_numerator(&form.integral, &form.boolean);
            zero_on_cell(&num, &r.cell, &form.integral, &form.boolean, 16, 0)
        }),
        Err(_) => false,
    }
}
