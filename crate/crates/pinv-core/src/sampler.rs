//! Initial states and trace data sets.
//!
//! Every (state, trial) pair draws from its own child stream, so data sets
//! are reproducible from the seed alone and do not depend on the order in
//! which trials are run.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_rational::BigRational;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{Expr, Program, State, VarId, VarType, Vars};
use crate::eval::EvalError;
use crate::exec::{CompiledExpr, ExecError, Executor};
use crate::num::decimal_ratio;
use crate::rng::RandomStream;
use crate::sign::VarBox;

/// Value ranges per type, with per-variable overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub prob: (f64, f64),
    pub int: (i64, i64),
    pub real: (f64, f64),
    pub overrides: BTreeMap<String, (f64, f64)>,
}

/// Box used for counterexample search and box-based sign proofs.
pub type VerificationDomain = Domain;

impl Default for Domain {
    fn default() -> Self {
        Domain { prob: (0.1, 0.9), int: (0, 10), real: (0.0, 10.0), overrides: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("malformed domain item `{0}` (expected key=lo:hi)")]
    Malformed(String),
    #[error("empty range for `{0}`")]
    Empty(String),
    #[error("probability range for `{0}` must lie within [0, 1]")]
    ProbRange(String),
}

fn parse_range(item: &str) -> Result<(String, f64, f64), DomainError> {
    let bad = || DomainError::Malformed(item.to_string());
    let (key, range) = item.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    if lo > hi {
        return Err(DomainError::Empty(key.trim().to_string()));
    }
    Ok((key.trim().to_string(), lo, hi))
}

impl Domain {
    /// Parses `prob=0.1:0.9,int=0:10,y=0:20`; keys other than the type names
    /// are variable names. Unmentioned keys keep their defaults.
    pub fn parse_spec(spec: &str) -> Result<Domain, DomainError> {
        let mut d = Domain::default();
        d.apply_spec(spec)?;
        Ok(d)
    }

    pub fn apply_spec(&mut self, spec: &str) -> Result<(), DomainError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, lo, hi) = parse_range(item)?;
            match key.as_str() {
                "prob" => {
                    if lo < 0.0 || hi > 1.0 {
                        return Err(DomainError::ProbRange(key));
                    }
                    self.prob = (lo, hi);
                }
                "int" => {
                    let (a, b) = (Float::ceil(lo) as i64, Float::floor(hi) as i64);
                    if a > b {
                        return Err(DomainError::Empty(key));
                    }
                    self.int = (a, b);
                }
                "real" => self.real = (lo, hi),
                _ => {
                    self.overrides.insert(key, (lo, hi));
                }
            }
        }
        Ok(())
    }

    /// Closed range of a variable.
    pub fn range(&self, vars: &Vars, v: VarId) -> (f64, f64) {
        let ty = vars.ty(v);
        if let Some(&(lo, hi)) = self.overrides.get(vars.name(v)) {
            return match ty {
                VarType::Bool => (lo.max(0.0).min(1.0), hi.min(1.0).max(0.0)),
                VarType::Int => (Float::ceil(lo), Float::floor(hi)),
                VarType::Prob => (lo.max(0.0), hi.min(1.0)),
                VarType::Real => (lo, hi),
            };
        }
        match ty {
            VarType::Bool => (0.0, 1.0),
            VarType::Int => (self.int.0 as f64, self.int.1 as f64),
            VarType::Prob => self.prob,
            VarType::Real => self.real,
        }
    }

    pub fn check(&self, vars: &Vars) -> Result<(), DomainError> {
        for v in vars.state_ids() {
            let (lo, hi) = self.range(vars, v);
            if lo > hi {
                return Err(DomainError::Empty(vars.name(v).to_string()));
            }
        }
        Ok(())
    }

    /// Exact box over the state variables.
    pub fn var_box(&self, vars: &Vars) -> VarBox {
        vars.state_ids()
            .map(|v| {
                let (lo, hi) = self.range(vars, v);
                let r = |x: f64| decimal_ratio(x).unwrap_or_else(|| BigRational::from_integer(0.into()));
                (v, (r(lo), r(hi)))
            })
            .collect()
    }

    /// Uniform draw of one value for `v`.
    pub fn draw(&self, vars: &Vars, v: VarId, rng: &mut RandomStream) -> f64 {
        let (lo, hi) = self.range(vars, v);
        if vars.ty(v).is_integral() {
            rng.uniform_int(lo as i64, hi as i64) as f64
        } else if lo == hi {
            lo
        } else {
            rng.uniform(lo, hi)
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prob={}:{},int={}:{},real={}:{}", self.prob.0, self.prob.1, self.int.0, self.int.1, self.real.0, self.real.1)?;
        for (k, (lo, hi)) in &self.overrides {
            write!(f, ",{}={}:{}", k, lo, hi)?;
        }
        Ok(())
    }
}

/// `n` independent uniform states.
pub fn sample_states(prog: &Program, n: usize, dom: &Domain, rng: &RandomStream) -> Vec<State> {
    (0..n)
        .map(|i| {
            let mut r = rng.split(i as u64);
            State(prog.vars.state_ids().map(|v| dom.draw(&prog.vars, v, &mut r)).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("sampling from {state:?} failed: {source}")]
pub struct SampleError {
    pub state: State,
    pub source: ExecError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactEntry {
    pub state: State,
    /// Empirical mean of the post-expectation at termination.
    pub value: f64,
    pub trials: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactDataset {
    pub entries: Vec<ExactEntry>,
}

impl ExactDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubEntry {
    pub state: State,
    /// One-iteration successors; empty when the guard fails at `state`.
    pub successors: Vec<State>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubDataset {
    pub entries: Vec<SubEntry>,
}

impl SubDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn tag(state: &State) -> impl Fn(ExecError) -> SampleError + '_ {
    move |source| SampleError { state: state.clone(), source }
}

/// Runs the loop `nruns` times from each guard-true state and records the
/// mean of `post` at termination. State `i` uses child stream `i` of `rng`.
pub fn sample_traces_exact(
    prog: &Program,
    post: &Expr,
    states: &[State],
    nruns: usize,
    max_iters: u64,
    rng: &RandomStream,
) -> Result<ExactDataset, SampleError> {
    let exec = Executor::new(prog);
    let post = CompiledExpr::new(post);
    let mut entries = Vec::new();
    for (i, s) in states.iter().enumerate() {
        let err = tag(s);
        if !exec.guard_holds(&s.0).map_err(|e| err(e.into()))? {
            continue;
        }
        let base = rng.split(i as u64);
        let mut total = 0.0;
        for t in 0..nruns {
            let mut r = base.split(t as u64);
            let end = exec.run(s, &mut r, max_iters).map_err(&err)?;
            total += post.eval(&end.0).map_err(|e| err(e.into()))?;
        }
        let value = total / nruns as f64;
        if !value.is_finite() {
            return Err(err(ExecError::Eval(EvalError::NonFinite)));
        }
        entries.push(ExactEntry { state: s.clone(), value, trials: nruns as u32 });
    }
    Ok(ExactDataset { entries })
}

/// Runs the body `nruns` times from each guard-true state.
pub fn sample_traces_sub(
    prog: &Program,
    states: &[State],
    nruns: usize,
    rng: &RandomStream,
) -> Result<SubDataset, SampleError> {
    let exec = Executor::new(prog);
    let mut entries = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let err = tag(s);
        let mut successors = Vec::new();
        if exec.guard_holds(&s.0).map_err(|e| err(e.into()))? {
            let base = rng.split(i as u64);
            for t in 0..nruns {
                let mut r = base.split(t as u64);
                successors.push(exec.step(s, &mut r).map_err(|e| err(e.into()))?);
            }
        }
        entries.push(SubEntry { state: s.clone(), successors });
    }
    Ok(SubDataset { entries })
}

/// Renders a state as `name=value` pairs.
pub fn format_state(vars: &Vars, s: &State) -> String {
    vars.state_ids().map(|v| format!("{}={}", vars.name(v), s.get(v))).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_expr, parse_program};

    const GEO: &str = "var x : bool; var n : int; var p : prob; while (x == 0) { n = n + 1; x ~ bernoulli(p); }";
    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool;
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";

    #[test]
    fn states_respect_domain() {
        let p = parse_program(GEO).unwrap();
        let a = sample_states(&p, 3, &Domain::default(), &RandomStream::new(7));
        let b = sample_states(&p, 3, &Domain::default(), &RandomStream::new(7));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for s in &a {
            assert!((0.1..=0.9).contains(&s.0[2]));
            assert!(s.0[0] == 0.0 || s.0[0] == 1.0);
            assert_eq!(s.0[1], Float::floor(s.0[1]));
        }
        let fixed = Domain::parse_spec("prob=0.5:0.5").unwrap();
        assert!(sample_states(&p, 20, &fixed, &RandomStream::new(1)).iter().all(|s| s.0[2] == 0.5));
    }

    #[test]
    fn only_booleans() {
        let p = parse_program("var a, b, c : bool; while (a == 1) { a = 0; }").unwrap();
        let s = sample_states(&p, 8, &Domain::default(), &RandomStream::new(3));
        assert_eq!(s.len(), 8);
        assert!(s.iter().flat_map(|s| s.0.iter()).all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn domain_spec() {
        let d = Domain::parse_spec("prob=0.2:0.3, int=-1:4,y=0:20").unwrap();
        assert_eq!(d.prob, (0.2, 0.3));
        assert_eq!(d.int, (-1, 4));
        assert_eq!(d.overrides["y"], (0.0, 20.0));
        assert_eq!(Domain::parse_spec(&d.to_string()).unwrap(), d);
        assert!(Domain::parse_spec("prob=0.5").is_err());
        assert!(Domain::parse_spec("prob=0:2").is_err());
    }

    #[test]
    fn exact_geo_mean() {
        let p = parse_program(GEO).unwrap();
        let n = parse_expr("n", &p.vars).unwrap();
        let s = p.state_from_pairs(&[("x", 0.0), ("n", 0.0), ("p", 0.5)]).unwrap();
        let done = p.state_from_pairs(&[("x", 1.0), ("n", 0.0), ("p", 0.5)]).unwrap();
        let d = sample_traces_exact(&p, &n, &[s, done], 500, 1000, &RandomStream::new(11)).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.entries[0].value - 2.0).abs() <= 0.2, "{}", d.entries[0].value);
    }

    #[test]
    fn exact_detm_value() {
        let p = parse_program("var x, count : int; while (x <= 10) { x = x + 1; count = count + 1; }").unwrap();
        let c = parse_expr("count", &p.vars).unwrap();
        let s = p.state_from_pairs(&[("x", 0.0), ("count", 0.0)]).unwrap();
        for nruns in [1, 7] {
            let d = sample_traces_exact(&p, &c, &[s.clone()], nruns, 1000, &RandomStream::new(0)).unwrap();
            assert_eq!(d.entries[0].value, 11.0);
        }
    }

    #[test]
    fn max_iterations_are_tagged() {
        let p = parse_program("var x : int; while (true) { x = x + 1; }").unwrap();
        let c = parse_expr("x", &p.vars).unwrap();
        let s = State(alloc::vec![4.0]);
        let e = sample_traces_exact(&p, &c, &[s.clone()], 2, 10, &RandomStream::new(0)).unwrap_err();
        assert_eq!(e.state, s);
        assert_eq!(e.source, ExecError::MaxIterations { limit: 10 });
    }

    #[test]
    fn sub_sets() {
        let p = parse_program(GEO0).unwrap();
        let live = p.state_from_pairs(&[("flip", 0.0), ("z", 0.0), ("p1", 0.9)]).unwrap();
        let dead = p.state_from_pairs(&[("flip", 1.0), ("z", 0.0), ("p1", 0.9)]).unwrap();
        let d = sample_traces_sub(&p, &[live, dead], 500, &RandomStream::new(5)).unwrap();
        assert_eq!(d.entries[0].successors.len(), 500);
        assert!(d.entries[1].successors.is_empty());
        let hits = d.entries[0].successors.iter().filter(|s| s.0[1] == 1.0).count() as f64 / 500.0;
        assert!((hits - 0.9).abs() <= 0.06);
        let again = sample_traces_sub(&p, &[d.entries[0].state.clone()], 500, &RandomStream::new(5)).unwrap();
        assert_eq!(again.entries[0], d.entries[0]);
    }
}
