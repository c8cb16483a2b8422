//! Sampling semantics of loop bodies and whole loops.
//!
//! Programs are compiled once into a float-valued form so that the hot
//! sampling loops do not touch rationals.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ast::{BoolExpr, CmpOp, Cmd, Dist, Expr, Program, State, VarType};
use crate::eval::EvalError;
use crate::num::to_f64;
use crate::rng::RandomStream;

pub const DEFAULT_MAX_ITERS: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("loop did not terminate within {limit} iterations")]
    MaxIterations { limit: u64 },
}

#[derive(Clone, Debug)]
enum CExpr {
    Const(f64),
    Var(usize),
    Neg(Box<CExpr>),
    Add(Box<CExpr>, Box<CExpr>),
    Sub(Box<CExpr>, Box<CExpr>),
    Mul(Box<CExpr>, Box<CExpr>),
    Div(Box<CExpr>, Box<CExpr>),
    Pow(Box<CExpr>, i32),
    Ind(Box<CBool>),
}

#[derive(Clone, Debug)]
enum CBool {
    Const(bool),
    Cmp(CmpOp, CExpr, CExpr),
    Not(Box<CBool>),
    And(Box<CBool>, Box<CBool>),
    Or(Box<CBool>, Box<CBool>),
}

#[derive(Clone, Debug)]
enum CCmd {
    Skip,
    Assign(usize, CExpr),
    Bernoulli(usize, CExpr),
    Discrete(usize, Vec<(f64, CExpr)>),
    Seq(Vec<CCmd>),
    If(CBool, Box<CCmd>, Box<CCmd>),
}

fn compile_expr(e: &Expr) -> CExpr {
    let b = |x: &Expr| Box::new(compile_expr(x));
    match e {
        Expr::Const(c) => CExpr::Const(to_f64(c)),
        Expr::Var(v) => CExpr::Var(v.index()),
        Expr::Neg(a) => CExpr::Neg(b(a)),
        Expr::Add(x, y) => CExpr::Add(b(x), b(y)),
        Expr::Sub(x, y) => CExpr::Sub(b(x), b(y)),
        Expr::Mul(x, y) => CExpr::Mul(b(x), b(y)),
        Expr::Div(x, y) => CExpr::Div(b(x), b(y)),
        Expr::Pow(a, k) => CExpr::Pow(b(a), *k),
        Expr::Ind(c) => CExpr::Ind(Box::new(compile_bool(c))),
    }
}

fn compile_bool(e: &BoolExpr) -> CBool {
    match e {
        BoolExpr::Const(v) => CBool::Const(*v),
        BoolExpr::Cmp(op, x, y) => CBool::Cmp(*op, compile_expr(x), compile_expr(y)),
        BoolExpr::Not(a) => CBool::Not(Box::new(compile_bool(a))),
        BoolExpr::And(x, y) => CBool::And(Box::new(compile_bool(x)), Box::new(compile_bool(y))),
        BoolExpr::Or(x, y) => CBool::Or(Box::new(compile_bool(x)), Box::new(compile_bool(y))),
    }
}

fn compile_cmd(c: &Cmd) -> CCmd {
    match c {
        Cmd::Skip => CCmd::Skip,
        Cmd::Assign(v, e) => CCmd::Assign(v.index(), compile_expr(e)),
        Cmd::Sample(v, Dist::Bernoulli(e)) => CCmd::Bernoulli(v.index(), compile_expr(e)),
        Cmd::Sample(v, Dist::Discrete(s)) => {
            CCmd::Discrete(v.index(), s.iter().map(|(val, w)| (to_f64(val), compile_expr(w))).collect())
        }
        Cmd::Seq(cs) => CCmd::Seq(cs.iter().map(compile_cmd).collect()),
        Cmd::If(b, t, e) => CCmd::If(compile_bool(b), Box::new(compile_cmd(t)), Box::new(compile_cmd(e))),
    }
}

impl CExpr {
    fn eval(&self, env: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            CExpr::Const(c) => *c,
            CExpr::Var(i) => env[*i],
            CExpr::Neg(a) => -a.eval(env)?,
            CExpr::Add(x, y) => x.eval(env)? + y.eval(env)?,
            CExpr::Sub(x, y) => x.eval(env)? - y.eval(env)?,
            CExpr::Mul(x, y) => match x.eval(env) {
                Ok(a) if a == 0.0 => 0.0,
                Ok(a) => a * y.eval(env)?,
                Err(err) => match y.eval(env) {
                    Ok(b) if b == 0.0 => 0.0,
                    _ => return Err(err),
                },
            },
            CExpr::Div(x, y) => {
                let a = x.eval(env)?;
                let b = y.eval(env)?;
                if b == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a / b
            }
            CExpr::Pow(a, k) => {
                let base = a.eval(env)?;
                let mut acc = 1.0;
                for _ in 0..k.unsigned_abs() {
                    acc *= base;
                }
                if *k < 0 {
                    if acc == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    1.0 / acc
                } else {
                    acc
                }
            }
            CExpr::Ind(b) => {
                if b.eval(env)? {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }
}

impl CBool {
    fn eval(&self, env: &[f64]) -> Result<bool, EvalError> {
        Ok(match self {
            CBool::Const(v) => *v,
            CBool::Cmp(op, x, y) => op.holds(&x.eval(env)?, &y.eval(env)?),
            CBool::Not(a) => !a.eval(env)?,
            CBool::And(x, y) => x.eval(env)? && y.eval(env)?,
            CBool::Or(x, y) => x.eval(env)? || y.eval(env)?,
        })
    }
}

/// Float-compiled expression for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledExpr(CExpr);

impl CompiledExpr {
    pub fn new(e: &Expr) -> Self {
        CompiledExpr(compile_expr(e))
    }

    pub fn eval(&self, env: &[f64]) -> Result<f64, EvalError> {
        self.0.eval(env)
    }
}

#[derive(Clone, Debug)]
pub struct CompiledBool(CBool);

impl CompiledBool {
    pub fn new(b: &BoolExpr) -> Self {
        CompiledBool(compile_bool(b))
    }

    pub fn eval(&self, env: &[f64]) -> Result<bool, EvalError> {
        self.0.eval(env)
    }
}

/// A program compiled for sampling.
#[derive(Clone, Debug)]
pub struct Executor {
    guard: CBool,
    body: CCmd,
    n_state: usize,
    n_total: usize,
    types: Vec<VarType>,
    names: Vec<String>,
}

impl Executor {
    pub fn new(prog: &Program) -> Self {
        let vars = &prog.vars;
        Executor {
            guard: compile_bool(&prog.guard),
            body: compile_cmd(&prog.body),
            n_state: vars.state_len(),
            n_total: vars.len(),
            types: vars.ids().map(|v| vars.ty(v)).collect(),
            names: vars.ids().map(|v| String::from(vars.name(v))).collect(),
        }
    }

    pub fn state_len(&self) -> usize {
        self.n_state
    }

    pub fn guard_holds(&self, s: &[f64]) -> Result<bool, EvalError> {
        self.guard.eval(s)
    }

    fn exec(&self, c: &CCmd, env: &mut [f64], rng: &mut RandomStream) -> Result<(), EvalError> {
        match c {
            CCmd::Skip => {}
            CCmd::Assign(v, e) => {
                let x = e.eval(env)?;
                if !x.is_finite() {
                    return Err(EvalError::NonFinite);
                }
                if self.types[*v] == VarType::Prob && !(0.0..=1.0).contains(&x) {
                    return Err(EvalError::OutOfRange { var: self.names[*v].clone(), value: format!("{}", x) });
                }
                env[*v] = x;
            }
            CCmd::Bernoulli(v, e) => {
                let q = e.eval(env)?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(EvalError::OutOfRange { var: self.names[*v].clone(), value: format!("{}", q) });
                }
                env[*v] = if rng.next_f64() < q { 1.0 } else { 0.0 };
            }
            CCmd::Discrete(v, support) => {
                let u = rng.next_f64();
                let mut acc = 0.0;
                let mut chosen = support.last().map(|s| s.0).unwrap_or(0.0);
                for (value, w) in support {
                    let w = w.eval(env)?;
                    if w < 0.0 {
                        return Err(EvalError::OutOfRange { var: self.names[*v].clone(), value: format!("{}", w) });
                    }
                    acc += w;
                    if u < acc {
                        chosen = *value;
                        break;
                    }
                }
                env[*v] = chosen;
            }
            CCmd::Seq(cs) => {
                for c in cs {
                    self.exec(c, env, rng)?;
                }
            }
            CCmd::If(b, t, e) => {
                if b.eval(env)? {
                    self.exec(t, env, rng)?;
                } else {
                    self.exec(e, env, rng)?;
                }
            }
        }
        Ok(())
    }

    fn buffer(&self, s: &State) -> Vec<f64> {
        let mut env = Vec::with_capacity(self.n_total);
        env.extend_from_slice(&s.0[..self.n_state]);
        env.resize(self.n_total, 0.0);
        env
    }

    /// One execution of the loop body from `s`.
    pub fn step(&self, s: &State, rng: &mut RandomStream) -> Result<State, EvalError> {
        let mut env = self.buffer(s);
        self.exec(&self.body, &mut env, rng)?;
        env.truncate(self.n_state);
        Ok(State(env))
    }

    /// Runs the loop from `s` until the guard fails.
    pub fn run(&self, s: &State, rng: &mut RandomStream, max_iters: u64) -> Result<State, ExecError> {
        let mut env = self.buffer(s);
        let mut iters = 0u64;
        while self.guard.eval(&env)? {
            if iters == max_iters {
                return Err(ExecError::MaxIterations { limit: max_iters });
            }
            self.exec(&self.body, &mut env, rng)?;
            iters += 1;
        }
        env.truncate(self.n_state);
        Ok(State(env))
    }
}

pub fn step_body(prog: &Program, s: &State, rng: &mut RandomStream) -> Result<State, EvalError> {
    Executor::new(prog).step(s, rng)
}

pub fn run_to_termination(
    prog: &Program,
    s: &State,
    rng: &mut RandomStream,
    max_iters: u64,
) -> Result<State, ExecError> {
    Executor::new(prog).run(s, rng, max_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool;
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";

    #[test]
    fn detm_step() {
        let p = parse_program("var x, count : int; while (x <= 10) { x = x + 1; count = count + 1; }").unwrap();
        let s = p.state_from_pairs(&[("x", 3.0), ("count", 0.0)]).unwrap();
        let t = step_body(&p, &s, &mut RandomStream::new(0)).unwrap();
        assert_eq!(t, p.state_from_pairs(&[("x", 4.0), ("count", 1.0)]).unwrap());
    }

    #[test]
    fn bernoulli_one_forces_branch() {
        let p = parse_program(GEO0).unwrap();
        let s = p.state_from_pairs(&[("flip", 0.0), ("z", 5.0), ("p1", 1.0)]).unwrap();
        let mut rng = RandomStream::new(3);
        for _ in 0..100 {
            let t = step_body(&p, &s, &mut rng).unwrap();
            assert_eq!(t, p.state_from_pairs(&[("flip", 1.0), ("z", 5.0), ("p1", 1.0)]).unwrap());
        }
    }

    #[test]
    fn geo0_branch_frequency() {
        let p = parse_program(GEO0).unwrap();
        let ex = Executor::new(&p);
        let s = p.state_from_pairs(&[("flip", 0.0), ("z", 0.0), ("p1", 0.5)]).unwrap();
        let root = RandomStream::new(11);
        let n = 10_000;
        let hits = (0..n).filter(|&i| ex.step(&s, &mut root.split(i)).unwrap().0[1] == 1.0).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{}", frac);
    }

    #[test]
    fn run_zero_iterations_when_guard_false() {
        let p = parse_program(GEO0).unwrap();
        let s = p.state_from_pairs(&[("flip", 1.0), ("z", 0.0), ("p1", 0.5)]).unwrap();
        assert_eq!(run_to_termination(&p, &s, &mut RandomStream::new(0), 10).unwrap(), s);
    }

    #[test]
    fn geometric_mean() {
        let p = parse_program(GEO0).unwrap();
        let ex = Executor::new(&p);
        let s = p.state_from_pairs(&[("flip", 0.0), ("z", 0.0), ("p1", 0.5)]).unwrap();
        let root = RandomStream::new(5);
        let mean: f64 = (0..500).map(|i| ex.run(&s, &mut root.split(i), 1000).unwrap().0[0]).sum::<f64>() / 500.0;
        assert!((mean - 1.0).abs() <= 0.2, "{}", mean);
    }

    #[test]
    fn nonterminating_loop_hits_the_limit() {
        let p = parse_program("var x : int; while (true) { x = x + 1; }").unwrap();
        let s = State(alloc::vec![0.0]);
        assert_eq!(
            run_to_termination(&p, &s, &mut RandomStream::new(0), 1000),
            Err(ExecError::MaxIterations { limit: 1000 })
        );
    }

    #[test]
    fn determinism() {
        let p = parse_program(GEO0).unwrap();
        let s = p.state_from_pairs(&[("flip", 0.0), ("z", 0.0), ("p1", 0.3)]).unwrap();
        let a = run_to_termination(&p, &s, &mut RandomStream::new(9), 10_000).unwrap();
        let b = run_to_termination(&p, &s, &mut RandomStream::new(9), 10_000).unwrap();
        assert_eq!(a, b);
    }
}
