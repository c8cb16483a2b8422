//! Pretty-printing in the surface syntax accepted by [`crate::parse`].
//!
//! Output re-parses to the same tree. Rationals with a terminating decimal
//! expansion print as decimals, other rationals as `a/b`.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt::{self, Write};

use num_rational::BigRational;
use num_traits::Signed;

use crate::ast::{BoolExpr, Cmd, Dist, Expr, Program, Vars};
use crate::num::decimal_string;

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn const_prec(c: &BigRational) -> u8 {
    match decimal_string(c) {
        Some(_) if c.is_negative() => NEG,
        Some(_) => ATOM,
        None => MUL,
    }
}

fn const_text(c: &BigRational) -> String {
    decimal_string(c).unwrap_or_else(|| format!("{}/{}", c.numer(), c.denom()))
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) => const_prec(c),
        Expr::Var(_) | Expr::Ind(_) => ATOM,
        Expr::Neg(_) => NEG,
        Expr::Add(..) | Expr::Sub(..) => ADD,
        Expr::Mul(..) | Expr::Div(..) => MUL,
        Expr::Pow(..) => POW,
    }
}

fn write_expr(out: &mut String, e: &Expr, vars: &Vars) {
    let wrap = |out: &mut String, child: &Expr, parens: bool| {
        if parens {
            out.push('(');
            write_expr(out, child, vars);
            out.push(')');
        } else {
            write_expr(out, child, vars);
        }
    };
    match e {
        Expr::Const(c) => out.push_str(&const_text(c)),
        Expr::Var(v) => out.push_str(vars.name(*v)),
        Expr::Ind(b) => {
            out.push('[');
            write_bool(out, b, vars);
            out.push(']');
        }
        Expr::Neg(a) => {
            out.push('-');
            wrap(out, a, prec(a) < NEG || matches!(**a, Expr::Const(_)));
        }
        Expr::Pow(a, k) => {
            wrap(out, a, prec(a) <= POW);
            let _ = write!(out, "^{}", k);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let (p, sym) = match e {
                Expr::Add(..) => (ADD, " + "),
                Expr::Sub(..) => (ADD, " - "),
                Expr::Mul(..) => (MUL, "*"),
                _ => (MUL, "/"),
            };
            wrap(out, a, prec(a) < p);
            out.push_str(sym);
            wrap(out, b, prec(b) <= p);
        }
    }
}

fn bool_prec(b: &BoolExpr) -> u8 {
    match b {
        BoolExpr::Or(..) => 1,
        BoolExpr::And(..) => 2,
        BoolExpr::Not(_) => 3,
        BoolExpr::Cmp(..) => 4,
        BoolExpr::Const(_) => 5,
    }
}

fn write_bool(out: &mut String, b: &BoolExpr, vars: &Vars) {
    let wrap = |out: &mut String, child: &BoolExpr, parens: bool| {
        if parens {
            out.push('(');
            write_bool(out, child, vars);
            out.push(')');
        } else {
            write_bool(out, child, vars);
        }
    };
    match b {
        BoolExpr::Const(v) => out.push_str(if *v { "true" } else { "false" }),
        BoolExpr::Cmp(op, x, y) => {
            write_expr(out, x, vars);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, y, vars);
        }
        BoolExpr::Not(a) => {
            out.push_str("not ");
            wrap(out, a, bool_prec(a) < 3);
        }
        BoolExpr::And(x, y) | BoolExpr::Or(x, y) => {
            let (p, word) = if matches!(b, BoolExpr::And(..)) { (2, " and ") } else { (1, " or ") };
            wrap(out, x, bool_prec(x) < p);
            out.push_str(word);
            wrap(out, y, bool_prec(y) <= p);
        }
    }
}

pub fn expr_to_string(e: &Expr, vars: &Vars) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, vars);
    out
}

pub fn bool_to_string(b: &BoolExpr, vars: &Vars) -> String {
    let mut out = String::new();
    write_bool(&mut out, b, vars);
    out
}

fn write_cmd(out: &mut String, c: &Cmd, vars: &Vars, depth: usize) {
    let pad = "    ".repeat(depth);
    match c {
        Cmd::Skip => {
            let _ = writeln!(out, "{}skip;", pad);
        }
        Cmd::Assign(v, e) => {
            let _ = writeln!(out, "{}{} = {};", pad, vars.name(*v), expr_to_string(e, vars));
        }
        Cmd::Sample(v, Dist::Bernoulli(e)) => {
            let _ = writeln!(out, "{}{} ~ bernoulli({});", pad, vars.name(*v), expr_to_string(e, vars));
        }
        Cmd::Sample(v, Dist::Discrete(support)) => {
            let items: alloc::vec::Vec<String> = support
                .iter()
                .map(|(value, w)| format!("{} @ {}", const_text(value), expr_to_string(w, vars)))
                .collect();
            let _ = writeln!(out, "{}{} ~ {{{}}};", pad, vars.name(*v), items.join(", "));
        }
        Cmd::Seq(cs) => cs.iter().for_each(|c| write_cmd(out, c, vars, depth)),
        Cmd::If(b, t, e) => {
            let _ = writeln!(out, "{}if ({}) {{", pad, bool_to_string(b, vars));
            write_block_body(out, t, vars, depth + 1);
            if **e == Cmd::Skip {
                let _ = writeln!(out, "{}}}", pad);
            } else {
                let _ = writeln!(out, "{}}} else {{", pad);
                write_block_body(out, e, vars, depth + 1);
                let _ = writeln!(out, "{}}}", pad);
            }
        }
    }
}

fn write_block_body(out: &mut String, c: &Cmd, vars: &Vars, depth: usize) {
    if *c != Cmd::Skip {
        write_cmd(out, c, vars, depth);
    }
}

pub fn program_to_string(p: &Program) -> String {
    let mut out = String::new();
    for d in p.vars.decls() {
        let kw = if d.local { "local" } else { "var" };
        let _ = writeln!(out, "{} {} : {};", kw, d.name, d.ty.keyword());
    }
    for f in &p.features {
        let _ = writeln!(out, "feature {};", expr_to_string(f, &p.vars));
    }
    let _ = writeln!(out, "while ({}) {{", bool_to_string(&p.guard, &p.vars));
    write_block_body(&mut out, &p.body, &p.vars, 1);
    out.push_str("}\n");
    out
}

/// `Display` adapter for an expression and its variable table.
pub struct Pretty<'a>(pub &'a Expr, pub &'a Vars);

impl fmt::Display for Pretty<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&expr_to_string(self.0, self.1))
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&program_to_string(self))
    }
}

/// Collapses runs of whitespace so printed forms can be compared loosely.
pub fn squash_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<alloc::vec::Vec<_>>().join(" ").to_string()
}
