//! Parser for `.pw` programs and standalone expectations.
//!
//! ```text
//! program  := decl* feature* "while" "(" bexpr ")" block feature*
//! decl     := ("var" | "local") ident ("," ident)* ":" type ";"
//! type     := "bool" | "int" | "prob" | "real"
//! feature  := "feature" expr ";"
//! block    := "{" stmt* "}"
//! stmt     := "skip" ";"
//!           | ident ("=" | ":=") expr ";"
//!           | ident "~" dist ";"
//!           | "if" "(" bexpr ")" block ("else" (block | stmt))?
//! dist     := "bernoulli" "(" expr ")"
//!           | "{" const "@" expr ("," const "@" expr)* "}"
//! ```
//!
//! Expressions use `or`/`||`, `and`/`&&`, `not`/`!`, the six comparisons,
//! `+ - * /`, integer powers `^` and indicators `[bexpr]`. A bool variable
//! used as a condition means `v != 0`; a condition used as a number is its
//! indicator. A `;` before a closing `}` may be omitted.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::ast::{
    is_boolean_expr, is_integral_expr, is_probability_expr, BoolExpr, CmpOp, Cmd, Dist, Expr, Program, VarDecl, VarId,
    VarType, Vars,
};
use crate::num::parse_decimal;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared variable `{name}`")]
    Undeclared { line: usize, col: usize, name: String },
    #[error("{line}:{col}: type error: {msg}")]
    Type { line: usize, col: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 27] = [
    ":=", "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", ";", ",", ":", "+", "-", "*", "/", "^",
    "=", "<", ">", "~", "@", "!",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line: start_line, col: start_col });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            col += i - start;
            out.push(Token { tok: Tok::Num(chars[start..i].iter().collect()), line: start_line, col: start_col });
            continue;
        }
        if c == '·' {
            i += 1;
            col += 1;
            out.push(Token { tok: Tok::Sym("*"), line: start_line, col: start_col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(sym) => {
                i += sym.len();
                col += sym.len();
                out.push(Token { tok: Tok::Sym(sym), line: start_line, col: start_col });
            }
            None => {
                return Err(ParseError::Syntax { line, col, msg: format!("unexpected character `{}`", c) });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Or,
    And,
    Cmp(CmpOp),
    Add,
    Sub,
    Mul,
    Div,
}

/// Untyped expression; resolved into [`Expr`] or [`BoolExpr`] by context.
#[derive(Clone, Debug)]
enum Syn {
    Num(BigRational),
    Ident(String),
    Bool(bool),
    Neg(Box<Node>),
    Not(Box<Node>),
    Pow(Box<Node>, i32),
    Bin(BinOp, Box<Node>, Box<Node>),
    Bracket(Box<Node>),
}

#[derive(Clone, Debug)]
struct Node {
    syn: Syn,
    line: usize,
    col: usize,
}

const KEYWORDS: [&str; 17] = [
    "var", "local", "while", "if", "else", "skip", "feature", "bernoulli", "and", "or", "not", "true", "false", "bool",
    "int", "prob", "real",
];

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    vars: Option<&'a Vars>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{}`, found {}", s, describe(&self.peek().tok)))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, usize, usize), ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                Ok((name, t.line, t.col))
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    /// Statement terminator; optional before a closing brace.
    fn end_stmt(&mut self) -> Result<(), ParseError> {
        if self.eat_sym(";") || self.is_sym("}") {
            Ok(())
        } else {
            self.err(format!("expected `;`, found {}", describe(&self.peek().tok)))
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Node, ParseError> {
        let t = self.peek().clone();
        let mut lhs = match &t.tok {
            Tok::Num(text) => {
                self.bump();
                let value = parse_decimal(text).ok_or(ParseError::Syntax {
                    line: t.line,
                    col: t.col,
                    msg: format!("malformed number `{}`", text),
                })?;
                Node { syn: Syn::Num(value), line: t.line, col: t.col }
            }
            Tok::Ident(name) if name == "true" || name == "false" => {
                self.bump();
                Node { syn: Syn::Bool(name == "true"), line: t.line, col: t.col }
            }
            Tok::Ident(name) if name == "not" => {
                self.bump();
                let inner = self.expr(5)?;
                Node { syn: Syn::Not(Box::new(inner)), line: t.line, col: t.col }
            }
            Tok::Ident(_) => {
                let (name, line, col) = self.expect_ident()?;
                Node { syn: Syn::Ident(name), line, col }
            }
            Tok::Sym("!") => {
                self.bump();
                let inner = self.expr(5)?;
                Node { syn: Syn::Not(Box::new(inner)), line: t.line, col: t.col }
            }
            Tok::Sym("-") => {
                self.bump();
                let inner = self.expr(13)?;
                let syn = match inner.syn {
                    Syn::Num(v) => Syn::Num(-v),
                    other => Syn::Neg(Box::new(Node { syn: other, line: inner.line, col: inner.col })),
                };
                Node { syn, line: t.line, col: t.col }
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.expr(0)?;
                self.expect_sym(")")?;
                inner
            }
            Tok::Sym("[") => {
                self.bump();
                let inner = self.expr(0)?;
                self.expect_sym("]")?;
                Node { syn: Syn::Bracket(Box::new(inner)), line: t.line, col: t.col }
            }
            other => return self.err(format!("expected expression, found {}", describe(other))),
        };
        loop {
            let t = self.peek().clone();
            if let Tok::Sym("^") = t.tok {
                if 15 < min_bp {
                    break;
                }
                self.bump();
                let neg = self.eat_sym("-");
                let k = if self.eat_sym("(") {
                    let neg_inner = self.eat_sym("-");
                    let k = self.int_literal()?;
                    self.expect_sym(")")?;
                    if neg_inner {
                        -k
                    } else {
                        k
                    }
                } else {
                    self.int_literal()?
                };
                let k = if neg { -k } else { k };
                lhs = Node { syn: Syn::Pow(Box::new(lhs), k), line: t.line, col: t.col };
                continue;
            }
            let op = match &t.tok {
                Tok::Ident(w) if w == "or" => BinOp::Or,
                Tok::Ident(w) if w == "and" => BinOp::And,
                Tok::Sym("||") => BinOp::Or,
                Tok::Sym("&&") => BinOp::And,
                Tok::Sym("==") => BinOp::Cmp(CmpOp::Eq),
                Tok::Sym("!=") => BinOp::Cmp(CmpOp::Ne),
                Tok::Sym("<") => BinOp::Cmp(CmpOp::Lt),
                Tok::Sym("<=") => BinOp::Cmp(CmpOp::Le),
                Tok::Sym(">") => BinOp::Cmp(CmpOp::Gt),
                Tok::Sym(">=") => BinOp::Cmp(CmpOp::Ge),
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                _ => break,
            };
            let (l_bp, r_bp) = match op {
                BinOp::Or => (1, 2),
                BinOp::And => (3, 4),
                BinOp::Cmp(_) => (7, 8),
                BinOp::Add | BinOp::Sub => (9, 10),
                BinOp::Mul | BinOp::Div => (11, 12),
            };
            if l_bp < min_bp {
                break;
            }
            if matches!(op, BinOp::Cmp(_)) && matches!(lhs.syn, Syn::Bin(BinOp::Cmp(_), ..)) {
                return Err(ParseError::Syntax { line: t.line, col: t.col, msg: "comparisons do not chain".into() });
            }
            self.bump();
            let rhs = self.expr(r_bp)?;
            let syn = match (op, &lhs.syn, &rhs.syn) {
                (BinOp::Div, Syn::Num(a), Syn::Num(b)) if !b.is_zero() => Syn::Num(a / b),
                _ => Syn::Bin(op, Box::new(lhs.clone()), Box::new(rhs)),
            };
            lhs = Node { syn, line: lhs.line, col: lhs.col };
        }
        Ok(lhs)
    }

    fn int_literal(&mut self) -> Result<i32, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(text) if text.bytes().all(|b| b.is_ascii_digit()) => {
                self.bump();
                let k: i32 = text.parse().map_err(|_| ParseError::Syntax {
                    line: t.line,
                    col: t.col,
                    msg: "exponent too large".into(),
                })?;
                Ok(k)
            }
            other => self.err(format!("expected integer exponent, found {}", describe(other))),
        }
    }

    fn vars(&self) -> &'a Vars {
        self.vars.expect("variable table set before expressions are resolved")
    }

    fn resolve(&self, name: &str, line: usize, col: usize) -> Result<VarId, ParseError> {
        self.vars().lookup(name).ok_or_else(|| ParseError::Undeclared { line, col, name: name.to_string() })
    }

    fn to_expr(&self, n: &Node) -> Result<Expr, ParseError> {
        Ok(match &n.syn {
            Syn::Num(v) => Expr::Const(v.clone()),
            Syn::Ident(name) => Expr::Var(self.resolve(name, n.line, n.col)?),
            Syn::Bool(b) => Expr::Const(if *b { BigRational::one() } else { BigRational::zero() }),
            Syn::Neg(a) => Expr::Neg(Box::new(self.to_expr(a)?)),
            Syn::Pow(a, k) => Expr::Pow(Box::new(self.to_expr(a)?), *k),
            Syn::Bracket(b) => Expr::Ind(Box::new(self.to_bool(b)?)),
            Syn::Not(_) | Syn::Bin(BinOp::Or | BinOp::And | BinOp::Cmp(_), ..) => Expr::Ind(Box::new(self.to_bool(n)?)),
            Syn::Bin(op, a, b) => {
                let (a, b) = (Box::new(self.to_expr(a)?), Box::new(self.to_expr(b)?));
                match op {
                    BinOp::Add => Expr::Add(a, b),
                    BinOp::Sub => Expr::Sub(a, b),
                    BinOp::Mul => Expr::Mul(a, b),
                    _ => Expr::Div(a, b),
                }
            }
        })
    }

    fn to_bool(&self, n: &Node) -> Result<BoolExpr, ParseError> {
        Ok(match &n.syn {
            Syn::Bool(b) => BoolExpr::Const(*b),
            Syn::Not(a) => BoolExpr::Not(Box::new(self.to_bool(a)?)),
            Syn::Bin(BinOp::And, a, b) => BoolExpr::And(Box::new(self.to_bool(a)?), Box::new(self.to_bool(b)?)),
            Syn::Bin(BinOp::Or, a, b) => BoolExpr::Or(Box::new(self.to_bool(a)?), Box::new(self.to_bool(b)?)),
            Syn::Bin(BinOp::Cmp(op), a, b) => BoolExpr::Cmp(*op, self.to_expr(a)?, self.to_expr(b)?),
            Syn::Ident(name) => {
                let v = self.resolve(name, n.line, n.col)?;
                if self.vars().ty(v) != VarType::Bool {
                    return Err(ParseError::Type {
                        line: n.line,
                        col: n.col,
                        msg: format!("`{}` is not a bool variable and cannot be used as a condition", name),
                    });
                }
                BoolExpr::Cmp(CmpOp::Ne, Expr::Var(v), Expr::zero())
            }
            _ => {
                return Err(ParseError::Type { line: n.line, col: n.col, msg: "expected a condition".into() });
            }
        })
    }

    fn decls(&mut self) -> Result<Vec<VarDecl>, ParseError> {
        let mut decls: Vec<VarDecl> = Vec::new();
        loop {
            let local = if self.eat_kw("var") {
                false
            } else if self.eat_kw("local") {
                true
            } else {
                break;
            };
            let mut names = Vec::new();
            loop {
                names.push(self.expect_ident()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(":")?;
            let ty = match &self.peek().tok {
                Tok::Ident(t) if t == "bool" => VarType::Bool,
                Tok::Ident(t) if t == "int" => VarType::Int,
                Tok::Ident(t) if t == "prob" => VarType::Prob,
                Tok::Ident(t) if t == "real" => VarType::Real,
                other => return self.err(format!("expected a type, found {}", describe(other))),
            };
            self.bump();
            self.expect_sym(";")?;
            for (name, line, col) in names {
                if decls.iter().any(|d| d.name == name) {
                    return Err(ParseError::Syntax { line, col, msg: format!("`{}` declared twice", name) });
                }
                decls.push(VarDecl { name, ty, local });
            }
        }
        Ok(decls)
    }

    fn features(&mut self, out: &mut Vec<Expr>) -> Result<(), ParseError> {
        while self.is_kw("feature") {
            let t = self.bump();
            let node = self.expr(0)?;
            let e = self.to_expr(&node)?;
            self.check_state_only(&e, t.line, t.col)?;
            out.push(e);
            self.expect_sym(";")?;
        }
        Ok(())
    }

    fn check_state_only(&self, e: &Expr, line: usize, col: usize) -> Result<(), ParseError> {
        let vars = self.vars();
        match e.vars().into_iter().find(|v| v.index() >= vars.state_len()) {
            Some(v) => Err(ParseError::Type {
                line,
                col,
                msg: format!("local `{}` is only available inside the loop body", vars.name(v)),
            }),
            None => Ok(()),
        }
    }

    fn block(&mut self) -> Result<Cmd, ParseError> {
        self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.is_sym("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return self.err("unterminated block");
            }
            stmts.push(self.stmt()?);
        }
        self.expect_sym("}")?;
        Ok(match stmts.len() {
            0 => Cmd::Skip,
            1 => stmts.pop().expect("one statement"),
            _ => Cmd::Seq(stmts),
        })
    }

    fn stmt(&mut self) -> Result<Cmd, ParseError> {
        let t = self.peek().clone();
        if self.eat_kw("skip") {
            self.end_stmt()?;
            return Ok(Cmd::Skip);
        }
        if self.eat_kw("if") {
            self.expect_sym("(")?;
            let cond = self.expr(0)?;
            self.expect_sym(")")?;
            let cond = self.to_bool(&cond)?;
            let then = self.block()?;
            let other = if self.eat_kw("else") {
                if self.is_sym("{") {
                    self.block()?
                } else {
                    self.stmt()?
                }
            } else {
                Cmd::Skip
            };
            return Ok(Cmd::If(cond, Box::new(then), Box::new(other)));
        }
        let (name, line, col) = self.expect_ident()?;
        let v = self.resolve(&name, line, col)?;
        let ty = self.vars().ty(v);
        if self.eat_sym("=") || self.eat_sym(":=") {
            let node = self.expr(0)?;
            let e = self.to_expr(&node)?;
            let vars = self.vars();
            let ok = match ty {
                VarType::Bool => is_boolean_expr(&e, vars),
                VarType::Int => is_integral_expr(&e, vars),
                VarType::Prob | VarType::Real => true,
            };
            if !ok {
                return Err(ParseError::Type {
                    line: t.line,
                    col: t.col,
                    msg: format!("cannot assign this expression to {} variable `{}`", ty.keyword(), name),
                });
            }
            self.end_stmt()?;
            return Ok(Cmd::Assign(v, e));
        }
        if self.eat_sym("~") {
            let dist = if self.eat_kw("bernoulli") {
                self.expect_sym("(")?;
                let node = self.expr(0)?;
                self.expect_sym(")")?;
                let e = self.to_expr(&node)?;
                if ty != VarType::Bool {
                    return Err(ParseError::Type {
                        line: t.line,
                        col: t.col,
                        msg: format!("bernoulli samples are bool, `{}` is {}", name, ty.keyword()),
                    });
                }
                if !is_probability_expr(&e, self.vars()) {
                    return Err(ParseError::Type {
                        line: node.line,
                        col: node.col,
                        msg: "bernoulli parameter must be a probability".into(),
                    });
                }
                Dist::Bernoulli(e)
            } else if self.eat_sym("{") {
                let mut support = Vec::new();
                loop {
                    let vt = self.peek().clone();
                    let node = self.expr(0)?;
                    let value = match self.to_expr(&node)? {
                        Expr::Const(c) => c,
                        _ => {
                            return Err(ParseError::Type {
                                line: vt.line,
                                col: vt.col,
                                msg: "support values must be constants".into(),
                            })
                        }
                    };
                    let fits = match ty {
                        VarType::Bool => value.is_zero() || value.is_one(),
                        VarType::Int => value.is_integer(),
                        VarType::Prob => !value.is_negative() && value <= BigRational::one(),
                        VarType::Real => true,
                    };
                    if !fits {
                        return Err(ParseError::Type {
                            line: vt.line,
                            col: vt.col,
                            msg: format!("value does not fit {} variable `{}`", ty.keyword(), name),
                        });
                    }
                    self.expect_sym("@")?;
                    let wn = self.expr(0)?;
                    support.push((value, self.to_expr(&wn)?));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("}")?;
                if support.iter().all(|(_, w)| w.as_const().is_some()) {
                    let total: BigRational =
                        support.iter().map(|(_, w)| w.as_const().cloned().unwrap_or_default()).sum();
                    if !total.is_one() {
                        return Err(ParseError::Type { line: t.line, col: t.col, msg: "weights must sum to 1".into() });
                    }
                }
                Dist::Discrete(support)
            } else {
                return self.err("expected `bernoulli(...)` or `{ v @ w, ... }`");
            };
            self.end_stmt()?;
            return Ok(Cmd::Sample(v, dist));
        }
        self.err(format!("expected `=` or `~`, found {}", describe(&self.peek().tok)))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{}`", s),
        Tok::Num(s) => format!("`{}`", s),
        Tok::Sym(s) => format!("`{}`", s),
        Tok::Eof => "end of input".into(),
    }
}

/// Locals must be written before they are read on every path.
fn check_definite(cmd: &Cmd, vars: &Vars, defined: &mut BTreeSet<VarId>) -> Result<(), String> {
    let used_ok = |e_vars: BTreeSet<VarId>, defined: &BTreeSet<VarId>| -> Result<(), String> {
        for v in e_vars {
            if v.index() >= vars.state_len() && !defined.contains(&v) {
                return Err(format!("local `{}` may be read before it is assigned", vars.name(v)));
            }
        }
        Ok(())
    };
    match cmd {
        Cmd::Skip => Ok(()),
        Cmd::Assign(v, e) => {
            used_ok(e.vars(), defined)?;
            defined.insert(*v);
            Ok(())
        }
        Cmd::Sample(v, d) => {
            let mut used = BTreeSet::new();
            match d {
                Dist::Bernoulli(e) => e.collect_vars(&mut used),
                Dist::Discrete(s) => s.iter().for_each(|(_, w)| w.collect_vars(&mut used)),
            }
            used_ok(used, defined)?;
            defined.insert(*v);
            Ok(())
        }
        Cmd::Seq(cs) => cs.iter().try_for_each(|c| check_definite(c, vars, defined)),
        Cmd::If(b, t, e) => {
            let mut used = BTreeSet::new();
            b.collect_vars(&mut used);
            used_ok(used, defined)?;
            let mut dt = defined.clone();
            let mut de = defined.clone();
            check_definite(t, vars, &mut dt)?;
            check_definite(e, vars, &mut de)?;
            *defined = dt.intersection(&de).copied().collect();
            Ok(())
        }
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, vars: None };
    let decls = p.decls()?;
    let vars = Vars::new(decls);
    let vars_ref: &Vars = &vars;
    // The parser borrows the table for the rest of the input.
    let mut p = Parser { toks: p.toks, pos: p.pos, vars: Some(vars_ref) };
    let mut features = Vec::new();
    p.features(&mut features)?;
    let wt = p.peek().clone();
    if !p.eat_kw("while") {
        return p.err(format!("expected `while`, found {}", describe(&p.peek().tok)));
    }
    p.expect_sym("(")?;
    let gnode = p.expr(0)?;
    p.expect_sym(")")?;
    let guard = p.to_bool(&gnode)?;
    let mut gvars = BTreeSet::new();
    guard.collect_vars(&mut gvars);
    if let Some(v) = gvars.iter().find(|v| v.index() >= vars.state_len()) {
        return Err(ParseError::Type {
            line: gnode.line,
            col: gnode.col,
            msg: format!("local `{}` cannot appear in the loop guard", vars.name(*v)),
        });
    }
    let body = p.block()?;
    p.features(&mut features)?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return p.err(format!("unexpected {} after the loop", describe(&p.peek().tok)));
    }
    let mut defined = BTreeSet::new();
    check_definite(&body, &vars, &mut defined)
        .map_err(|msg| ParseError::Type { line: wt.line, col: wt.col, msg })?;
    drop(p);
    Ok(Program { vars, guard, body, features })
}

/// Parses an arithmetic expression (an expectation) over `vars`.
pub fn parse_expr(text: &str, vars: &Vars) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, vars: Some(vars) };
    let node = p.expr(0)?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return p.err(format!("unexpected {}", describe(&p.peek().tok)));
    }
    p.to_expr(&node)
}

pub fn parse_bool_expr(text: &str, vars: &Vars) -> Result<BoolExpr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, vars: Some(vars) };
    let node = p.expr(0)?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return p.err(format!("unexpected {}", describe(&p.peek().tok)));
    }
    p.to_bool(&node)
}

/// Integer value of a constant expression, if it has one.
pub fn const_int(e: &Expr) -> Option<i64> {
    e.as_const().filter(|c| c.is_integer()).and_then(|c| c.to_integer().to_i64())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool;
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";

    #[test]
    fn geo0_has_three_state_vars() {
        let p = parse_program(GEO0).unwrap();
        assert_eq!(p.vars.state_len(), 3);
        assert_eq!(p.vars.len(), 4);
        assert!(matches!(p.body, Cmd::Seq(ref v) if v.len() == 2));
    }

    #[test]
    fn skip_body() {
        let p = parse_program("var x : int; while (x < 0) { skip }").unwrap();
        assert_eq!(p.body, Cmd::Skip);
    }

    #[test]
    fn undeclared_variable() {
        let e = parse_program("var x : int; while (x < 0) { x = y + 1; }").unwrap_err();
        assert!(matches!(e, ParseError::Undeclared { ref name, line: 1, .. } if name == "y"), "{e}");
    }

    #[test]
    fn bernoulli_into_int_is_a_type_error() {
        let e = parse_program("var x : int; var p : prob; while (x == 0) { x ~ bernoulli(p); }").unwrap_err();
        assert!(matches!(e, ParseError::Type { .. }), "{e}");
    }

    #[test]
    fn bernoulli_parameter_must_be_probability() {
        let e = parse_program("var x : int; local d : bool; while (x == 0) { d ~ bernoulli(x); }").unwrap_err();
        assert!(matches!(e, ParseError::Type { .. }), "{e}");
        parse_program("var x : int; var p : prob; local d : bool; while (x == 0) { d ~ bernoulli(1 - p); }").unwrap();
        parse_program("var x : int; local d : bool; while (x == 0) { d ~ bernoulli(1/2); }").unwrap();
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_program("var x : int;\nwhile (x < 0) {\n  x = x + ;\n}").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 3, col: 11, .. }), "{e}");
    }

    #[test]
    fn local_read_before_write() {
        let e = parse_program("var x : int; local d : bool; while (x < 0) { if (d) { x = 1; } }").unwrap_err();
        assert!(matches!(e, ParseError::Type { .. }), "{e}");
    }

    #[test]
    fn discrete_distribution() {
        let p = parse_program("var x : int; while (x < 0) { x ~ {0 @ 1/4, 1 @ 3/4}; }").unwrap();
        assert!(matches!(p.body, Cmd::Sample(_, Dist::Discrete(ref s)) if s.len() == 2));
        assert!(parse_program("var x : int; while (x < 0) { x ~ {0 @ 1/4, 1 @ 1/4}; }").is_err());
    }

    #[test]
    fn expressions_and_indicators() {
        let p = parse_program(GEO0).unwrap();
        let e = parse_expr("z + [flip == 0] * (1 - p1) / p1", &p.vars).unwrap();
        assert!(e.contains_indicator());
        let b = parse_bool_expr("not flip and z >= 2", &p.vars).unwrap();
        assert!(matches!(b, BoolExpr::And(..)));
        let c = parse_expr("p1^-1 + p1^(-2) + 2^3", &p.vars).unwrap();
        assert!(matches!(c, Expr::Add(..)));
        assert!(parse_expr("1 < z < 3", &p.vars).is_err());
    }

    #[test]
    fn decimal_literals_are_exact() {
        let vars = Vars::default();
        assert_eq!(parse_expr("0.95", &vars).unwrap(), Expr::ratio(19, 20));
        assert_eq!(parse_expr("-3/4", &vars).unwrap(), Expr::ratio(-3, 4));
    }
}
