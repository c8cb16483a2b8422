//! Evaluation of expressions and expectations on states.
//!
//! Evaluation is generic over [`Scalar`] so the same code serves exact
//! rational checks and fast floating-point sampling. A product with a zero
//! factor is zero even if the other factor is undefined, which makes guarded
//! divisions such as `[x == 0]*(1/p)` safe at `p = 0` when `x != 0`.

use core::ops::{Add, Mul, Neg, Sub};

use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::ast::{BoolExpr, Expr};
use crate::num::to_f64;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("value {value} of `{var}` is outside its type's range")]
    OutOfRange { var: alloc::string::String, value: alloc::string::String },
    #[error("non-finite value")]
    NonFinite,
}

pub trait Scalar: Clone + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn from_rational(r: &BigRational) -> Self;
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn checked_div(&self, rhs: &Self) -> Option<Self>;
}

impl Scalar for f64 {
    fn from_rational(r: &BigRational) -> Self {
        to_f64(r)
    }
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn checked_div(&self, rhs: &Self) -> Option<Self> {
        if *rhs == 0.0 {
            None
        } else {
            Some(self / rhs)
        }
    }
}

impl Scalar for BigRational {
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn checked_div(&self, rhs: &Self) -> Option<Self> {
        if Zero::is_zero(rhs) {
            None
        } else {
            Some(self.clone() / rhs.clone())
        }
    }
}

fn pow<S: Scalar>(base: S, k: i32) -> Result<S, EvalError> {
    let mut acc = S::one();
    for _ in 0..k.unsigned_abs() {
        acc = acc * base.clone();
    }
    if k < 0 {
        S::one().checked_div(&acc).ok_or(EvalError::DivisionByZero)
    } else {
        Ok(acc)
    }
}

/// Value of `e` where variable `v` has value `env[v]`.
pub fn eval_expr<S: Scalar>(e: &Expr, env: &[S]) -> Result<S, EvalError> {
    Ok(match e {
        Expr::Const(c) => S::from_rational(c),
        Expr::Var(v) => env[v.index()].clone(),
        Expr::Neg(a) => -eval_expr(a, env)?,
        Expr::Add(a, b) => eval_expr(a, env)? + eval_expr(b, env)?,
        Expr::Sub(a, b) => eval_expr(a, env)? - eval_expr(b, env)?,
        Expr::Mul(a, b) => match eval_expr(a, env) {
            Ok(x) if x.is_zero() => x,
            Ok(x) => x * eval_expr(b, env)?,
            Err(err) => match eval_expr(b, env) {
                Ok(y) if y.is_zero() => y,
                _ => return Err(err),
            },
        },
        Expr::Div(a, b) => {
            let x = eval_expr(a, env)?;
            let y = eval_expr(b, env)?;
            x.checked_div(&y).ok_or(EvalError::DivisionByZero)?
        }
        Expr::Pow(a, k) => pow(eval_expr(a, env)?, *k)?,
        Expr::Ind(b) => {
            if eval_bool(b, env)? {
                S::one()
            } else {
                S::zero()
            }
        }
    })
}

pub fn eval_bool<S: Scalar>(b: &BoolExpr, env: &[S]) -> Result<bool, EvalError> {
    Ok(match b {
        BoolExpr::Const(v) => *v,
        BoolExpr::Cmp(op, x, y) => {
            let x = eval_expr(x, env)?;
            let y = eval_expr(y, env)?;
            op.holds(&x, &y)
        }
        BoolExpr::Not(a) => !eval_bool(a, env)?,
        BoolExpr::And(a, c) => eval_bool(a, env)? && eval_bool(c, env)?,
        BoolExpr::Or(a, c) => eval_bool(a, env)? || eval_bool(c, env)?,
    })
}

/// Exact value of an expectation at a floating-point state.
pub fn eval_exact(e: &Expr, state: &[f64]) -> Result<BigRational, EvalError> {
    let env: alloc::vec::Vec<BigRational> = state
        .iter()
        .map(|&x| BigRational::from_float(x).ok_or(EvalError::NonFinite))
        .collect::<Result<_, _>>()?;
    eval_expr(e, &env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Vars;
    use crate::parse::{parse_bool_expr, parse_expr, parse_program};

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn arithmetic_and_comparisons() {
        let p = parse_program("var n, x : int; var p : prob; while (x == 0) { skip }").unwrap();
        let e = parse_expr("n + 1", &p.vars).unwrap();
        assert_eq!(eval_expr(&e, &[q(3, 1), q(0, 1), q(1, 2)]).unwrap(), q(4, 1));
        let b = parse_bool_expr("x == 0", &p.vars).unwrap();
        assert!(eval_bool(&b, &[q(3, 1), q(0, 1), q(1, 2)]).unwrap());
        let d = parse_expr("1/p", &p.vars).unwrap();
        assert_eq!(eval_expr(&d, &[q(3, 1), q(0, 1), q(0, 1)]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn guarded_division_short_circuits() {
        let p = parse_program("var x, n : int; var p : prob; while (x == 0) { skip }").unwrap();
        let e = parse_expr("[x != 0]*n + [x == 0]*(n + 1/p)", &p.vars).unwrap();
        assert_eq!(eval_expr(&e, &[q(0, 1), q(3, 1), q(1, 4)]).unwrap(), q(7, 1));
        assert_eq!(eval_expr(&e, &[q(1, 1), q(3, 1), q(0, 1)]).unwrap(), q(3, 1));
        let swapped = parse_expr("(n + 1/p)*[x == 0]", &p.vars).unwrap();
        assert_eq!(eval_expr(&swapped, &[1.0, 3.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn constants_and_powers() {
        let vars = Vars::default();
        let e = parse_expr("2^-2 + 3/4", &vars).unwrap();
        assert_eq!(eval_expr::<BigRational>(&e, &[]).unwrap(), q(1, 1));
        assert_eq!(eval_expr::<f64>(&parse_expr("7/8", &vars).unwrap(), &[]).unwrap(), 0.875);
    }
}
