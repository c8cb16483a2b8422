//! Conversions between `f64` and exact rationals.

use alloc::format;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact binary value of a finite float.
pub fn exact_ratio(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

/// Shortest decimal that round-trips to `x`, as an exact rational.
///
/// `0.1` becomes `1/10` rather than the binary expansion of the float.
pub fn decimal_ratio(x: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    parse_decimal(&format!("{}", x))
}

/// Parses `[-]digits[.digits]` exactly.
pub fn parse_decimal(text: &str) -> Option<BigRational> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((a, b)) => (a, b),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{}{}", int_part, frac_part);
    let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let denom = num_traits::pow(BigInt::from(10u32), frac_part.len());
    let r = BigRational::new(numer, denom);
    Some(if neg { -r } else { r })
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn from_i64(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Rounds half away from zero to `digits` decimal places.
pub fn round_digits(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `x` rounded to `digits` decimals as an exact rational.
pub fn round_ratio(x: f64, digits: u32) -> BigRational {
    let scale = 10f64.powi(digits as i32);
    let m = (x * scale).round();
    let numer = BigRational::from_float(m).unwrap_or_else(BigRational::zero);
    numer / BigRational::from_integer(num_traits::pow(BigInt::from(10u32), digits as usize))
}

pub fn is_integer(r: &BigRational) -> bool {
    r.denom().is_one()
}

pub fn is_terminating_decimal(r: &BigRational) -> bool {
    let mut d = r.denom().abs();
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    while (&d % &two).is_zero() {
        d /= &two;
    }
    while (&d % &five).is_zero() {
        d /= &five;
    }
    d.is_one()
}

/// Decimal rendering of a rational whose denominator only has factors 2 and 5.
pub fn decimal_string(r: &BigRational) -> Option<alloc::string::String> {
    if !is_terminating_decimal(r) {
        return None;
    }
    if is_integer(r) {
        return Some(format!("{}", r.numer()));
    }
    let mut places = 0usize;
    let ten = BigRational::from_integer(BigInt::from(10u32));
    let mut scaled = r.abs();
    while !is_integer(&scaled) {
        scaled *= &ten;
        places += 1;
    }
    let digits = format!("{}", scaled.numer());
    let padded = if digits.len() <= places {
        format!("{}{}", "0".repeat(places - digits.len() + 1), digits)
    } else {
        digits
    };
    let split = padded.len() - places;
    let sign = if r.is_negative() { "-" } else { "" };
    Some(format!("{}{}.{}", sign, &padded[..split], &padded[split..]))
}
