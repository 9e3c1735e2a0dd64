//! Small helpers around `BigRational`: parsing, formatting, powers and
//! conversions to and from `f64`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn frac(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Ratio::to_f64 only fails on extreme exponents; fall back to logs.
        let sign = if r.is_negative() { -1.0 } else { 1.0 };
        let l = log2_abs(r);
        sign * l.exp2()
    })
}

/// Exact rational value of a finite float.
pub fn from_f64(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| Error::Parse(format!("non-finite number {x}")))
}

/// log2 |r| computed from the bit lengths, accurate to f64 precision.
pub fn log2_abs(r: &Rational) -> f64 {
    fn log2_int(n: &BigInt) -> f64 {
        let bits = n.bits();
        if bits <= 1000 {
            n.to_f64().unwrap().abs().log2()
        } else {
            let shift = bits - 60;
            let top: BigInt = n.abs() >> shift;
            top.to_f64().unwrap().log2() + shift as f64
        }
    }
    if r.is_zero() {
        return f64::NEG_INFINITY;
    }
    log2_int(r.numer()) - log2_int(r.denom())
}

pub fn pow(r: &Rational, e: u32) -> Rational {
    num_traits::pow(r.clone(), e as usize)
}

/// r^e for a possibly negative integer exponent. Panics on 0^negative.
pub fn powi(r: &Rational, e: i64) -> Rational {
    if e >= 0 {
        pow(r, e as u32)
    } else {
        pow(&r.recip(), (-e) as u32)
    }
}

/// Parses "a/b", an integer, or a decimal such as "-0.125" or "2.5e-3"
/// into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Parse("empty number".into()));
    }
    if let Some((a, b)) = s.split_once('/') {
        let a: BigInt = a.trim().parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
        let b: BigInt = b.trim().parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
        if b.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational::new(a, b));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = s[i + 1..].parse().map_err(|_| Error::Parse(format!("bad exponent in {s:?}")))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (neg, body) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(Error::Parse(format!("bad number {s:?}")));
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(Error::Parse(format!("bad number {s:?}")));
    }
    let digits = format!("{int_part}{frac_part}");
    let n: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().unwrap() };
    let scale = exp - frac_part.len() as i64;
    let ten = int(10);
    let mut r = Rational::from_integer(n) * powi(&ten, scale);
    if neg {
        r = -r;
    }
    Ok(r)
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn abs(r: &Rational) -> Rational {
    r.abs()
}

/// Exact integer square root if `r` is the square of a rational.
pub fn exact_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().sqrt();
    let d = r.denom().sqrt();
    if &(&n * &n) == r.numer() && &(&d * &d) == r.denom() {
        Some(Rational::new(n, d))
    } else {
        None
    }
}

pub fn lcm_denominators<'a>(it: impl IntoIterator<Item = &'a Rational>) -> BigInt {
    it.into_iter().fold(BigInt::one(), |acc, r| acc.lcm(r.denom()))
}

/// Rational upper approximation of `x` with denominator `2^bits`.
pub fn ceil_dyadic(x: f64, bits: u32) -> Rational {
    let scale = (bits as f64).exp2();
    let n = (x * scale).ceil();
    Rational::new(BigInt::from(n as i128), BigInt::one() << bits)
}
