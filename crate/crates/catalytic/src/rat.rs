//! Exact rational scalars used for all series and polynomial coefficients.
//!
//! `Rat` is a reduced big-integer fraction with positive denominator, which is
//! exactly the invariant `num_rational::BigRational` maintains. The helpers
//! here cover the text format used by equation files ("p" or "p/q") and the
//! float conversions needed at evaluation boundaries.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

/// Parses "p" or "p/q" into a reduced rational. The denominator must be positive.
pub fn parse_rat(text: &str) -> Result<Rat, String> {
    let text = text.trim();
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (text, "1"),
    };
    let num: BigInt = num
        .parse()
        .map_err(|_| format!("invalid integer {num:?}"))?;
    let den: BigInt = den
        .parse()
        .map_err(|_| format!("invalid integer {den:?}"))?;
    if den.is_zero() {
        return Err(format!("zero denominator in {text:?}"));
    }
    if den.is_negative() {
        return Err(format!("negative denominator in {text:?}"));
    }
    Ok(Rat::new(num, den))
}

/// Renders a rational as "p" or "p/q".
pub fn format_rat(r: &Rat) -> String {
    if r.denom() == &BigInt::from(1) {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rat_from_i64(n: i64) -> Rat {
    Rat::from(BigInt::from(n))
}

/// Product with a fast integer lane: `BigRational` reduces on every
/// operation and Stein's gcd on a large numerator against 1 costs a full
/// pass per bit, which dominates series arithmetic. Integer-valued inputs
/// stay integer-valued, so the reduction can be skipped outright.
pub fn mul_fast(a: &Rat, b: &Rat) -> Rat {
    if a.denom() == &BigInt::from(1) && b.denom() == &BigInt::from(1) {
        Rat::new_raw(a.numer() * b.numer(), BigInt::from(1))
    } else {
        a * b
    }
}

/// In-place sum with the same integer fast lane as `mul_fast`.
pub fn add_assign_fast(acc: &mut Rat, v: &Rat) {
    if acc.denom() == &BigInt::from(1) && v.denom() == &BigInt::from(1) {
        let sum = acc.numer() + v.numer();
        *acc = Rat::new_raw(sum, BigInt::from(1));
    } else {
        *acc += v;
    }
}

pub fn rat_from_f64(x: f64) -> Rat {
    BigRational::from_float(x).expect("finite float")
}

/// Rounds a rational to the nearest f64. Exact for small values; for huge
/// numerators/denominators this goes through the log-space path to avoid
/// intermediate overflow.
pub fn rat_to_f64(r: &Rat) -> f64 {
    if let Some(x) = r.to_f64() {
        if x.is_finite() {
            return x;
        }
    }
    let (sign, ln) = rat_ln(r);
    sign * ln.exp()
}

/// Natural log of |r| together with the sign of r, as (sign, ln|r|).
/// Works for rationals far outside f64 range. Returns (0.0, -inf) for zero.
pub fn rat_ln(r: &Rat) -> (f64, f64) {
    if r.is_zero() {
        return (0.0, f64::NEG_INFINITY);
    }
    let sign = match r.numer().sign() {
        Sign::Minus => -1.0,
        _ => 1.0,
    };
    (sign, bigint_ln(&r.numer().abs()) - bigint_ln(r.denom()))
}

/// ln of a positive big integer via its top 64 bits.
fn bigint_ln(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 53 {
        return n.to_f64().expect("fits f64").ln();
    }
    let shift = bits - 53;
    let top: BigInt = n >> shift;
    let mant = top.to_f64().expect("53-bit mantissa");
    mant.ln() + (shift as f64) * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(format_rat(&parse_rat("3/6").unwrap()), "1/2");
        assert_eq!(format_rat(&parse_rat("4").unwrap()), "4");
        assert_eq!(format_rat(&parse_rat(" -2/4 ").unwrap()), "-1/2");
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("1/-2").is_err());
        assert!(parse_rat("x").is_err());
    }

    #[test]
    fn ln_of_huge_rational() {
        // 4^1000 has ln = 2000 ln 2.
        let big = Rat::from(BigInt::from(4).pow(1000));
        let (sign, ln) = rat_ln(&big);
        assert_eq!(sign, 1.0);
        let expect = 2000.0 * std::f64::consts::LN_2;
        assert!((ln - expect).abs() < 1e-9 * expect);
        assert!(rat_to_f64(&big).is_finite() || rat_to_f64(&big).is_infinite());
    }

    #[test]
    fn to_f64_roundtrip() {
        let r = parse_rat("-7/16").unwrap();
        assert_eq!(rat_to_f64(&r), -0.4375);
        assert_eq!(rat_from_f64(-0.4375), r);
    }
}
