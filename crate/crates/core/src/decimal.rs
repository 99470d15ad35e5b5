//! Exact base-10 numbers.
//!
//! Values are kept as an unscaled arbitrary-precision integer plus a count of
//! fractional digits, so `3.50` and `3.5` compare equal but render differently.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Debug)]
pub struct Decimal {
    unscaled: BigInt,
    scale: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDecimalError(pub String);

impl fmt::Display for ParseDecimalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not a plain decimal number: `{}`", self.0)
    }
}

impl std::error::Error for ParseDecimalError {}

pub(crate) fn pow10(exp: u32) -> BigInt {
    num_traits::pow(BigInt::from(10u8), exp as usize)
}

impl Decimal {
    pub fn new(unscaled: BigInt, scale: u32) -> Self {
        Decimal { unscaled, scale }
    }

    pub fn from_int(value: impl Into<BigInt>) -> Self {
        Decimal::new(value.into(), 0)
    }

    pub fn unscaled(&self) -> &BigInt {
        &self.unscaled
    }

    /// Number of digits after the decimal point.
    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_integer(&self) -> bool {
        self.unscaled.is_multiple_of(&pow10(self.scale))
    }

    pub fn is_zero(&self) -> bool {
        self.unscaled.is_zero()
    }

    pub fn floor(&self) -> BigInt {
        self.unscaled.div_floor(&pow10(self.scale))
    }

    pub fn abs(&self) -> Decimal {
        Decimal::new(self.unscaled.abs(), self.scale)
    }

    /// Returns the integer value when the number has no fractional part.
    pub fn to_integer(&self) -> Option<BigInt> {
        let (q, r) = self.unscaled.div_rem(&pow10(self.scale));
        r.is_zero().then_some(q)
    }

    /// Same value expressed with `scale` fractional digits. Only widening is exact.
    pub fn rescale(&self, scale: u32) -> Decimal {
        if scale >= self.scale {
            Decimal::new(&self.unscaled * pow10(scale - self.scale), scale)
        } else {
            Decimal::new(self.unscaled.div_floor(&pow10(self.scale - scale)), scale)
        }
    }

    pub fn mul(&self, other: &Decimal) -> Decimal {
        Decimal::new(&self.unscaled * &other.unscaled, self.scale + other.scale)
    }

    /// Parses the shortest round-trip rendering of a finite `f64`.
    pub fn from_f64(value: f64) -> Option<Decimal> {
        if !value.is_finite() {
            return None;
        }
        format!("{value}").parse().ok()
    }

    /// `ceil(self * n)` computed exactly.
    pub fn ceil_mul(&self, n: usize) -> BigInt {
        let product = &self.unscaled * BigInt::from(n);
        let (q, r) = product.div_mod_floor(&pow10(self.scale));
        if r.is_zero() {
            q
        } else {
            q + BigInt::one()
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.to_string().parse().unwrap_or(f64::NAN)
    }
}

impl FromStr for Decimal {
    type Err = ParseDecimalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseDecimalError(s.to_string());
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if body.contains('.') && (frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit())) {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let magnitude = BigUint::parse_bytes(digits.as_bytes(), 10).ok_or_else(err)?;
        let sign = if negative { Sign::Minus } else { Sign::Plus };
        Ok(Decimal::new(
            BigInt::from_biguint(sign, magnitude),
            frac_part.len() as u32,
        ))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = self.unscaled.abs().to_string();
        let scale = self.scale as usize;
        if self.unscaled.is_negative() {
            f.write_str("-")?;
        }
        if scale == 0 {
            return f.write_str(&digits);
        }
        let padded = if digits.len() <= scale {
            format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
        } else {
            digits
        };
        let split = padded.len() - scale;
        write!(f, "{}.{}", &padded[..split], &padded[split..])
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        self.rescale(scale).unscaled.cmp(&other.rescale(scale).unscaled)
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_render_keep_scale() {
        assert_eq!(d("3.50").to_string(), "3.50");
        assert_eq!(d("-0.05").to_string(), "-0.05");
        assert_eq!(d("+12").to_string(), "12");
        assert_eq!(d("007").to_string(), "7");
        assert_eq!(d("3.50"), d("3.5"));
    }

    #[test]
    fn rejects_non_plain_numbers() {
        for bad in ["", "-", "3.", ".5", "1e5", "1,000", "3.5%"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
    }

    #[test]
    fn floor_handles_negatives() {
        assert_eq!(d("3.75").floor(), BigInt::from(3));
        assert_eq!(d("-3.75").floor(), BigInt::from(-4));
        assert_eq!(d("-4.0").floor(), BigInt::from(-4));
    }

    #[test]
    fn ceil_mul_is_exact() {
        assert_eq!(Decimal::from_f64(0.3).unwrap().ceil_mul(10), BigInt::from(3));
        assert_eq!(Decimal::from_f64(0.05).unwrap().ceil_mul(100), BigInt::from(5));
        assert_eq!(Decimal::from_f64(0.3).unwrap().ceil_mul(7), BigInt::from(3));
        assert_eq!(Decimal::from_f64(0.25).unwrap().ceil_mul(1), BigInt::from(1));
    }

    #[test]
    fn integer_detection() {
        assert!(d("4.00").is_integer());
        assert_eq!(d("4.00").to_integer(), Some(BigInt::from(4)));
        assert!(!d("4.01").is_integer());
    }
}
