//! Exact non-negative fractions for popularity weights.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A share `numerator / denominator` kept exact.
///
/// A zero denominator is normalised to `0/1`, which is how "nobody used
/// this facet" weights are stored.
#[derive(Debug, Clone, Copy)]
pub struct Fraction {
    numerator: u64,
    denominator: u64,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { numerator: 0, denominator: 1 };
    pub const ONE: Fraction = Fraction { numerator: 1, denominator: 1 };

    /// Builds `numerator / denominator`. The fraction is not reduced so
    /// counts stay readable in exported tables; equality is by value.
    pub fn new(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            return Self::ZERO;
        }
        Self { numerator, denominator }
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    pub fn to_ratio(&self) -> BigRational {
        BigRational::new(BigInt::from(self.numerator), BigInt::from(self.denominator))
    }

    pub fn is_zero(&self) -> bool {
        self.numerator == 0
    }

    /// Rounded decimal used for display only.
    pub fn rounded(&self, decimals: i32) -> f64 {
        let scale = 10f64.powi(decimals);
        (self.to_f64() * scale).round() / scale
    }

    /// Exact product, reduced.
    pub fn mul(&self, other: &Fraction) -> Fraction {
        let num = self.numerator as u128 * other.numerator as u128;
        let den = self.denominator as u128 * other.denominator as u128;
        let g = gcd(num, den);
        let (num, den) = if g == 0 { (0, 1) } else { (num / g, den / g) };
        Fraction::new(
            u64::try_from(num).expect("fraction numerator overflow"),
            u64::try_from(den).expect("fraction denominator overflow"),
        )
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Fraction {}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.numerator as u128 * other.denominator as u128;
        let rhs = other.numerator as u128 * self.denominator as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Serialize, Deserialize)]
struct FractionRepr {
    numerator: u64,
    denominator: u64,
    #[serde(default, skip_deserializing)]
    value: f64,
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FractionRepr { numerator: self.numerator, denominator: self.denominator, value: self.to_f64() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = FractionRepr::deserialize(deserializer)?;
        Ok(Fraction::new(repr.numerator, repr.denominator))
    }
}

/// Renders an exact ratio as `n/d` in lowest terms.
pub fn ratio_to_string(ratio: &BigRational) -> String {
    if ratio.is_zero() {
        return "0/1".to_owned();
    }
    format!("{}/{}", ratio.numer(), ratio.denom())
}

/// Parses the `n/d` form written by [`ratio_to_string`].
pub fn ratio_from_str(text: &str) -> Option<BigRational> {
    let (num, den) = text.split_once('/')?;
    let num: BigInt = num.trim().parse().ok()?;
    let den: BigInt = den.trim().parse().ok()?;
    if den.is_zero() {
        return None;
    }
    Some(BigRational::new(num, den))
}

pub fn ratio_to_f64(ratio: &BigRational) -> f64 {
    ratio.to_f64().unwrap_or(f64::NAN)
}
