//! Exact byte quantities.
//!
//! Cost formulas divide sizes by device counts, so byte counts are kept as
//! exact rationals. Equalities such as `5.25P / 3.5P = 3/2` then hold exactly
//! rather than within a float tolerance.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Decimal gigabyte, the unit used for all human-readable reports.
pub const GB: i128 = 1_000_000_000;
/// Binary gibibyte, only used when `--binary-units` is requested.
pub const GIB: i128 = 1 << 30;

/// An exact, non-negative-by-convention byte count.
///
/// Serialized as a string: `"1120000000000"` for whole byte counts and
/// `"2450000000000/7"` style fractions otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bytes(Ratio<i128>);

impl Bytes {
    pub const ZERO: Bytes = Bytes(Ratio::new_raw(0, 1));

    pub fn new(bytes: i128) -> Self {
        Bytes(Ratio::from_integer(bytes))
    }

    pub fn from_ratio(r: Ratio<i128>) -> Self {
        Bytes(r)
    }

    /// `bytes * numer / denom`, exactly.
    pub fn scaled(self, numer: i128, denom: i128) -> Self {
        Bytes(self.0 * Ratio::new(numer, denom))
    }

    pub fn ratio(self) -> Ratio<i128> {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(self) -> bool {
        self.0.is_integer()
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn gb(self) -> f64 {
        (self.0 / GB).to_f64().unwrap_or(f64::NAN)
    }

    pub fn gib(self) -> f64 {
        (self.0 / GIB).to_f64().unwrap_or(f64::NAN)
    }

    /// Ratio of two byte counts, exactly. `None` if `other` is zero.
    pub fn ratio_to(self, other: Bytes) -> Option<Ratio<i128>> {
        if other.0.is_zero() {
            None
        } else {
            Some(self.0 / other.0)
        }
    }

    /// Human-readable size to three significant digits, whole units from
    /// 100 up: `368 GB`, `17.5 GB`, `8.75 GB`.
    pub fn human(self, binary: bool) -> String {
        let (v, unit) = if binary {
            (self.gib(), "GiB")
        } else {
            (self.gb(), "GB")
        };
        let decimals = match v.abs() {
            a if a == 0.0 || a >= 100.0 => 0,
            a if a >= 10.0 => 1,
            a if a >= 1.0 => 2,
            _ => 3,
        };
        // half away from zero, so 367.5 GB prints as 368 GB
        let scale = 10f64.powi(decimals);
        let text = format!("{:.*}", decimals as usize, (v * scale).round() / scale);
        let text = if text.contains('.') {
            text.trim_end_matches('0').trim_end_matches('.')
        } else {
            &text
        };
        format!("{text} {unit}")
    }
}

impl fmt::Display for Bytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid byte count `{0}`")]
pub struct ParseBytesError(String);

impl FromStr for Bytes {
    type Err = ParseBytesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseBytesError(s.to_string());
        match s.split_once('/') {
            None => s.trim().parse::<i128>().map(Bytes::new).map_err(|_| err()),
            Some((n, d)) => {
                let n = n.trim().parse::<i128>().map_err(|_| err())?;
                let d = d.trim().parse::<i128>().map_err(|_| err())?;
                if d == 0 {
                    return Err(err());
                }
                Ok(Bytes(Ratio::new(n, d)))
            }
        }
    }
}

impl Serialize for Bytes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bytes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add for Bytes {
    type Output = Bytes;
    fn add(self, rhs: Bytes) -> Bytes {
        Bytes(self.0 + rhs.0)
    }
}

impl AddAssign for Bytes {
    fn add_assign(&mut self, rhs: Bytes) {
        self.0 += rhs.0;
    }
}

impl Sub for Bytes {
    type Output = Bytes;
    fn sub(self, rhs: Bytes) -> Bytes {
        Bytes(self.0 - rhs.0)
    }
}

impl Mul<i128> for Bytes {
    type Output = Bytes;
    fn mul(self, rhs: i128) -> Bytes {
        Bytes(self.0 * rhs)
    }
}

impl Mul<Ratio<i128>> for Bytes {
    type Output = Bytes;
    fn mul(self, rhs: Ratio<i128>) -> Bytes {
        Bytes(self.0 * rhs)
    }
}

impl Div<i128> for Bytes {
    type Output = Bytes;
    fn div(self, rhs: i128) -> Bytes {
        Bytes(self.0 / rhs)
    }
}

impl Sum for Bytes {
    fn sum<I: Iterator<Item = Bytes>>(iter: I) -> Bytes {
        iter.fold(Bytes::ZERO, Add::add)
    }
}

/// `(n - 1) / n` as an exact ratio; zero for a single device.
pub fn ring_fraction(n: u64) -> Ratio<i128> {
    let n = n as i128;
    Ratio::new(n - 1, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        let b = Bytes::new(7).scaled(1, 2);
        assert_eq!(b.to_string(), "7/2");
        assert_eq!("7/2".parse::<Bytes>().unwrap(), b);
        assert_eq!("14/4".parse::<Bytes>().unwrap(), b);
        assert_eq!(Bytes::new(1120 * GB).to_string(), "1120000000000");
        assert!("1/0".parse::<Bytes>().is_err());
        assert!("abc".parse::<Bytes>().is_err());
    }

    #[test]
    fn human_rounds_half_up() {
        assert_eq!(Bytes::new(367_500_000_000).human(false), "368 GB");
        assert_eq!(Bytes::new(1120 * GB).human(false), "1120 GB");
        assert_eq!(Bytes::new(GIB).human(true), "1 GiB");
        assert_eq!(Bytes::new(17_500_000_000).human(false), "17.5 GB");
        assert_eq!(Bytes::new(8_750_000_000).human(false), "8.75 GB");
        assert_eq!(Bytes::new(500_000_000).human(false), "0.5 GB");
        assert_eq!(Bytes::ZERO.human(false), "0 GB");
    }

    #[test]
    fn ring_fraction_degenerate() {
        assert!(ring_fraction(1).is_zero());
        assert_eq!(ring_fraction(8), Ratio::new(7, 8));
    }
}
