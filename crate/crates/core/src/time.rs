//! Month-resolution calendar arithmetic.
//!
//! Dates are counted in whole months since year 0 (`year * 12 + month - 1`),
//! which keeps sample dates, introduction dates and solver frames on one
//! integer axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(pub i64);

impl Month {
    pub fn from_ym(year: i64, month: u32) -> Self {
        Month(year * 12 + i64::from(month) - 1)
    }

    pub fn year(self) -> i64 {
        self.0.div_euclid(12)
    }

    /// Calendar month, 1..=12.
    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn index(self) -> i64 {
        self.0
    }

    pub fn offset(self, months: i64) -> Self {
        Month(self.0 + months)
    }

    /// Months elapsed from `earlier` to `self`.
    pub fn since(self, earlier: Month) -> i64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || Error::Config(format!("invalid date {s:?}, expected YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year: i64 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Month::from_ym(year, month))
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let m: Month = "2006-02".parse().unwrap();
        assert_eq!(m.year(), 2006);
        assert_eq!(m.month(), 2);
        assert_eq!(m.to_string(), "2006-02");
        assert_eq!(m.offset(11).to_string(), "2007-01");
        assert_eq!(Month::from_ym(2007, 1).since(m), 11);
    }

    #[test]
    fn rejects_garbage() {
        assert!("2006".parse::<Month>().is_err());
        assert!("2006-13".parse::<Month>().is_err());
        assert!("20x6-01".parse::<Month>().is_err());
    }
}
