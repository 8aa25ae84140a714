//! Length bookkeeping. Everything downstream works in millimetres.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// A length stored in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Length(f64);

impl Length {
    pub const fn from_mm(mm: f64) -> Self {
        Length(mm)
    }

    pub fn from_um(um: f64) -> Self {
        Length(um * 1e-3)
    }

    pub fn from_nm(nm: f64) -> Self {
        Length(nm * 1e-6)
    }

    pub fn from_m(m: f64) -> Self {
        Length(m * 1e3)
    }

    pub const fn mm(self) -> f64 {
        self.0
    }

    pub fn um(self) -> f64 {
        self.0 * 1e3
    }

    pub fn nm(self) -> f64 {
        self.0 * 1e6
    }
}

impl fmt::Display for Length {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} mm", self.0)
    }
}

/// Parses `"650nm"`, `"40 um"`, `"40μm"`, `"0.4mm"` or `"1m"`. A bare number is
/// rejected: every user-facing length carries its unit.
impl FromStr for Length {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_alphabetic() || c == 'μ' || c == 'µ')
            .ok_or_else(|| Error::domain(format!("length `{s}` has no unit (nm, um, mm, m)")))?;
        let (value, unit) = s.split_at(split);
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::domain(format!("length `{s}` has an unparseable value")))?;
        let length = match unit.trim() {
            "nm" => Length::from_nm(value),
            "um" | "μm" | "µm" => Length::from_um(value),
            "mm" => Length::from_mm(value),
            "m" => Length::from_m(value),
            other => return Err(Error::domain(format!("unknown length unit `{other}`"))),
        };
        Ok(length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_lengths() {
        assert_eq!("650nm".parse::<Length>().unwrap().mm(), 650e-6);
        assert_eq!("40 um".parse::<Length>().unwrap().mm(), 0.04);
        assert_eq!("40μm".parse::<Length>().unwrap().mm(), 0.04);
        assert_eq!("0.4mm".parse::<Length>().unwrap().mm(), 0.4);
        assert_eq!("1m".parse::<Length>().unwrap().mm(), 1000.0);
    }

    #[test]
    fn rejects_untagged_or_unknown() {
        assert!("650".parse::<Length>().is_err());
        assert!("3 furlong".parse::<Length>().is_err());
        assert!("abc mm".parse::<Length>().is_err());
    }
}
