//! Industry classification codes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Textual form of the catch-all category for firms without a known code.
pub const UNCLASSIFIED: &str = "unclassified";

/// A 4-digit NACE class, or the catch-all bucket for firms whose class is
/// unknown.
///
/// Codes order numerically; `Unclassified` sorts after every real code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Nace {
    Code(u16),
    Unclassified,
}

impl Nace {
    pub fn new(code: u16) -> Result<Self, Error> {
        if code > 9999 {
            return Err(Error::InvalidNace(code.to_string()));
        }
        Ok(Nace::Code(code))
    }

    /// Two-digit division (`01`..`99`), `None` for the unclassified bucket.
    pub fn division(&self) -> Option<u8> {
        match self {
            Nace::Code(c) => Some((c / 100) as u8),
            Nace::Unclassified => None,
        }
    }

    /// Divisions 01-45 produce physical goods; 46-99 are trade and
    /// services. Unclassified firms count as non-physical.
    pub fn is_physical(&self) -> bool {
        matches!(self.division(), Some(d) if (1..=45).contains(&d))
    }

    /// Parses a field from an input file; an empty field is the
    /// unclassified bucket.
    pub fn parse_field(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case(UNCLASSIFIED) {
            return Ok(Nace::Unclassified);
        }
        s.parse()
    }
}

impl FromStr for Nace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s == UNCLASSIFIED {
            return Ok(Nace::Unclassified);
        }
        if s.len() != 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidNace(s.to_string()));
        }
        Ok(Nace::Code(s.parse().expect("four ascii digits")))
    }
}

impl fmt::Display for Nace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nace::Code(c) => write!(f, "{c:04}"),
            Nace::Unclassified => f.write_str(UNCLASSIFIED),
        }
    }
}

impl TryFrom<String> for Nace {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Nace> for String {
    fn from(n: Nace) -> String {
        n.to_string()
    }
}
