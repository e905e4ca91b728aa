use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IdKind {
    Thing,
    Service,
    Gateway,
    Composite,
}

impl IdKind {
    pub fn letter(self) -> char {
        match self {
            IdKind::Thing => 't',
            IdKind::Service => 's',
            IdKind::Gateway => 'g',
            IdKind::Composite => 'c',
        }
    }

    fn from_letter(c: &str) -> Option<Self> {
        Some(match c {
            "t" => IdKind::Thing,
            "s" => IdKind::Service,
            "g" => IdKind::Gateway,
            "c" => IdKind::Composite,
            _ => return None,
        })
    }
}

/// Gateway-scoped identifier rendered as `<kind>-<gateway>-<sequence>`, e.g. `t-3-17`.
///
/// Ordering is by kind, then gateway ordinal, then sequence (numerically).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier {
    pub kind: IdKind,
    pub gateway_ordinal: u32,
    pub sequence: u32,
}

impl Identifier {
    pub fn new(kind: IdKind, gateway_ordinal: u32, sequence: u32) -> Self {
        Self {
            kind,
            gateway_ordinal,
            sequence,
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            self.kind.letter(),
            self.gateway_ordinal,
            self.sequence
        )
    }
}

impl FromStr for Identifier {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadIdentifier(s.to_string());
        let mut parts = s.split('-');
        let kind = parts.next().and_then(IdKind::from_letter).ok_or_else(bad)?;
        let gw = parts.next().ok_or_else(bad)?;
        let seq = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() || !is_decimal(gw) || !is_decimal(seq) {
            return Err(bad());
        }
        Ok(Identifier {
            kind,
            gateway_ordinal: gw.parse().map_err(|_| bad())?,
            sequence: seq.parse().map_err(|_| bad())?,
        })
    }
}

// rejects "+1" and leading zeros so that parse(render(x)) is the only spelling
fn is_decimal(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'))
}

impl Serialize for Identifier {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
