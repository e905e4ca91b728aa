use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Non-functional quality vector attached to every service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosProfile {
    pub delay_ms: f64,
    pub price: f64,
    pub reliability: f64,
    pub availability: f64,
    pub security_level: u8,
}

/// Upper bound of [`QosProfile::security_level`].
pub const MAX_SECURITY_LEVEL: u8 = 5;

impl QosProfile {
    pub fn new(
        delay_ms: f64,
        price: f64,
        reliability: f64,
        availability: f64,
        security_level: u8,
    ) -> Result<Self, ModelError> {
        let q = Self {
            delay_ms,
            price,
            reliability,
            availability,
            security_level,
        };
        q.validate()?;
        Ok(q)
    }

    /// Neutral element of sequential aggregation.
    pub fn identity() -> Self {
        Self {
            delay_ms: 0.0,
            price: 0.0,
            reliability: 1.0,
            availability: 1.0,
            security_level: MAX_SECURITY_LEVEL,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for field in QosField::ALL {
            if !field.in_range(self.get(field)) {
                return Err(ModelError::RangeViolation(field.name().into()));
            }
        }
        Ok(())
    }

    pub fn get(&self, field: QosField) -> f64 {
        match field {
            QosField::DelayMs => self.delay_ms,
            QosField::Price => self.price,
            QosField::Reliability => self.reliability,
            QosField::Availability => self.availability,
            QosField::SecurityLevel => f64::from(self.security_level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosField {
    DelayMs,
    Price,
    Reliability,
    Availability,
    SecurityLevel,
}

/// Whether larger values of a field are better or worse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Cost,
    Benefit,
}

impl QosField {
    pub const ALL: [QosField; 5] = [
        QosField::DelayMs,
        QosField::Price,
        QosField::Reliability,
        QosField::Availability,
        QosField::SecurityLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QosField::DelayMs => "delay_ms",
            QosField::Price => "price",
            QosField::Reliability => "reliability",
            QosField::Availability => "availability",
            QosField::SecurityLevel => "security_level",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            QosField::DelayMs | QosField::Price => Direction::Cost,
            _ => Direction::Benefit,
        }
    }

    pub fn in_range(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            QosField::DelayMs | QosField::Price => v >= 0.0,
            QosField::Reliability | QosField::Availability => (0.0..=1.0).contains(&v),
            QosField::SecurityLevel => {
                (0.0..=f64::from(MAX_SECURITY_LEVEL)).contains(&v) && v.fract() == 0.0
            }
        }
    }
}

impl fmt::Display for QosField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QosField {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QosField::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ModelError::UnknownQosField(s.to_string()))
    }
}

/// Numeric comparison used by QoS constraints and query filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub const ALL: [Comparator; 6] = [
        Comparator::Lt,
        Comparator::Le,
        Comparator::Gt,
        Comparator::Ge,
        Comparator::Eq,
        Comparator::Ne,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
        }
    }

    /// Splits a leading comparator off `s`; no comparator means equality.
    pub fn split_prefix(s: &str) -> (Comparator, &str) {
        for (sym, c) in [("<=", Comparator::Le), (">=", Comparator::Ge), ("!=", Comparator::Ne)] {
            if let Some(rest) = s.strip_prefix(sym) {
                return (c, rest);
            }
        }
        for (sym, c) in [("<", Comparator::Lt), (">", Comparator::Gt), ("=", Comparator::Eq)] {
            if let Some(rest) = s.strip_prefix(sym) {
                return (c, rest);
            }
        }
        (Comparator::Eq, s)
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
