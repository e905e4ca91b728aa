//! Domain records shared by every layer and their JSON-LD envelope.

mod ident;
mod jsonld;
mod qos;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ident::{IdKind, Identifier};
pub use jsonld::{
    canonical_json, decode_description, decode_registration, encode_description,
    encode_registration, Canonical, DecodeError, Description, NAMESPACE,
};
pub use qos::{Comparator, Direction, QosField, QosProfile, MAX_SECURITY_LEVEL};

/// Concept IRIs are kept as plain text (`iri:TemperatureSensor`).
pub type Concept = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("value out of range for {0}")]
    RangeViolation(String),
    #[error("malformed identifier {0:?}")]
    BadIdentifier(String),
    #[error("unknown QoS field {0:?}")]
    UnknownQosField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
}

impl Location {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, ModelError> {
        let loc = Self {
            latitude,
            longitude,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(ModelError::RangeViolation("latitude".into()));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(ModelError::RangeViolation("longitude".into()));
        }
        Ok(())
    }
}

/// Entry of the local thing directory: a physical object and its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ThingDescription {
    pub id: Option<Identifier>,
    pub name: String,
    pub concept: Concept,
    pub location: Location,
    pub endpoint: String,
    pub metadata: BTreeMap<String, String>,
}

/// Entry of the local service registry.
///
/// `thing_id` and `sector` are stamped by the gateway during registration, so
/// a device-authored description may leave them out.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDescription {
    pub id: Option<Identifier>,
    pub thing_id: Option<Identifier>,
    pub functional_concept: Concept,
    pub inputs: BTreeSet<Concept>,
    pub outputs: BTreeSet<Concept>,
    pub keywords: BTreeSet<String>,
    pub qos: QosProfile,
    pub path: String,
    pub sector: Option<u32>,
}

impl ThingDescription {
    pub fn new(name: impl Into<String>, concept: impl Into<String>, location: Location) -> Self {
        Self {
            id: None,
            name: name.into(),
            concept: concept.into(),
            location,
            endpoint: String::new(),
            metadata: BTreeMap::new(),
        }
    }
}

impl ServiceDescription {
    pub fn new(functional_concept: impl Into<String>, path: impl Into<String>, qos: QosProfile) -> Self {
        Self {
            id: None,
            thing_id: None,
            functional_concept: functional_concept.into(),
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
            keywords: BTreeSet::new(),
            qos,
            path: path.into(),
            sector: None,
        }
    }
}
