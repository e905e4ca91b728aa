//! Flat JSON-LD envelope: one `@context`, an `@id`, a `@type` discriminator
//! and scalar/array members. No graphs, no nested nodes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{Identifier, Location, ModelError, QosProfile, ServiceDescription, ThingDescription};

pub const NAMESPACE: &str = "https://fogdisc.example/ns#";

const THING_TYPE: &str = "Thing";
const SERVICE_TYPE: &str = "Service";

const THING_FIELDS: &[&str] = &["name", "concept", "latitude", "longitude", "endpoint", "metadata"];
const SERVICE_FIELDS: &[&str] = &[
    "thing_id",
    "functional_concept",
    "inputs",
    "outputs",
    "keywords",
    "delay_ms",
    "price",
    "reliability",
    "availability",
    "security_level",
    "path",
    "sector",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("value of {0:?} out of range")]
    RangeViolation(String),
    #[error("unknown member {0:?}")]
    UnknownMember(String),
    #[error("member {0:?} has the wrong type")]
    WrongType(String),
}

impl From<ModelError> for DecodeError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::RangeViolation(f) => DecodeError::RangeViolation(f),
            ModelError::BadIdentifier(_) => DecodeError::WrongType("@id".into()),
            ModelError::UnknownQosField(f) => DecodeError::UnknownMember(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Description {
    Thing(ThingDescription),
    Service(ServiceDescription),
}

/// Deterministic text form: keys sorted, sets sorted, no whitespace.
pub trait Canonical {
    fn canonical(&self) -> String;
}

/// Canonical text of any serializable value.
///
/// `serde_json::Map` is ordered by key, so re-serializing through `Value`
/// yields sorted members at every level.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_value(value)
        .map(|v| v.to_string())
        .unwrap_or_default()
}

impl Canonical for Description {
    fn canonical(&self) -> String {
        encode_description(self)
    }
}

impl Canonical for ThingDescription {
    fn canonical(&self) -> String {
        thing_value(self).to_string()
    }
}

impl Canonical for ServiceDescription {
    fn canonical(&self) -> String {
        service_value(self).to_string()
    }
}

fn context(fields: &[&str]) -> Value {
    let mut ctx = Map::new();
    ctx.insert("fd".into(), Value::String(NAMESPACE.into()));
    for f in fields {
        ctx.insert((*f).into(), Value::String(format!("fd:{f}")));
    }
    Value::Object(ctx)
}

fn thing_value(t: &ThingDescription) -> Value {
    let mut obj = Map::new();
    obj.insert("@context".into(), context(THING_FIELDS));
    obj.insert("@type".into(), THING_TYPE.into());
    if let Some(id) = t.id {
        obj.insert("@id".into(), id.to_string().into());
    }
    obj.insert("name".into(), t.name.clone().into());
    obj.insert("concept".into(), t.concept.clone().into());
    obj.insert("latitude".into(), json!(t.location.latitude));
    obj.insert("longitude".into(), json!(t.location.longitude));
    obj.insert("endpoint".into(), t.endpoint.clone().into());
    obj.insert("metadata".into(), json!(t.metadata));
    Value::Object(obj)
}

fn service_value(s: &ServiceDescription) -> Value {
    let mut obj = Map::new();
    obj.insert("@context".into(), context(SERVICE_FIELDS));
    obj.insert("@type".into(), SERVICE_TYPE.into());
    if let Some(id) = s.id {
        obj.insert("@id".into(), id.to_string().into());
    }
    if let Some(thing) = s.thing_id {
        obj.insert("thing_id".into(), thing.to_string().into());
    }
    obj.insert("functional_concept".into(), s.functional_concept.clone().into());
    obj.insert("inputs".into(), json!(s.inputs));
    obj.insert("outputs".into(), json!(s.outputs));
    obj.insert("keywords".into(), json!(s.keywords));
    obj.insert("delay_ms".into(), json!(s.qos.delay_ms));
    obj.insert("price".into(), json!(s.qos.price));
    obj.insert("reliability".into(), json!(s.qos.reliability));
    obj.insert("availability".into(), json!(s.qos.availability));
    obj.insert("security_level".into(), json!(s.qos.security_level));
    obj.insert("path".into(), s.path.clone().into());
    if let Some(sector) = s.sector {
        obj.insert("sector".into(), json!(sector));
    }
    Value::Object(obj)
}

fn description_value(desc: &Description) -> Value {
    match desc {
        Description::Thing(t) => thing_value(t),
        Description::Service(s) => service_value(s),
    }
}

pub fn encode_description(desc: &Description) -> String {
    description_value(desc).to_string()
}

pub fn decode_description(text: &str) -> Result<Description, DecodeError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| DecodeError::MalformedJson(e.to_string()))?;
    description_from_value(&value)
}

/// Registration bundle: a JSON array whose first element is the thing and
/// the rest its services.
pub fn encode_registration(thing: &ThingDescription, services: &[ServiceDescription]) -> String {
    let mut items = vec![thing_value(thing)];
    items.extend(services.iter().map(service_value));
    Value::Array(items).to_string()
}

pub fn decode_registration(
    text: &str,
) -> Result<(ThingDescription, Vec<ServiceDescription>), DecodeError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| DecodeError::MalformedJson(e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| DecodeError::WrongType("registration".into()))?;
    let (first, rest) = items
        .split_first()
        .ok_or_else(|| DecodeError::MissingField("thing".into()))?;
    let thing = match description_from_value(first)? {
        Description::Thing(t) => t,
        Description::Service(_) => return Err(DecodeError::WrongType("@type".into())),
    };
    let mut services = Vec::with_capacity(rest.len());
    for item in rest {
        match description_from_value(item)? {
            Description::Service(s) => services.push(s),
            Description::Thing(_) => return Err(DecodeError::WrongType("@type".into())),
        }
    }
    Ok((thing, services))
}

fn description_from_value(value: &Value) -> Result<Description, DecodeError> {
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::WrongType("description".into()))?;
    let ctx = obj
        .get("@context")
        .ok_or_else(|| DecodeError::MissingField("@context".into()))?;
    if !ctx.is_object() {
        return Err(DecodeError::WrongType("@context".into()));
    }
    let ty = obj
        .get("@type")
        .ok_or_else(|| DecodeError::MissingField("@type".into()))?
        .as_str()
        .ok_or_else(|| DecodeError::WrongType("@type".into()))?;
    let fields = match ty {
        THING_TYPE => THING_FIELDS,
        SERVICE_TYPE => SERVICE_FIELDS,
        _ => return Err(DecodeError::WrongType("@type".into())),
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "@context" | "@type" | "@id") && !fields.contains(&key.as_str()) {
            return Err(DecodeError::UnknownMember(key.clone()));
        }
    }
    let fields = Fields(obj);
    let id = fields.opt_identifier("@id")?;
    if ty == THING_TYPE {
        let location = Location {
            latitude: fields.number("latitude")?,
            longitude: fields.number("longitude")?,
        };
        location.validate()?;
        Ok(Description::Thing(ThingDescription {
            id,
            name: fields.text("name")?,
            concept: fields.text("concept")?,
            location,
            endpoint: fields.text("endpoint")?,
            metadata: fields.text_map("metadata")?,
        }))
    } else {
        let security = fields.number("security_level")?;
        if security.fract() != 0.0 || !(0.0..=255.0).contains(&security) {
            return Err(DecodeError::RangeViolation("security_level".into()));
        }
        let qos = QosProfile {
            delay_ms: fields.number("delay_ms")?,
            price: fields.number("price")?,
            reliability: fields.number("reliability")?,
            availability: fields.number("availability")?,
            security_level: security as u8,
        };
        qos.validate()?;
        let sector = match obj.get("sector") {
            None => None,
            Some(v) => Some(
                v.as_u64()
                    .and_then(|n| u32::try_from(n).ok())
                    .ok_or_else(|| DecodeError::WrongType("sector".into()))?,
            ),
        };
        Ok(Description::Service(ServiceDescription {
            id,
            thing_id: fields.opt_identifier("thing_id")?,
            functional_concept: fields.text("functional_concept")?,
            inputs: fields.text_set("inputs")?,
            outputs: fields.text_set("outputs")?,
            keywords: fields.text_set("keywords")?,
            qos,
            path: fields.text("path")?,
            sector,
        }))
    }
}

struct Fields<'a>(&'a Map<String, Value>);

impl Fields<'_> {
    fn get(&self, name: &str) -> Result<&Value, DecodeError> {
        self.0
            .get(name)
            .ok_or_else(|| DecodeError::MissingField(name.into()))
    }

    fn text(&self, name: &str) -> Result<String, DecodeError> {
        self.get(name)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| DecodeError::WrongType(name.into()))
    }

    fn number(&self, name: &str) -> Result<f64, DecodeError> {
        self.get(name)?
            .as_f64()
            .ok_or_else(|| DecodeError::WrongType(name.into()))
    }

    fn opt_identifier(&self, name: &str) -> Result<Option<Identifier>, DecodeError> {
        match self.0.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .and_then(|s| s.parse().ok())
                .map(Some)
                .ok_or_else(|| DecodeError::WrongType(name.into())),
        }
    }

    fn text_set(&self, name: &str) -> Result<BTreeSet<String>, DecodeError> {
        let wrong = || DecodeError::WrongType(name.into());
        self.get(name)?
            .as_array()
            .ok_or_else(wrong)?
            .iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(wrong))
            .collect()
    }

    fn text_map(&self, name: &str) -> Result<BTreeMap<String, String>, DecodeError> {
        let wrong = || DecodeError::WrongType(name.into());
        self.get(name)?
            .as_object()
            .ok_or_else(wrong)?
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_str().ok_or_else(wrong)?.to_owned())))
            .collect()
    }
}
