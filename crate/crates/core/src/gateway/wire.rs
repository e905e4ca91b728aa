//! JSON bodies exchanged between gateways and with the cloud.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::matchmaker::{Degree, DiscoveryRequest, MatchResult};
use crate::model::{decode_description, encode_description, Description, Location, ServiceDescription};

/// `POST /dht/forward`: a discovery request relayed from another gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardRequest {
    pub request: DiscoveryRequest,
    pub origin: String,
}

/// A match together with the full service description (JSON-LD), so the
/// receiver can rank on QoS and render links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteMatch {
    pub gateway: String,
    pub degree: Degree,
    pub score: f64,
    pub service: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchList {
    pub matches: Vec<RemoteMatch>,
}

/// `POST /rd-query`: what the cloud asks a gateway for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GatewayQuery {
    /// Local matchmaking only; never forwarded through the overlay.
    Discover { request: DiscoveryRequest },
    /// Services producing any of `concepts` (or a specialization of one).
    Outputs { concepts: Vec<String> },
}

/// `POST /gw/announce`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Announcement {
    pub address: String,
    pub ordinal: u32,
    pub location: Location,
    pub concepts: Vec<String>,
}

/// `POST /gw/removed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalNotice {
    pub gateway: String,
    pub service: String,
    pub concept: String,
}

impl RemoteMatch {
    pub fn new(m: &MatchResult, s: &ServiceDescription) -> Self {
        let text = encode_description(&Description::Service(s.clone()));
        Self {
            gateway: m.gateway.clone(),
            degree: m.degree,
            score: m.score,
            service: serde_json::from_str(&text).unwrap_or(Value::Null),
        }
    }

    /// The match and the decoded description; `None` when the description
    /// is malformed or lacks an id.
    pub fn decode(&self) -> Option<(MatchResult, ServiceDescription)> {
        let Ok(Description::Service(s)) = decode_description(&self.service.to_string()) else {
            return None;
        };
        let m = MatchResult {
            service_id: s.id?,
            gateway: self.gateway.clone(),
            degree: self.degree,
            score: self.score,
        };
        Some((m, s))
    }
}
