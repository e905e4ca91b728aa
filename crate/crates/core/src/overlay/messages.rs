//! JSON bodies of the `/dht/*` requests and responses.

use serde::{Deserialize, Serialize};

use super::{NodeRef, PointerRecord};

/// `POST /dht/find`: one step of an iterative lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindRequest {
    pub key: u64,
    /// Nodes the originator found unreachable.
    pub exclude: Vec<u64>,
}

/// `found` names the successor of the key; otherwise `node` is the next
/// node to ask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindResponse {
    pub found: bool,
    pub node: NodeRef,
}

/// `POST /dht/state`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateResponse {
    pub predecessor: Option<NodeRef>,
    pub successors: Vec<NodeRef>,
}

/// `POST /dht/notify`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotifyRequest {
    pub node: NodeRef,
}

/// Records the notified node handed over to its new predecessor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotifyResponse {
    pub records: Vec<PointerRecord>,
}

/// `POST /dht/pointer`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum PointerOp {
    Publish { concept: String, holder: String },
    Unpublish { concept: String, holder: String },
    Get { concept: String },
    Transfer { records: Vec<PointerRecord> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerResponse {
    pub holders: Vec<String>,
}

/// `POST /dht/leave`, sent by a departing node to its predecessor and its
/// successor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaveNotice {
    pub node: NodeRef,
    pub predecessor: Option<NodeRef>,
    pub successors: Vec<NodeRef>,
    pub records: Vec<PointerRecord>,
}
