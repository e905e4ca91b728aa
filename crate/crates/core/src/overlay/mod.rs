//! Chord ring federating the gateways: identifiers, routing state, the
//! distributed concept-to-gateway pointer index and its maintenance.

mod messages;
mod node;
mod store;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use messages::{
    FindRequest, FindResponse, LeaveNotice, NotifyRequest, NotifyResponse, PointerOp,
    PointerResponse, StateResponse,
};
pub use node::{Lookup, Overlay, OverlayConfig, OverlayStats, RoutingTable};
pub use store::{PointerRecord, PointerStore};

pub const DEFAULT_M: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("lookup did not converge")]
    LookupTimeout,
    #[error("bootstrap node unreachable")]
    BootstrapUnreachable,
    #[error("node is not part of a ring")]
    NotJoined,
}

/// First `m` bits of SHA-256 over the UTF-8 bytes of `text`.
pub fn hash_key(text: &str, m: u32) -> u64 {
    assert!((1..=64).contains(&m), "m must lie in 1..=64");
    let digest = Sha256::digest(text.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head) >> (64 - m)
}

pub fn ring_size(m: u32) -> u128 {
    1u128 << m
}

/// Clockwise distance from `a` to `b`.
pub fn distance(a: u64, b: u64, m: u32) -> u64 {
    ((u128::from(b) + ring_size(m) - u128::from(a)) % ring_size(m)) as u64
}

/// `x ∈ (a, b]` on the ring; `(a, a]` is the whole ring.
pub fn in_open_closed(x: u64, a: u64, b: u64) -> bool {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => a < x && x <= b,
        std::cmp::Ordering::Greater => x > a || x <= b,
        std::cmp::Ordering::Equal => true,
    }
}

/// `x ∈ (a, b)` on the ring; `(a, a)` is everything except `a`.
pub fn in_open(x: u64, a: u64, b: u64) -> bool {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => a < x && x < b,
        std::cmp::Ordering::Greater => x > a || x < b,
        std::cmp::Ordering::Equal => x != a,
    }
}

/// `(id + 2^i) mod 2^m`.
pub fn finger_start(id: u64, i: u32, m: u32) -> u64 {
    ((u128::from(id) + (1u128 << i)) % ring_size(m)) as u64
}

/// A ring member: its identifier and network address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRef {
    pub id: u64,
    pub addr: String,
}

impl NodeRef {
    pub fn new(addr: impl Into<String>, m: u32) -> Self {
        let addr = addr.into();
        Self {
            id: hash_key(&addr, m),
            addr,
        }
    }
}

/// Successor of `key` among `ids` (sorted-ring reference answer).
pub fn ring_successor(ids: &[u64], key: u64) -> Option<u64> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .copied()
        .find(|&id| id >= key)
        .or_else(|| sorted.first().copied())
}
