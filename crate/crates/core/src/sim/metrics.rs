//! What a scenario run reports. Dumped as canonical JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ring::{RingAudit, RingSnapshot};
use super::scenario::Expect;
use super::NetStats;
use crate::cloud::CloudStats;
use crate::gateway::GatewayStats;
use crate::model::canonical_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub at_ms: u64,
    pub gateway: String,
    pub query: String,
    /// Response code such as `2.05`, or `timeout`.
    pub code: String,
    pub links: usize,
    pub latency_ms: f64,
    pub overlay_hops: u32,
    pub remote: bool,
    pub success: bool,
    /// Successor and predecessor pointers were all correct when issued.
    pub stabilized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionRecord {
    pub at_ms: u64,
    pub code: String,
    pub stages: usize,
    pub cache_hit: bool,
    pub fanout_messages: u64,
    pub latency_ms: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub at_ms: u64,
    pub audit: RingAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tally {
    pub ok: u64,
    pub failed: u64,
}

impl Tally {
    pub fn record(&mut self, ok: bool) {
        if ok {
            self.ok += 1;
        } else {
            self.failed += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub end_ms: u64,
    pub registrations: Tally,
    pub refreshes: Tally,
    pub removals: Tally,
    pub queries: Vec<QueryRecord>,
    pub compositions: Vec<CompositionRecord>,
    pub messages: NetStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudStats>,
    pub gateways: BTreeMap<String, GatewayStats>,
    pub audits: Vec<AuditRecord>,
    pub ring: RingSnapshot,
    pub ring_audit: RingAudit,
    pub assertions: Vec<Assertion>,
}

impl Metrics {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Canonical JSON followed by a newline.
    pub fn dump(&self) -> String {
        let mut s = canonical_json(self);
        s.push('\n');
        s
    }

    pub fn query_success_rate(&self, stabilized_only: bool) -> Option<f64> {
        let qs: Vec<&QueryRecord> = self
            .queries
            .iter()
            .filter(|q| !stabilized_only || q.stabilized)
            .collect();
        if qs.is_empty() {
            return None;
        }
        Some(qs.iter().filter(|q| q.success).count() as f64 / qs.len() as f64)
    }
}
