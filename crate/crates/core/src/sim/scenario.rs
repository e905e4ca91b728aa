//! Scenario files: the deployment, the devices and a timeline of actions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::LinkSpec;
use crate::cloud::{CloudConfig, CompositionRequest};
use crate::gateway::GatewayConfig;
use crate::matchmaker::parse_discovery_params;
use crate::model::decode_registration;
use crate::ontology::{load_taxonomy, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("scenario parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown address {0}")]
    UnknownAddress(String),
    #[error("taxonomy {path}: {msg}")]
    Taxonomy { path: String, msg: String },
}

fn fog_link() -> LinkSpec {
    LinkSpec::new(super::FOG_LATENCY_MS, 0.0)
}
fn cloud_link() -> LinkSpec {
    LinkSpec::new(super::CLOUD_LATENCY_MS, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    #[serde(default)]
    pub drop_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Links {
    #[serde(default = "fog_link")]
    pub fog: LinkSpec,
    #[serde(default = "cloud_link")]
    pub cloud: LinkSpec,
    #[serde(default)]
    pub overrides: Vec<LinkOverride>,
}

impl Default for Links {
    fn default() -> Self {
        Self {
            fog: fog_link(),
            cloud: cloud_link(),
            overrides: Vec::new(),
        }
    }
}

fn default_stabilize() -> u64 {
    1000
}
fn default_fix_fingers() -> u64 {
    250
}
fn default_check_predecessor() -> u64 {
    2000
}
fn default_expire() -> u64 {
    5000
}

/// Periods of the node timers, in simulated milliseconds. Republish and
/// announce periods come from each gateway's configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Maintenance {
    #[serde(default = "default_stabilize")]
    pub stabilize_ms: u64,
    #[serde(default = "default_fix_fingers")]
    pub fix_fingers_ms: u64,
    #[serde(default = "default_check_predecessor")]
    pub check_predecessor_ms: u64,
    #[serde(default = "default_expire")]
    pub expire_ms: u64,
}

impl Default for Maintenance {
    fn default() -> Self {
        Self {
            stabilize_ms: default_stabilize(),
            fix_fingers_ms: default_fix_fingers(),
            check_predecessor_ms: default_check_predecessor(),
            expire_ms: default_expire(),
        }
    }
}

fn yes() -> bool {
    true
}

/// A device: registers its thing and services at `gateway`. `registration`
/// is the JSON-LD array sent as the POST /rd payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    pub gateway: String,
    pub registration: Value,
    /// Refresh the lease every third of the gateway's lifetime.
    #[serde(default = "yes")]
    pub auto_refresh: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Hit,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Register { device: String },
    Refresh { device: String },
    RemoveDevice { device: String },
    Query {
        gateway: String,
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<Expect>,
    },
    Compose {
        request: CompositionRequest,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect: Option<Expect>,
    },
    KillGateway { gateway: String },
    JoinGateway { gateway: String },
    LeaveGateway { gateway: String },
    /// Records a ring audit; with `republish` every gateway republishes
    /// first.
    Audit {
        #[serde(default)]
        republish: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

/// Checks evaluated after the run; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Every query with an `expect` gets what it expects.
    #[serde(default)]
    pub query_expectations: bool,
    /// Every query returns at least one link.
    #[serde(default)]
    pub all_queries_succeed: bool,
    /// Success rate among queries issued while the ring was stabilized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_stabilized_success_rate: Option<f64>,
    /// Local hits report zero overlay hops and remote hits at most m.
    #[serde(default)]
    pub hop_bounds: bool,
    /// Every composition with an `expect` gets what it expects.
    #[serde(default)]
    pub composition_expectations: bool,
    /// The last recorded ring audit passes.
    #[serde(default)]
    pub final_ring_audit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub links: Links,
    #[serde(default)]
    pub maintenance: Maintenance,
    pub gateways: Vec<GatewayConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudConfig>,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub timeline: Vec<TimedAction>,
    /// Extra simulated time after the last action.
    #[serde(default)]
    pub settle_ms: u64,
    #[serde(default)]
    pub expect: Expectations,
}

/// A parsed scenario with its taxonomies loaded.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub bytes: Vec<u8>,
    pub taxonomies: BTreeMap<String, Arc<Taxonomy>>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn gateway(&self, addr: &str) -> Option<&GatewayConfig> {
        self.gateways.iter().find(|g| g.address == addr)
    }

    /// Gateways that only come up through a `join_gateway` action.
    pub fn late_joiners(&self) -> BTreeSet<String> {
        self.timeline
            .iter()
            .filter_map(|t| match &t.action {
                Action::JoinGateway { gateway } => Some(gateway.clone()),
                _ => None,
            })
            .collect()
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.gateways.is_empty() {
            return invalid("no gateways".into());
        }
        if self.gateways.iter().any(|g| g.overlay_m != self.gateways[0].overlay_m) {
            return invalid("gateways disagree on overlay_m".into());
        }
        let mut addrs = BTreeSet::new();
        let mut ordinals = BTreeSet::new();
        for g in &self.gateways {
            g.validate()
                .map_err(|e| ScenarioError::Invalid(format!("gateway {}: {e}", g.address)))?;
            if !addrs.insert(g.address.clone()) {
                return invalid(format!("duplicate gateway address {}", g.address));
            }
            if !ordinals.insert(g.ordinal) {
                return invalid(format!("duplicate gateway ordinal {}", g.ordinal));
            }
            if let Some(c) = &g.cloud {
                if self.cloud.as_ref().is_none_or(|cl| &cl.address != c) {
                    return Err(ScenarioError::UnknownAddress(c.clone()));
                }
            }
        }
        if let Some(c) = &self.cloud {
            if addrs.contains(&c.address) {
                return invalid(format!("cloud address {} is also a gateway", c.address));
            }
        }
        for l in &self.links.overrides {
            if !(0.0..=1.0).contains(&l.drop_prob) || l.latency_ms < 0.0 {
                return invalid(format!("link {}-{} out of range", l.a, l.b));
            }
        }
        let late = self.late_joiners();
        if late.len() == self.gateways.len() {
            return invalid("every gateway joins late; nothing to bootstrap".into());
        }
        let mut devices = BTreeSet::new();
        for d in &self.devices {
            if !devices.insert(d.name.clone()) {
                return invalid(format!("duplicate device {}", d.name));
            }
            if !addrs.contains(&d.gateway) {
                return Err(ScenarioError::UnknownAddress(d.gateway.clone()));
            }
            decode_registration(&d.registration.to_string())
                .map_err(|e| ScenarioError::Invalid(format!("device {}: {e}", d.name)))?;
        }
        let mut last = 0;
        for t in &self.timeline {
            if t.at_ms < last {
                return invalid(format!("timeline not sorted at {} ms", t.at_ms));
            }
            last = t.at_ms;
            match &t.action {
                Action::Register { device }
                | Action::Refresh { device }
                | Action::RemoveDevice { device } => {
                    if !devices.contains(device) {
                        return invalid(format!("unknown device {device}"));
                    }
                }
                Action::Query { gateway, query, .. } => {
                    if !addrs.contains(gateway) {
                        return Err(ScenarioError::UnknownAddress(gateway.clone()));
                    }
                    parse_discovery_params(&[query])
                        .map_err(|e| ScenarioError::Invalid(format!("query {query}: {e}")))?;
                }
                Action::Compose { request, .. } => {
                    if self.cloud.is_none() {
                        return invalid("compose action without a cloud".into());
                    }
                    request
                        .validate()
                        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                }
                Action::KillGateway { gateway }
                | Action::JoinGateway { gateway }
                | Action::LeaveGateway { gateway } => {
                    if !addrs.contains(gateway) {
                        return Err(ScenarioError::UnknownAddress(gateway.clone()));
                    }
                }
                Action::Audit { .. } => {}
            }
        }
        Ok(())
    }

    /// Reads, parses and validates a scenario file and loads every taxonomy
    /// it names, relative to the file's directory.
    pub fn load(path: &Path) -> Result<LoadedScenario, ScenarioError> {
        let bytes = std::fs::read(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let scenario = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let taxonomies = scenario.load_taxonomies(&base)?;
        Ok(LoadedScenario {
            scenario,
            bytes,
            taxonomies,
        })
    }

    pub fn load_taxonomies(&self, base: &Path) -> Result<BTreeMap<String, Arc<Taxonomy>>, ScenarioError> {
        self.validate()?;
        let mut paths: Vec<&str> = self.gateways.iter().map(|g| g.taxonomy_path.as_str()).collect();
        if let Some(c) = &self.cloud {
            paths.push(&c.taxonomy_path);
        }
        let mut out = BTreeMap::new();
        for p in paths {
            if out.contains_key(p) {
                continue;
            }
            let full: PathBuf = base.join(p);
            let text = std::fs::read_to_string(&full).map_err(|e| ScenarioError::Io {
                path: full.display().to_string(),
                msg: e.to_string(),
            })?;
            let t = load_taxonomy(&text).map_err(|e| ScenarioError::Taxonomy {
                path: p.to_string(),
                msg: e.to_string(),
            })?;
            out.insert(p.to_string(), Arc::new(t));
        }
        Ok(out)
    }
}
