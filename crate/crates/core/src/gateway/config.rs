use serde::{Deserialize, Serialize};

use crate::matchmaker::{MatchWeights, DEFAULT_MIN_SIMILARITY};
use crate::model::Location;
use crate::overlay::{OverlayConfig, DEFAULT_M};
use crate::ranking::WeightVector;

fn default_m() -> u32 {
    DEFAULT_M
}
fn default_successors() -> usize {
    3
}
fn default_fanout() -> usize {
    3
}
fn default_min_similarity() -> f64 {
    DEFAULT_MIN_SIMILARITY
}
fn default_lifetime() -> u64 {
    90
}
fn default_republish() -> u64 {
    30
}
fn default_announce() -> u64 {
    60
}
fn default_location() -> Location {
    Location {
        latitude: 0.0,
        longitude: 0.0,
    }
}

/// Settings of one fog gateway; every field but `ordinal`, `address` and
/// `taxonomy_path` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub ordinal: u32,
    pub address: String,
    #[serde(default = "default_m")]
    pub overlay_m: u32,
    #[serde(default)]
    pub bootstrap: Option<String>,
    pub taxonomy_path: String,
    #[serde(default)]
    pub score_weights: MatchWeights,
    #[serde(default)]
    pub qos_weights: WeightVector,
    #[serde(default = "default_min_similarity")]
    pub min_similarity: f64,
    #[serde(default = "default_lifetime")]
    pub lifetime_s: u64,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    #[serde(default = "default_successors")]
    pub successor_list: usize,
    #[serde(default = "default_republish")]
    pub republish_s: u64,
    #[serde(default = "default_announce")]
    pub announce_s: u64,
    #[serde(default = "default_location")]
    pub location: Location,
    /// Address of the cloud node receiving announcements and removal events.
    #[serde(default)]
    pub cloud: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("lifetime_s must be positive")]
    ZeroLifetime,
    #[error("overlay_m must lie in 1..=32")]
    BadRingSize,
    #[error("min_similarity must lie in [0, 1]")]
    BadThreshold,
    #[error("score weights must be non-negative and sum to 1")]
    BadScoreWeights,
    #[error("location out of range")]
    BadLocation,
}

impl GatewayConfig {
    pub fn new(ordinal: u32, address: impl Into<String>, taxonomy_path: impl Into<String>) -> Self {
        Self {
            ordinal,
            address: address.into(),
            overlay_m: DEFAULT_M,
            bootstrap: None,
            taxonomy_path: taxonomy_path.into(),
            score_weights: MatchWeights::default(),
            qos_weights: WeightVector::default(),
            min_similarity: DEFAULT_MIN_SIMILARITY,
            lifetime_s: default_lifetime(),
            fanout: default_fanout(),
            successor_list: default_successors(),
            republish_s: default_republish(),
            announce_s: default_announce(),
            location: default_location(),
            cloud: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lifetime_s == 0 {
            return Err(ConfigError::ZeroLifetime);
        }
        if !(1..=32).contains(&self.overlay_m) {
            return Err(ConfigError::BadRingSize);
        }
        if !(0.0..=1.0).contains(&self.min_similarity) {
            return Err(ConfigError::BadThreshold);
        }
        let w = self.score_weights;
        if w.concept < 0.0 || w.keywords < 0.0 || ((w.concept + w.keywords) - 1.0).abs() > 1e-9 {
            return Err(ConfigError::BadScoreWeights);
        }
        self.location.validate().map_err(|_| ConfigError::BadLocation)
    }

    pub fn overlay(&self) -> OverlayConfig {
        OverlayConfig {
            m: self.overlay_m,
            successors: self.successor_list,
            fanout: self.fanout,
            republish_ms: self.republish_s * 1000,
        }
    }
}
