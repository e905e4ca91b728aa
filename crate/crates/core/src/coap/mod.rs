//! CoAP wire codec, CoRE Link Format and the HTTP mapping used by the proxies.

mod http;
mod link;
mod message;

pub use http::{
    map_coap_request_to_http, map_coap_to_http, map_http_status_to_coap, map_http_to_coap,
    method_code, method_name, status_for, HttpForward, MappingError, HTTP_BAD_GATEWAY,
};
pub use link::{parse_links, serialize_links, LinkEntry, LinkError};
pub use message::{
    decode_message, encode_message, CoapMessage, CoapOption, Code, DecodeError, EncodeError,
    MessageType, CF_JSON, CF_LINK_FORMAT, OPT_CONTENT_FORMAT, OPT_LOCATION_PATH, OPT_URI_PATH,
    OPT_URI_QUERY,
};

/// Retransmission schedule for confirmable messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retransmission {
    pub base_timeout_ms: u64,
    pub max_retransmit: u32,
}

impl Default for Retransmission {
    fn default() -> Self {
        Self {
            base_timeout_ms: 500,
            max_retransmit: 4,
        }
    }
}

impl Retransmission {
    /// Timeout before attempt `attempt` (0-based) is declared lost.
    pub fn timeout_ms(&self, attempt: u32) -> u64 {
        self.base_timeout_ms << attempt.min(20)
    }
}
