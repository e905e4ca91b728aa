//! What a node sees of the network: a request/response transport with a
//! clock, and the handler interface every hosted node implements.

use std::any::Any;

use thiserror::Error;

use crate::coap::{CoapMessage, Code};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("no response from {0} after all retransmissions")]
    Timeout(String),
    #[error("unknown address {0}")]
    UnknownAddress(String),
}

/// Synchronous request/response over CoAP. A call returns once the response
/// arrived (or retransmissions gave up) and advances [`Transport::now`] by the
/// time that took.
pub trait Transport {
    /// Current time of the running operation, in microseconds.
    fn now(&self) -> u64;

    /// Moves the operation clock; used to run calls side by side.
    fn set_now(&mut self, t: u64);

    fn call(&mut self, to: &str, req: CoapMessage) -> Result<CoapMessage, CallError>;

    fn now_ms(&self) -> u64 {
        self.now() / 1000
    }
}

/// Runs each branch from the same start time and leaves the clock at the
/// latest finish, as if the branches had been issued in parallel.
pub fn concurrently<T, I, F>(t: &mut dyn Transport, items: I, mut f: F) -> Vec<T>
where
    I: IntoIterator,
    F: FnMut(&mut dyn Transport, I::Item) -> T,
{
    let start = t.now();
    let mut end = start;
    let mut out = Vec::new();
    for item in items {
        t.set_now(start);
        out.push(f(t, item));
        end = end.max(t.now());
    }
    t.set_now(end);
    out
}

/// Periodic work a node performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timer {
    Stabilize,
    FixFingers,
    CheckPredecessor,
    Republish,
    Expire,
    Announce,
}

impl Timer {
    pub const ALL: [Timer; 6] = [
        Timer::Stabilize,
        Timer::FixFingers,
        Timer::CheckPredecessor,
        Timer::Republish,
        Timer::Expire,
        Timer::Announce,
    ];
}

/// A network-attached node: one logical event loop that handles inbound
/// requests and timer ticks one at a time.
pub trait Node: Any {
    fn address(&self) -> &str;

    fn handle(&mut self, req: &CoapMessage, from: &str, net: &mut dyn Transport) -> CoapMessage;

    fn on_timer(&mut self, _timer: Timer, _net: &mut dyn Transport) {}

    /// The overlay state, for nodes that take part in the ring.
    fn overlay(&self) -> Option<&crate::overlay::Overlay> {
        None
    }

    /// Concepts the node currently advertises through the overlay.
    fn local_concepts(&self) -> std::collections::BTreeSet<String> {
        Default::default()
    }

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}

/// Builds a response carrying a JSON body.
pub fn json_response(req: &CoapMessage, code: Code, body: &str) -> CoapMessage {
    CoapMessage::response_to(req, code).with_payload(crate::coap::CF_JSON, body.as_bytes().to_vec())
}

/// Builds a POST carrying a JSON body.
pub fn json_request(path: &str, body: &str) -> CoapMessage {
    CoapMessage::request(Code::POST, path, None).with_payload(crate::coap::CF_JSON, body.as_bytes().to_vec())
}
