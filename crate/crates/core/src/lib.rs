//! Distributed IoT resource description and discovery.
//!
//! Fog gateways host a thing directory and service registry behind CoAP
//! endpoints, match discovery requests semantically against a concept
//! taxonomy, rank candidates by QoS and federate through a Chord overlay.
//! A cloud node composes services across gateways. Everything runs inside
//! a deterministic simulated network (see [`sim`]).

pub mod cloud;
pub mod coap;
pub mod directory;
pub mod gateway;
pub mod matchmaker;
pub mod model;
pub mod net;
pub mod ontology;
pub mod overlay;
pub mod ranking;
pub mod sim;
pub mod udp;
