//! HTTP <-> CoAP translation shared by both proxy directions.

use percent_encoding::percent_decode_str;
use thiserror::Error;

use super::message::{CoapMessage, Code, OPT_URI_PATH, OPT_URI_QUERY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("unsupported method {0}")]
    UnsupportedMethod(String),
}

pub const HTTP_BAD_GATEWAY: u16 = 502;

/// Fixed response-code table; anything absent maps to 502.
const CODE_TABLE: &[(Code, u16)] = &[
    (Code::CONTENT, 200),
    (Code::CREATED, 201),
    (Code::DELETED, 202),
    (Code::CHANGED, 204),
    (Code::BAD_REQUEST, 400),
    (Code::NOT_FOUND, 404),
    (Code::INTERNAL_SERVER_ERROR, 500),
];

pub fn method_code(method: &str) -> Result<Code, MappingError> {
    match method {
        "GET" => Ok(Code::GET),
        "POST" => Ok(Code::POST),
        "PUT" => Ok(Code::PUT),
        "DELETE" => Ok(Code::DELETE),
        other => Err(MappingError::UnsupportedMethod(other.to_string())),
    }
}

pub fn method_name(code: Code) -> Option<&'static str> {
    match code {
        Code::GET => Some("GET"),
        Code::POST => Some("POST"),
        Code::PUT => Some("PUT"),
        Code::DELETE => Some("DELETE"),
        _ => None,
    }
}

fn decode(s: &str) -> Vec<u8> {
    percent_decode_str(s).collect()
}

/// Builds the CoAP request an HTTP request stands for. Path segments and
/// query parameters are percent-decoded into Uri-Path / Uri-Query options.
pub fn map_http_to_coap(
    method: &str,
    path: &str,
    query: &str,
    body: &[u8],
    content_format: u16,
) -> Result<CoapMessage, MappingError> {
    let code = method_code(method)?;
    let mut m = CoapMessage::request(code, "", None);
    for seg in path.split('/').filter(|s| !s.is_empty()) {
        m.push_option(OPT_URI_PATH, decode(seg));
    }
    for part in query.split('&').filter(|s| !s.is_empty()) {
        m.push_option(OPT_URI_QUERY, decode(part));
    }
    if !body.is_empty() {
        m = m.with_payload(content_format, body.to_vec());
    }
    Ok(m)
}

pub fn status_for(code: Code) -> u16 {
    CODE_TABLE
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, s)| *s)
        .unwrap_or(HTTP_BAD_GATEWAY)
}

pub fn map_coap_to_http(resp: &CoapMessage) -> (u16, Vec<u8>) {
    (status_for(resp.code), resp.payload.clone())
}

/// CoAP-to-HTTP direction: the HTTP request a CoAP request is forwarded as.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpForward {
    pub method: &'static str,
    pub path: String,
    pub query: String,
    pub body: Vec<u8>,
}

pub fn map_coap_request_to_http(req: &CoapMessage) -> Result<HttpForward, MappingError> {
    let method =
        method_name(req.code).ok_or_else(|| MappingError::UnsupportedMethod(req.code.to_string()))?;
    let enc = |s: &str| {
        percent_encoding::utf8_percent_encode(s, percent_encoding::NON_ALPHANUMERIC)
            .to_string()
            .replace("%2D", "-")
            .replace("%2E", ".")
            .replace("%5F", "_")
            .replace("%3D", "=")
    };
    let path = req
        .path_segments()
        .iter()
        .map(|s| format!("/{}", enc(s)))
        .collect::<String>();
    let query = req
        .uri_query()
        .iter()
        .map(|q| enc(q))
        .collect::<Vec<_>>()
        .join("&");
    Ok(HttpForward {
        method,
        path: if path.is_empty() { "/".into() } else { path },
        query,
        body: req.payload.clone(),
    })
}

/// Status of an HTTP origin response expressed as a CoAP code.
pub fn map_http_status_to_coap(status: u16) -> Code {
    CODE_TABLE
        .iter()
        .find(|(_, s)| *s == status)
        .map(|(c, _)| *c)
        .unwrap_or(Code::new(5, 2))
}
