//! HTTP front end of the gateway. Requests are translated to CoAP, served by
//! the same handlers, and the responses translated back.

use serde::{Deserialize, Serialize};

use crate::coap::{map_coap_to_http, map_http_to_coap, CoapMessage, CF_JSON, CF_LINK_FORMAT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub location: Option<String>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn new(method: &str, target: &str, body: impl Into<Vec<u8>>) -> Self {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        Self {
            method: method.to_string(),
            path: path.to_string(),
            query: query.to_string(),
            body: body.into(),
        }
    }
}

impl HttpResponse {
    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

fn media_type(cf: Option<u16>) -> Option<String> {
    match cf? {
        CF_JSON => Some("application/json".into()),
        CF_LINK_FORMAT => Some("application/link-format".into()),
        _ => Some("application/octet-stream".into()),
    }
}

/// Returns the HTTP response and the CoAP response it was mapped from (none
/// when the method has no CoAP counterpart).
pub(crate) fn serve(
    http: &HttpRequest,
    mut coap: impl FnMut(&CoapMessage) -> CoapMessage,
) -> (HttpResponse, Option<CoapMessage>) {
    let req = match map_http_to_coap(&http.method, &http.path, &http.query, &http.body, CF_JSON) {
        Ok(r) => r,
        Err(_) => {
            let resp = HttpResponse {
                status: 405,
                content_type: None,
                location: None,
                body: Vec::new(),
            };
            return (resp, None);
        }
    };
    let resp = coap(&req);
    let (status, body) = map_coap_to_http(&resp);
    let http = HttpResponse {
        status,
        content_type: if body.is_empty() { None } else { media_type(resp.content_format()) },
        location: resp.location_path(),
        body,
    };
    (http, Some(resp))
}
