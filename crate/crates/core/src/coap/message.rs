use std::fmt;

use thiserror::Error;

pub const OPT_LOCATION_PATH: u16 = 8;
pub const OPT_URI_PATH: u16 = 11;
pub const OPT_CONTENT_FORMAT: u16 = 12;
pub const OPT_URI_QUERY: u16 = 15;

pub const CF_LINK_FORMAT: u16 = 40;
pub const CF_JSON: u16 = 50;

const PAYLOAD_MARKER: u8 = 0xFF;
const MAX_TOKEN_LEN: usize = 8;
const MAX_OPTION_LEN: usize = 65535 + 269;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Confirmable,
    NonConfirmable,
    Acknowledgement,
    Reset,
}

impl MessageType {
    fn bits(self) -> u8 {
        match self {
            MessageType::Confirmable => 0,
            MessageType::NonConfirmable => 1,
            MessageType::Acknowledgement => 2,
            MessageType::Reset => 3,
        }
    }

    fn from_bits(b: u8) -> Self {
        match b & 0b11 {
            0 => MessageType::Confirmable,
            1 => MessageType::NonConfirmable,
            2 => MessageType::Acknowledgement,
            _ => MessageType::Reset,
        }
    }
}

/// `class.detail` code; class 0 carries request methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Code {
    pub class: u8,
    pub detail: u8,
}

impl Code {
    pub const EMPTY: Code = Code::new(0, 0);
    pub const GET: Code = Code::new(0, 1);
    pub const POST: Code = Code::new(0, 2);
    pub const PUT: Code = Code::new(0, 3);
    pub const DELETE: Code = Code::new(0, 4);

    pub const CREATED: Code = Code::new(2, 1);
    pub const DELETED: Code = Code::new(2, 2);
    pub const VALID: Code = Code::new(2, 3);
    pub const CHANGED: Code = Code::new(2, 4);
    pub const CONTENT: Code = Code::new(2, 5);

    pub const BAD_REQUEST: Code = Code::new(4, 0);
    pub const NOT_FOUND: Code = Code::new(4, 4);
    pub const METHOD_NOT_ALLOWED: Code = Code::new(4, 5);

    pub const INTERNAL_SERVER_ERROR: Code = Code::new(5, 0);
    pub const SERVICE_UNAVAILABLE: Code = Code::new(5, 3);
    pub const GATEWAY_TIMEOUT: Code = Code::new(5, 4);

    pub const fn new(class: u8, detail: u8) -> Self {
        Self { class, detail }
    }

    pub fn is_valid(self) -> bool {
        matches!(self.class, 0 | 2 | 4 | 5) && self.detail < 32
    }

    pub fn is_request(self) -> bool {
        self.class == 0 && self.detail != 0
    }

    pub fn is_success(self) -> bool {
        self.class == 2
    }

    fn byte(self) -> u8 {
        (self.class << 5) | self.detail
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.class, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoapOption {
    pub number: u16,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoapMessage {
    pub msg_type: MessageType,
    pub token: Vec<u8>,
    pub code: Code,
    pub message_id: u16,
    /// Sorted by option number; equal numbers keep insertion order.
    pub options: Vec<CoapOption>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("token longer than 8 bytes")]
    TokenTooLong,
    #[error("options not sorted by number")]
    OptionOutOfOrder,
    #[error("option value too long")]
    OptionTooLong,
    #[error("code {0} is not a valid class/detail")]
    InvalidCode(Code),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("message truncated")]
    Truncated,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("reserved token length {0}")]
    ReservedTkl(u8),
    #[error("payload marker without payload")]
    PayloadMarkerWithoutPayload,
    #[error("reserved option delta or length nibble")]
    InvalidOption,
    #[error("reserved code class {0}")]
    InvalidCode(u8),
}

impl CoapMessage {
    pub fn new(msg_type: MessageType, code: Code, message_id: u16) -> Self {
        Self {
            msg_type,
            token: Vec::new(),
            code,
            message_id,
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// Confirmable request with `path` split into Uri-Path options and an
    /// optional `a=1&b=2` query split into Uri-Query options.
    pub fn request(method: Code, path: &str, query: Option<&str>) -> Self {
        let mut m = Self::new(MessageType::Confirmable, method, 0);
        m.set_path(OPT_URI_PATH, path);
        if let Some(q) = query {
            for part in q.split('&').filter(|p| !p.is_empty()) {
                m.push_option(OPT_URI_QUERY, part.as_bytes().to_vec());
            }
        }
        m
    }

    /// Piggy-backed response matching `req`'s token and message id.
    pub fn response_to(req: &CoapMessage, code: Code) -> Self {
        let msg_type = match req.msg_type {
            MessageType::NonConfirmable => MessageType::NonConfirmable,
            _ => MessageType::Acknowledgement,
        };
        let mut m = Self::new(msg_type, code, req.message_id);
        m.token = req.token.clone();
        m
    }

    pub fn with_payload(mut self, content_format: u16, payload: impl Into<Vec<u8>>) -> Self {
        self.set_content_format(content_format);
        self.payload = payload.into();
        self
    }

    /// Inserts after any existing options with the same or lower number.
    pub fn push_option(&mut self, number: u16, value: Vec<u8>) {
        let at = self.options.partition_point(|o| o.number <= number);
        self.options.insert(at, CoapOption { number, value });
    }

    pub fn option_values(&self, number: u16) -> impl Iterator<Item = &[u8]> {
        self.options
            .iter()
            .filter(move |o| o.number == number)
            .map(|o| o.value.as_slice())
    }

    fn set_path(&mut self, number: u16, path: &str) {
        for seg in path.split('/').filter(|s| !s.is_empty()) {
            self.push_option(number, seg.as_bytes().to_vec());
        }
    }

    fn joined_path(&self, number: u16) -> String {
        let mut out = String::new();
        for seg in self.option_values(number) {
            out.push('/');
            out.push_str(&String::from_utf8_lossy(seg));
        }
        if out.is_empty() {
            out.push('/');
        }
        out
    }

    pub fn uri_path(&self) -> String {
        self.joined_path(OPT_URI_PATH)
    }

    pub fn path_segments(&self) -> Vec<String> {
        self.option_values(OPT_URI_PATH)
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect()
    }

    pub fn uri_query(&self) -> Vec<String> {
        self.option_values(OPT_URI_QUERY)
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect()
    }

    pub fn set_location_path(&mut self, path: &str) {
        self.options.retain(|o| o.number != OPT_LOCATION_PATH);
        self.set_path(OPT_LOCATION_PATH, path);
    }

    pub fn location_path(&self) -> Option<String> {
        self.options
            .iter()
            .any(|o| o.number == OPT_LOCATION_PATH)
            .then(|| self.joined_path(OPT_LOCATION_PATH))
    }

    pub fn content_format(&self) -> Option<u16> {
        self.option_values(OPT_CONTENT_FORMAT)
            .next()
            .map(|v| v.iter().fold(0u32, |acc, b| (acc << 8) | u32::from(*b)) as u16)
    }

    pub fn set_content_format(&mut self, cf: u16) {
        self.options.retain(|o| o.number != OPT_CONTENT_FORMAT);
        self.push_option(OPT_CONTENT_FORMAT, encode_uint(u32::from(cf)));
    }

    pub fn payload_text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

fn encode_uint(v: u32) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let skip = bytes.iter().take_while(|b| **b == 0).count();
    bytes[skip..].to_vec()
}

fn nibble(v: usize) -> (u8, Vec<u8>) {
    if v < 13 {
        (v as u8, Vec::new())
    } else if v < 269 {
        (13, vec![(v - 13) as u8])
    } else {
        (14, ((v - 269) as u16).to_be_bytes().to_vec())
    }
}

pub fn encode_message(m: &CoapMessage) -> Result<Vec<u8>, EncodeError> {
    if m.token.len() > MAX_TOKEN_LEN {
        return Err(EncodeError::TokenTooLong);
    }
    if !m.code.is_valid() {
        return Err(EncodeError::InvalidCode(m.code));
    }
    let mut out = Vec::with_capacity(4 + m.token.len() + m.payload.len() + 8);
    out.push((1 << 6) | (m.msg_type.bits() << 4) | m.token.len() as u8);
    out.push(m.code.byte());
    out.extend_from_slice(&m.message_id.to_be_bytes());
    out.extend_from_slice(&m.token);
    let mut prev = 0u16;
    for opt in &m.options {
        if opt.number < prev {
            return Err(EncodeError::OptionOutOfOrder);
        }
        if opt.value.len() > MAX_OPTION_LEN {
            return Err(EncodeError::OptionTooLong);
        }
        let (dn, dext) = nibble(usize::from(opt.number - prev));
        let (ln, lext) = nibble(opt.value.len());
        out.push((dn << 4) | ln);
        out.extend_from_slice(&dext);
        out.extend_from_slice(&lext);
        out.extend_from_slice(&opt.value);
        prev = opt.number;
    }
    if !m.payload.is_empty() {
        out.push(PAYLOAD_MARKER);
        out.extend_from_slice(&m.payload);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn extended(&mut self, n: u8) -> Result<usize, DecodeError> {
        Ok(match n {
            13 => usize::from(self.take(1)?[0]) + 13,
            14 => {
                let b = self.take(2)?;
                usize::from(u16::from_be_bytes([b[0], b[1]])) + 269
            }
            15 => return Err(DecodeError::InvalidOption),
            v => usize::from(v),
        })
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<CoapMessage, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = r.take(4)?;
    let version = header[0] >> 6;
    if version != 1 {
        return Err(DecodeError::BadVersion(version));
    }
    let tkl = header[0] & 0x0F;
    if usize::from(tkl) > MAX_TOKEN_LEN {
        return Err(DecodeError::ReservedTkl(tkl));
    }
    let code = Code::new(header[1] >> 5, header[1] & 0x1F);
    if !code.is_valid() {
        return Err(DecodeError::InvalidCode(code.class));
    }
    let mut m = CoapMessage::new(
        MessageType::from_bits(header[0] >> 4),
        code,
        u16::from_be_bytes([header[2], header[3]]),
    );
    m.token = r.take(usize::from(tkl))?.to_vec();
    let mut number = 0usize;
    while r.pos < bytes.len() {
        let b = r.take(1)?[0];
        if b == PAYLOAD_MARKER {
            if r.pos == bytes.len() {
                return Err(DecodeError::PayloadMarkerWithoutPayload);
            }
            m.payload = bytes[r.pos..].to_vec();
            break;
        }
        let delta = r.extended(b >> 4)?;
        let len = r.extended(b & 0x0F)?;
        number += delta;
        let number16 = u16::try_from(number).map_err(|_| DecodeError::InvalidOption)?;
        let value = r.take(len)?.to_vec();
        m.options.push(CoapOption {
            number: number16,
            value,
        });
    }
    Ok(m)
}
