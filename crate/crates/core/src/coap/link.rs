use std::collections::BTreeMap;

use thiserror::Error;

/// One CoRE Link Format entry: `</target>;k=v;...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkEntry {
    pub target: String,
    pub params: BTreeMap<String, String>,
}

impl LinkEntry {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("unterminated quoted value at byte {0}")]
    UnterminatedQuote(usize),
    #[error("empty link target at byte {0}")]
    EmptyTarget(usize),
    #[error("unexpected character at byte {0}")]
    Syntax(usize),
}

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "!#$%&'*+-.^_`|~".contains(c)
}

fn write_value(out: &mut String, v: &str) {
    if !v.is_empty() && v.chars().all(is_token_char) {
        out.push_str(v);
        return;
    }
    out.push('"');
    for c in v.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

pub fn serialize_links(entries: &[LinkEntry]) -> String {
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('<');
        out.push_str(&e.target);
        out.push('>');
        for (k, v) in &e.params {
            out.push(';');
            out.push_str(k);
            out.push('=');
            write_value(&mut out, v);
        }
    }
    out
}

pub fn parse_links(text: &str) -> Result<Vec<LinkEntry>, LinkError> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let mut entries = Vec::new();
    if text.trim().is_empty() {
        return Ok(entries);
    }
    loop {
        skip_ws(bytes, &mut pos);
        if bytes.get(pos) != Some(&b'<') {
            return Err(LinkError::Syntax(pos));
        }
        let start = pos + 1;
        let end = text[start..]
            .find('>')
            .map(|i| start + i)
            .ok_or(LinkError::Syntax(pos))?;
        if end == start {
            return Err(LinkError::EmptyTarget(pos));
        }
        let mut entry = LinkEntry::new(&text[start..end]);
        pos = end + 1;
        loop {
            skip_ws(bytes, &mut pos);
            match bytes.get(pos) {
                Some(b';') => {
                    pos += 1;
                    skip_ws(bytes, &mut pos);
                    let kstart = pos;
                    while pos < bytes.len() && is_token_char(bytes[pos] as char) {
                        pos += 1;
                    }
                    if pos == kstart {
                        return Err(LinkError::Syntax(pos));
                    }
                    let key = text[kstart..pos].to_string();
                    let value = if bytes.get(pos) == Some(&b'=') {
                        pos += 1;
                        read_value(text, &mut pos)?
                    } else {
                        String::new()
                    };
                    entry.params.insert(key, value);
                }
                Some(b',') => {
                    pos += 1;
                    break;
                }
                None => {
                    entries.push(entry);
                    return Ok(entries);
                }
                Some(_) => return Err(LinkError::Syntax(pos)),
            }
        }
        entries.push(entry);
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
}

fn read_value(text: &str, pos: &mut usize) -> Result<String, LinkError> {
    let bytes = text.as_bytes();
    if bytes.get(*pos) == Some(&b'"') {
        let open = *pos;
        let mut out = String::new();
        let mut chars = text[open + 1..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    *pos = open + 1 + i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, esc)) => out.push(esc),
                    None => break,
                },
                c => out.push(c),
            }
        }
        Err(LinkError::UnterminatedQuote(open))
    } else {
        let start = *pos;
        while *pos < bytes.len() && is_token_char(bytes[*pos] as char) {
            *pos += 1;
        }
        Ok(text[start..*pos].to_string())
    }
}
