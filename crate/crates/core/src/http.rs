//! Plain HTTP message values shared by the server, the real transport and the
//! simulated network.
//!
//! Messages can be encoded to and decoded from HTTP/1.1 wire text so the
//! simulated transport exercises the same header and body handling as a real
//! socket would.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

/// Media type of ActivityPub payloads.
pub const ACTIVITY_JSON: &str = "application/activity+json";
/// JSON-LD profile variant accepted interchangeably with [`ACTIVITY_JSON`].
pub const LD_JSON_ACTIVITYSTREAMS: &str =
    "application/ld+json; profile=\"https://www.w3.org/ns/activitystreams\"";
/// Media type of WebFinger documents.
pub const JRD_JSON: &str = "application/jrd+json";
/// Media type of client API responses.
pub const JSON: &str = "application/json";
pub const HTML: &str = "text/html; charset=utf-8";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("incomplete message")]
    Incomplete,
    #[error("malformed start line: {0}")]
    StartLine(String),
    #[error("malformed header line: {0}")]
    Header(String),
    #[error("invalid content-length")]
    ContentLength,
}

/// Ordered, case-insensitive header list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Replaces any existing value for `name`.
    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.0.retain(|(k, _)| !k.eq_ignore_ascii_case(name));
        self.0.push((name.to_string(), value.into()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Headers {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        let mut headers = Headers::new();
        for (k, v) in iter {
            headers.set(&k.into(), v);
        }
        headers
    }
}

/// A request as seen by the server: origin-form target (path plus query).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub target: String,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn new(method: &str, target: &str) -> Self {
        Self {
            method: method.to_ascii_uppercase(),
            target: target.to_string(),
            headers: Headers::new(),
            body: Vec::new(),
        }
    }

    pub fn path(&self) -> &str {
        self.target.split('?').next().unwrap_or("")
    }

    pub fn query(&self) -> Option<&str> {
        self.target.split_once('?').map(|(_, q)| q)
    }

    /// First value of a query parameter, percent-decoded.
    pub fn query_param(&self, name: &str) -> Option<String> {
        let query = self.query()?;
        url::form_urlencoded::parse(query.as_bytes())
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.into_owned())
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_message(
            &format!("{} {} HTTP/1.1", self.method, self.target),
            &self.headers,
            &self.body,
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (start, headers, body) = decode_message(bytes)?;
        let mut parts = start.splitn(3, ' ');
        let method = parts.next().filter(|m| !m.is_empty());
        let target = parts.next().filter(|t| !t.is_empty());
        match (method, target, parts.next()) {
            (Some(method), Some(target), Some(version)) if version.starts_with("HTTP/") => Ok(Self {
                method: method.to_string(),
                target: target.to_string(),
                headers,
                body,
            }),
            _ => Err(WireError::StartLine(start)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Headers,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        let mut headers = Headers::new();
        headers.set("Content-Type", content_type);
        Self {
            status,
            headers,
            body: body.into(),
        }
    }

    pub fn json(status: u16, content_type: &str, value: &serde_json::Value) -> Self {
        Self::new(status, content_type, value.to_string())
    }

    /// Error response carrying a machine-readable reason.
    pub fn error(status: u16, reason: &str, detail: impl std::fmt::Display) -> Self {
        let detail = detail.to_string();
        let value = if detail.is_empty() {
            serde_json::json!({ "error": reason })
        } else {
            serde_json::json!({ "error": reason, "detail": detail })
        };
        Self::json(status, JSON, &value)
    }

    pub fn content_type(&self) -> Option<&str> {
        self.headers.get("content-type")
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    /// Reason string from an error body, if any.
    pub fn error_reason(&self) -> Option<String> {
        let value: serde_json::Value = serde_json::from_slice(&self.body).ok()?;
        value.get("error")?.as_str().map(str::to_string)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_message(
            &format!("HTTP/1.1 {} {}", self.status, reason_phrase(self.status)),
            &self.headers,
            &self.body,
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (start, headers, body) = decode_message(bytes)?;
        let status = start
            .split(' ')
            .nth(1)
            .and_then(|s| s.parse::<u16>().ok())
            .filter(|_| start.starts_with("HTTP/"))
            .ok_or_else(|| WireError::StartLine(start.clone()))?;
        Ok(Self {
            status,
            headers,
            body,
        })
    }
}

/// Why an outbound request is being made. Recorded by transports that log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Delivery,
    Webfinger,
    ActorFetch,
    Probe,
    Client,
}

/// A request leaving this server for an absolute URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundRequest {
    pub method: String,
    pub url: Url,
    pub headers: Headers,
    pub body: Vec<u8>,
    pub purpose: Purpose,
}

impl OutboundRequest {
    pub fn get(url: Url, accept: &str, purpose: Purpose) -> Self {
        let mut headers = Headers::new();
        headers.set("Accept", accept);
        Self {
            method: "GET".into(),
            url,
            headers,
            body: Vec::new(),
            purpose,
        }
    }

    /// Origin-form target of the URL.
    pub fn target(&self) -> String {
        match self.url.query() {
            Some(q) => format!("{}?{}", self.url.path(), q),
            None => self.url.path().to_string(),
        }
    }

    /// Host header value for the URL (host plus non-default port).
    pub fn host(&self) -> String {
        host_header(&self.url)
    }

    /// The request as the receiving server will see it.
    pub fn to_server_request(&self) -> HttpRequest {
        let mut headers = self.headers.clone();
        if headers.get("host").is_none() {
            headers.set("Host", self.host());
        }
        HttpRequest {
            method: self.method.clone(),
            target: self.target(),
            headers,
            body: self.body.clone(),
        }
    }
}

pub fn host_header(url: &Url) -> String {
    let host = url.host_str().unwrap_or_default();
    match url.port() {
        Some(port) => format!("{host}:{port}"),
        None => host.to_string(),
    }
}

/// True when an Accept or Content-Type value names an ActivityPub media type.
pub fn is_activity_media_type(value: &str) -> bool {
    value.split(',').any(|part| {
        let part = part.trim().to_ascii_lowercase();
        part.starts_with(ACTIVITY_JSON)
            || (part.starts_with("application/ld+json")
                && part.contains("https://www.w3.org/ns/activitystreams"))
    })
}

fn encode_message(start: &str, headers: &Headers, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(start.len() + body.len() + 64);
    out.extend_from_slice(start.as_bytes());
    out.extend_from_slice(b"\r\n");
    for (name, value) in headers.iter() {
        if name.eq_ignore_ascii_case("content-length") {
            continue;
        }
        out.extend_from_slice(format!("{name}: {value}\r\n").as_bytes());
    }
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", body.len()).as_bytes());
    out.extend_from_slice(body);
    out
}

fn decode_message(bytes: &[u8]) -> Result<(String, Headers, Vec<u8>), WireError> {
    let split = bytes
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or(WireError::Incomplete)?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| WireError::Incomplete)?;
    let mut lines = head.split("\r\n");
    let start = lines.next().unwrap_or_default().to_string();
    let mut headers = Headers::new();
    let mut length = None;
    for line in lines {
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| WireError::Header(line.to_string()))?;
        let (name, value) = (name.trim(), value.trim());
        if name.eq_ignore_ascii_case("content-length") {
            length = Some(value.parse::<usize>().map_err(|_| WireError::ContentLength)?);
        } else {
            headers.0.push((name.to_string(), value.to_string()));
        }
    }
    let body = &bytes[split + 4..];
    let length = length.unwrap_or(body.len());
    if body.len() < length {
        return Err(WireError::Incomplete);
    }
    Ok((start, headers, body[..length].to_vec()))
}

fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        202 => "Accepted",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        410 => "Gone",
        422 => "Unprocessable Entity",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
