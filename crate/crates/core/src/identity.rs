//! `@username@domain` handles and WebFinger discovery.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::http::{is_activity_media_type, OutboundRequest, Purpose, ACTIVITY_JSON, JRD_JSON};
use crate::routes;
use crate::transport::Transport;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("malformed handle: {0}")]
    MalformedHandle(String),
    #[error("unknown user: {0}")]
    UnknownUser(String),
    #[error("resolution failed: {0}")]
    ResolutionFailed(String),
    #[error("no self link in WebFinger document for {0}")]
    NoSelfLink(String),
    #[error("{0} is local; nothing to resolve")]
    LocalHandle(String),
}

fn username_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z0-9_]+$").unwrap())
}

fn domain_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[a-z0-9]([a-z0-9-]*[a-z0-9])?(\.[a-z0-9]([a-z0-9-]*[a-z0-9])?)*(:[0-9]{1,5})?$")
            .unwrap()
    })
}

pub fn is_valid_username(name: &str) -> bool {
    username_re().is_match(name)
}

/// A user's address across instances. Username case is preserved but ignored
/// when comparing; the domain is stored lowercase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcctHandle {
    username: String,
    domain: String,
}

impl AcctHandle {
    /// Validates and normalizes the parts. `local_domain` admits a dotless
    /// domain such as `localhost`.
    pub fn new(username: &str, domain: &str, local_domain: &str) -> Result<Self, IdentityError> {
        if !is_valid_username(username) {
            return Err(IdentityError::MalformedHandle(format!(
                "invalid username {username:?}"
            )));
        }
        let domain = domain.to_ascii_lowercase();
        if !domain_re().is_match(&domain) {
            return Err(IdentityError::MalformedHandle(format!("invalid domain {domain:?}")));
        }
        if !domain.contains('.') && !domain.eq_ignore_ascii_case(local_domain) {
            return Err(IdentityError::MalformedHandle(format!(
                "domain {domain:?} is neither qualified nor local"
            )));
        }
        Ok(Self {
            username: username.to_string(),
            domain,
        })
    }

    pub fn username(&self) -> &str {
        &self.username
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn is_local(&self, local_domain: &str) -> bool {
        self.domain.eq_ignore_ascii_case(local_domain)
    }

    /// `acct:user@domain`
    pub fn acct_uri(&self) -> String {
        format!("acct:{}@{}", self.username, self.domain)
    }

    /// Mastodon's `acct` value: bare username for local users.
    pub fn acct_for(&self, local_domain: &str) -> String {
        if self.is_local(local_domain) {
            self.username.clone()
        } else {
            format!("{}@{}", self.username, self.domain)
        }
    }

    fn key(&self) -> (String, &str) {
        (self.username.to_ascii_lowercase(), self.domain.as_str())
    }
}

impl PartialEq for AcctHandle {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for AcctHandle {}

impl Hash for AcctHandle {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

/// Formats as `@user@domain`.
impl fmt::Display for AcctHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}@{}", self.username, self.domain)
    }
}

/// Parses `@user@domain`, `user@domain`, `acct:user@domain` or bare `@user`
/// (which names a user on `local_domain`).
pub fn parse_acct(text: &str, local_domain: &str) -> Result<AcctHandle, IdentityError> {
    let malformed = |why: &str| IdentityError::MalformedHandle(format!("{text:?}: {why}"));
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(malformed("empty"));
    }
    let body = trimmed.strip_prefix("acct:").unwrap_or(trimmed);
    if body.matches('@').count() > 2 {
        return Err(malformed("too many '@' separators"));
    }
    let body = body.strip_prefix('@').unwrap_or(body);
    let (username, domain) = match body.split_once('@') {
        Some((user, domain)) => (user, domain),
        None if trimmed.starts_with('@') => (body, local_domain),
        None => return Err(malformed("missing domain")),
    };
    if username.is_empty() {
        return Err(malformed("empty username"));
    }
    if domain.is_empty() {
        return Err(malformed("empty domain"));
    }
    AcctHandle::new(username, domain, local_domain)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JrdLink {
    pub rel: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub href: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JrdDocument {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub links: Vec<JrdLink>,
}

impl JrdDocument {
    /// The ActivityPub actor link, if exactly identifiable.
    pub fn self_link(&self) -> Option<&str> {
        self.links
            .iter()
            .find(|l| {
                l.rel == "self"
                    && l.media_type.as_deref().is_some_and(is_activity_media_type)
            })
            .and_then(|l| l.href.as_deref())
    }
}

/// Lookup of local users by case-insensitive name, returning the stored name.
pub trait LocalDirectory {
    fn local_username(&self, name: &str) -> Option<String>;
}

pub fn build_jrd(
    directory: &dyn LocalDirectory,
    username: &str,
    base_url: &Url,
) -> Result<JrdDocument, IdentityError> {
    let stored = directory
        .local_username(username)
        .ok_or_else(|| IdentityError::UnknownUser(username.to_string()))?;
    let domain = crate::http::host_header(base_url);
    let actor = routes::actor(base_url, &stored);
    Ok(JrdDocument {
        subject: format!("acct:{stored}@{domain}"),
        aliases: vec![actor.to_string()],
        links: vec![
            JrdLink {
                rel: "http://webfinger.net/rel/profile-page".into(),
                media_type: Some("text/html".into()),
                href: Some(actor.to_string()),
            },
            JrdLink {
                rel: "self".into(),
                media_type: Some(ACTIVITY_JSON.into()),
                href: Some(actor.to_string()),
            },
        ],
    })
}

/// Extracts the handle named by a WebFinger `resource` parameter. Only `acct:`
/// resources are served.
pub fn parse_resource(resource: &str, local_domain: &str) -> Result<AcctHandle, IdentityError> {
    let rest = resource
        .strip_prefix("acct:")
        .ok_or_else(|| IdentityError::MalformedHandle(format!("{resource:?}: not an acct: URI")))?;
    if !rest.contains('@') {
        return Err(IdentityError::MalformedHandle(format!(
            "{resource:?}: missing domain"
        )));
    }
    parse_acct(rest, local_domain)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedActorRef {
    pub handle: AcctHandle,
    pub actor_uri: Url,
    pub fetched_at: DateTime<Utc>,
}

/// WebFinger client with a TTL cache shared across request handlers.
pub struct Resolver {
    local_domain: String,
    allow_http: bool,
    ttl: Duration,
    cache: Mutex<HashMap<AcctHandle, ResolvedActorRef>>,
}

impl Resolver {
    pub fn new(local_domain: &str, allow_http: bool, ttl: Duration) -> Self {
        Self {
            local_domain: local_domain.to_ascii_lowercase(),
            allow_http,
            ttl,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn resolve(
        &self,
        handle: &AcctHandle,
        transport: &dyn Transport,
        now: DateTime<Utc>,
    ) -> Result<ResolvedActorRef, IdentityError> {
        if handle.is_local(&self.local_domain) {
            return Err(IdentityError::LocalHandle(handle.to_string()));
        }
        if let Some(hit) = self.cached(handle, now) {
            return Ok(hit);
        }
        let scheme = if self.allow_http { "http" } else { "https" };
        let url = routes::webfinger(scheme, handle.domain(), &handle.acct_uri());
        let response = transport
            .send(OutboundRequest::get(url.clone(), JRD_JSON, Purpose::Webfinger))
            .map_err(|e| IdentityError::ResolutionFailed(format!("GET {url}: {e}")))?;
        if !response.is_success() {
            return Err(IdentityError::ResolutionFailed(format!(
                "GET {url}: status {}",
                response.status
            )));
        }
        if response.body.is_empty() {
            return Err(IdentityError::ResolutionFailed(format!(
                "GET {url}: WebFinger body empty"
            )));
        }
        let jrd: JrdDocument = serde_json::from_slice(&response.body).map_err(|e| {
            IdentityError::ResolutionFailed(format!("GET {url}: malformed JRD: {e}"))
        })?;
        let href = jrd
            .self_link()
            .ok_or_else(|| IdentityError::NoSelfLink(handle.to_string()))?;
        let actor_uri = Url::parse(href).map_err(|e| {
            IdentityError::ResolutionFailed(format!("self link {href:?} is not a URI: {e}"))
        })?;
        match actor_uri.scheme() {
            "https" => {}
            "http" if self.allow_http => {}
            other => {
                return Err(IdentityError::ResolutionFailed(format!(
                    "self link scheme {other:?} not permitted"
                )))
            }
        }
        let resolved = ResolvedActorRef {
            handle: handle.clone(),
            actor_uri,
            fetched_at: now,
        };
        self.cache
            .lock()
            .unwrap()
            .insert(handle.clone(), resolved.clone());
        Ok(resolved)
    }

    fn cached(&self, handle: &AcctHandle, now: DateTime<Utc>) -> Option<ResolvedActorRef> {
        let cache = self.cache.lock().unwrap();
        let hit = cache.get(handle)?;
        let age = (now - hit.fetched_at).to_std().unwrap_or_default();
        (age < self.ttl).then(|| hit.clone())
    }

    pub fn forget(&self, handle: &AcctHandle) {
        self.cache.lock().unwrap().remove(handle);
    }
}
