//! Command implementations behind the `moth-fed` binary: user provisioning,
//! key rotation and the federation probe. `serve` lives in the binary since
//! it owns the async runtime.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use url::Url;

use crate::activitypub::parse_actor_value;
use crate::api::{CreatedUser, Server, UserError};
use crate::config::{Config, ConfigError};
use crate::federation::signature::parse_public_key;
use crate::http::{is_activity_media_type, OutboundRequest, Purpose, ACTIVITY_JSON, JRD_JSON};
use crate::identity::{parse_acct, JrdDocument};
use crate::routes;
use crate::storage::{BackendKind, StorageError, Store};
use crate::transport::{HttpTransport, OfflineTransport, SystemClock, Transport};

/// Where the file backend lives when the config names none.
pub const DEFAULT_STORE_PATH: &str = "moth-data";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("StorageUnavailable: {0}")]
    StorageUnavailable(StorageError),
    #[error("BindFailed: {0}")]
    BindFailed(String),
    #[error(transparent)]
    User(#[from] UserError),
    #[error("probe failed")]
    ProbeFailed,
    #[error("{0}")]
    Runtime(String),
}

pub fn store_path(config: &Config) -> PathBuf {
    config
        .store_path
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE_PATH))
}

pub fn open_store(config: &Config) -> Result<Store, CliError> {
    match config.store_backend {
        BackendKind::Memory => Ok(Store::memory()),
        BackendKind::File => Store::open(store_path(config)).map_err(CliError::StorageUnavailable),
    }
}

/// A server over the configured store that never talks to the network.
/// Enough for provisioning commands.
pub fn offline_server(config: &Config) -> Result<Server, CliError> {
    let store = Arc::new(open_store(config)?);
    Ok(Server::new(
        config.clone(),
        store,
        Arc::new(OfflineTransport),
        Arc::new(SystemClock),
        None,
    ))
}

pub fn user_create(config: &Config, name: &str) -> Result<CreatedUser, CliError> {
    Ok(offline_server(config)?.create_user(name)?)
}

/// Replaces a user's keypair; remote caches pick the new key up on their
/// next signature failure.
pub fn keygen(config: &Config, name: &str) -> Result<Url, CliError> {
    let account = offline_server(config)?.rotate_key(name)?;
    Ok(routes::key_id(&account.actor_uri))
}

pub fn probe_transport(config: &Config) -> HttpTransport {
    HttpTransport::new(Duration::from_secs(config.request_timeout_secs))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeStep {
    pub name: &'static str,
    pub url: Option<String>,
    pub status: Option<u16>,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeReport {
    pub handle: String,
    pub steps: Vec<ProbeStep>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.ok)
    }

    fn push(&mut self, name: &'static str, url: Option<&Url>, status: Option<u16>, ok: bool, detail: String) -> bool {
        self.steps.push(ProbeStep {
            name,
            url: url.map(Url::to_string),
            status,
            ok,
            detail,
        });
        ok
    }
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "probe {}", self.handle)?;
        for step in &self.steps {
            let mark = if step.ok { "ok  " } else { "FAIL" };
            write!(f, "[{mark}] {}", step.name)?;
            if let Some(url) = &step.url {
                write!(f, " {url}")?;
            }
            if let Some(status) = step.status {
                write!(f, " -> {status}")?;
            }
            writeln!(f)?;
            for line in step.detail.lines() {
                writeln!(f, "       {line}")?;
            }
        }
        write!(f, "result: {}", if self.passed() { "pass" } else { "fail" })
    }
}

const ACTOR_FIELDS: [&str; 8] = [
    "id",
    "type",
    "preferredUsername",
    "inbox",
    "outbox",
    "followers",
    "following",
    "publicKey",
];

/// Walks the discovery chain a remote server would: WebFinger, actor fetch,
/// document validation and key check. Stops at the first failed step.
pub fn probe(handle: &str, transport: &dyn Transport, allow_http: bool) -> ProbeReport {
    let mut report = ProbeReport {
        handle: handle.to_string(),
        steps: Vec::new(),
    };
    // The handle must name its domain; passing that domain as "local" lets a
    // dotless host such as localhost:8080 through.
    let domain = handle.rsplit_once('@').map(|(_, d)| d).unwrap_or_default();
    let acct = match parse_acct(handle, domain) {
        Ok(a) => a,
        Err(e) => {
            report.push("parse handle", None, None, false, e.to_string());
            return report;
        }
    };
    report.push("parse handle", None, None, true, acct.acct_uri());

    let scheme = if allow_http { "http" } else { "https" };
    let wf_url = routes::webfinger(scheme, acct.domain(), &acct.acct_uri());
    let Some(actor_url) = probe_webfinger(&mut report, transport, &wf_url) else {
        return report;
    };
    let Some(doc) = probe_actor_fetch(&mut report, transport, &actor_url) else {
        return report;
    };
    probe_actor_document(&mut report, &actor_url, &doc);
    report
}

fn probe_webfinger(report: &mut ProbeReport, transport: &dyn Transport, url: &Url) -> Option<Url> {
    const STEP: &str = "webfinger";
    let response = match transport.send(OutboundRequest::get(url.clone(), JRD_JSON, Purpose::Probe)) {
        Ok(r) => r,
        Err(e) => {
            report.push(STEP, Some(url), None, false, e.to_string());
            return None;
        }
    };
    let status = Some(response.status);
    if !response.is_success() {
        let detail = response.error_reason().unwrap_or_else(|| "non-success status".into());
        report.push(STEP, Some(url), status, false, detail);
        return None;
    }
    if response.body.is_empty() {
        report.push(STEP, Some(url), status, false, "WebFinger body empty".into());
        return None;
    }
    let jrd: JrdDocument = match serde_json::from_slice(&response.body) {
        Ok(j) => j,
        Err(e) => {
            report.push(STEP, Some(url), status, false, format!("malformed JRD: {e}"));
            return None;
        }
    };
    let Some(href) = jrd.self_link() else {
        report.push(STEP, Some(url), status, false, "no rel=self link with an ActivityPub type".into());
        return None;
    };
    match Url::parse(href) {
        Ok(actor) => {
            report.push(STEP, Some(url), status, true, format!("subject {}\nself {actor}", jrd.subject));
            Some(actor)
        }
        Err(e) => {
            report.push(STEP, Some(url), status, false, format!("self link {href:?}: {e}"));
            None
        }
    }
}

fn probe_actor_fetch(report: &mut ProbeReport, transport: &dyn Transport, url: &Url) -> Option<Value> {
    const STEP: &str = "actor fetch";
    let response = match transport.send(OutboundRequest::get(url.clone(), ACTIVITY_JSON, Purpose::Probe)) {
        Ok(r) => r,
        Err(e) => {
            report.push(STEP, Some(url), None, false, e.to_string());
            return None;
        }
    };
    let status = Some(response.status);
    if !response.is_success() {
        let detail = response.error_reason().unwrap_or_else(|| "non-success status".into());
        report.push(STEP, Some(url), status, false, detail);
        return None;
    }
    if response.body.is_empty() {
        report.push(STEP, Some(url), status, false, "actor body empty".into());
        return None;
    }
    let content_type = response.content_type().unwrap_or("").to_string();
    if !is_activity_media_type(&content_type) {
        report.push(STEP, Some(url), status, false, format!("content type {content_type:?}"));
        return None;
    }
    match serde_json::from_slice::<Value>(&response.body) {
        Ok(v) => {
            report.push(STEP, Some(url), status, true, format!("content type {content_type}"));
            Some(v)
        }
        Err(e) => {
            report.push(STEP, Some(url), status, false, format!("not JSON: {e}"));
            None
        }
    }
}

fn probe_actor_document(report: &mut ProbeReport, url: &Url, doc: &Value) {
    let mut fields = String::new();
    let mut missing = 0;
    for name in ACTOR_FIELDS {
        let present = doc.get(name).is_some_and(|v| !v.is_null());
        missing += usize::from(!present);
        fields.push_str(&format!("{name}: {}\n", if present { "present" } else { "absent" }));
    }
    let actor = match parse_actor_value(doc) {
        Ok(a) => a,
        Err(e) => {
            fields.push_str(&format!("invalid: {e}"));
            report.push("actor document", None, None, false, fields);
            return;
        }
    };
    let id_ok = &actor.id == url;
    if !id_ok {
        fields.push_str(&format!("id {} differs from fetched URL", actor.id));
    }
    if !report.push("actor document", None, None, missing == 0 && id_ok, fields.trim_end().to_string()) {
        return;
    }

    let key = &actor.public_key;
    let mut problems = Vec::new();
    if key.owner != actor.id {
        problems.push(format!("owner {} is not the actor", key.owner));
    }
    let mut key_doc = key.id.clone();
    key_doc.set_fragment(None);
    if key_doc != actor.id {
        problems.push(format!("key id {} is not under the actor", key.id));
    }
    let detail = match parse_public_key(&key.public_key_pem) {
        Ok(_) if problems.is_empty() => format!("key id {}\nPEM parses as an RSA public key", key.id),
        Ok(_) => problems.join("\n"),
        Err(e) => {
            problems.push(format!("PEM rejected: {e}"));
            problems.join("\n")
        }
    };
    let ok = problems.is_empty();
    report.push("public key", None, None, ok, detail);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{FaultBehavior, FaultPredicate, FaultRule, VirtualNet};

    fn net_with_alice() -> Arc<crate::simnet::VirtualNet> {
        let net = VirtualNet::new(3);
        net.spawn_instance("a.test", VirtualNet::default_config("a.test")).unwrap();
        net.create_user("a.test", "alice").unwrap();
        net
    }

    #[test]
    fn probe_of_simnet_user_passes_every_step() {
        let net = net_with_alice();
        // Simnet instances speak https in their URIs.
        let report = probe("alice@a.test", &*net.transport_for("probe"), false);
        assert!(report.passed(), "{report}");
        let names: Vec<_> = report.steps.iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            ["parse handle", "webfinger", "actor fetch", "actor document", "public key"]
        );
        assert!(report.to_string().contains("publicKey: present"));
    }

    #[test]
    fn probe_pinpoints_empty_webfinger_body() {
        let net = net_with_alice();
        net.inject_fault(FaultRule {
            predicate: FaultPredicate {
                domain: Some("a.test".into()),
                ..Default::default()
            },
            behavior: FaultBehavior::Empty200,
            times: None,
        });
        let report = probe("alice@a.test", &*net.transport_for("probe"), false);
        assert!(!report.passed());
        let last = report.steps.last().unwrap();
        assert_eq!(last.name, "webfinger");
        assert_eq!(last.status, Some(200));
        assert!(report.to_string().contains("WebFinger body empty"));
    }

    #[test]
    fn probe_of_malformed_handle_reports_parse_error() {
        let net = net_with_alice();
        let report = probe("not a handle", &*net.transport_for("probe"), false);
        assert!(!report.passed());
        assert_eq!(report.steps.len(), 1);
        assert_eq!(report.steps[0].name, "parse handle");
        assert!(net.log().is_empty());
    }

    #[test]
    fn probe_of_unknown_user_fails_at_webfinger() {
        let net = net_with_alice();
        let report = probe("nobody@a.test", &*net.transport_for("probe"), false);
        let last = report.steps.last().unwrap();
        assert_eq!((last.name, last.status), ("webfinger", Some(404)));
    }

    #[test]
    fn user_create_and_keygen_on_file_store() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::for_domain("cli.test");
        config.store_backend = BackendKind::File;
        config.store_path = Some(dir.path().join("store"));
        config.key_bits = 1024;
        let created = user_create(&config, "alice").unwrap();
        assert!(!created.token.is_empty());
        assert!(matches!(user_create(&config, "alice"), Err(CliError::User(UserError::NameTaken(_)))));
        assert!(matches!(user_create(&config, "bad name!"), Err(CliError::User(UserError::InvalidName(_)))));

        let before = open_store(&config).unwrap().local_account("alice").unwrap().public_key_pem;
        keygen(&config, "alice").unwrap();
        let after = open_store(&config).unwrap().local_account("alice").unwrap().public_key_pem;
        assert_ne!(before, after);
        assert!(matches!(keygen(&config, "zed"), Err(CliError::User(UserError::UnknownUser(_)))));
    }
}
