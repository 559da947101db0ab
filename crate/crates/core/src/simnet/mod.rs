//! In-process federation harness. Instances talk through a virtual network
//! that serializes every request and response to HTTP/1.1 bytes, applies
//! fault rules and appends to a transport log. Time is virtual: nothing
//! here reads the wall clock, so a seed and a script fix the whole run.

pub mod scenario;

pub use scenario::{load_suite, run_scenario, run_suite, Backend, Check, Scenario, ScenarioOutcome, Step};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, Weak};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::activitypub::format_timestamp;
use crate::api::{ApiError, CreatedUser, Server, UserError};
use crate::config::Config;
use crate::federation::TaskState;
use crate::http::{host_header, HttpRequest, HttpResponse, OutboundRequest, Purpose, JSON};
use crate::mastodon::Visibility;
use crate::storage::{BackendKind, StorageError, Store};
use crate::transport::{Clock, Transport, TransportError, VirtualClock};

/// Key size for harness instances; small keys keep the suite fast.
pub const SIM_KEY_BITS: usize = 1024;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("domain {0} already spawned")]
    DuplicateDomain(String),
    #[error("no instance {0}")]
    UnknownDomain(String),
    #[error("no user {0}")]
    UnknownUser(String),
    #[error("not quiescent after {steps} steps; {pending} tasks pending")]
    NotQuiescent { steps: usize, pending: usize },
    #[error("max_steps must be positive")]
    ZeroBudget,
    #[error(transparent)]
    User(#[from] UserError),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("client request failed: {0}")]
    Client(String),
    #[error("expectation failed: {0}")]
    Expectation(String),
    #[error("scenario error: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultBehavior {
    /// The request vanishes; the sender sees a timeout.
    Drop,
    /// The response arrives `ms` later. Delays at or beyond the request
    /// timeout are reported to the sender as a timeout.
    Delay { ms: u64 },
    /// The request is answered with `code` without reaching the instance.
    Status { code: u16 },
    /// A 200 with an empty body, without reaching the instance.
    #[serde(rename = "empty_200")]
    Empty200,
}

impl FaultBehavior {
    fn label(&self) -> String {
        match self {
            FaultBehavior::Drop => "drop".into(),
            FaultBehavior::Delay { ms } => format!("delay({ms})"),
            FaultBehavior::Status { code } => format!("status({code})"),
            FaultBehavior::Empty200 => "empty_200".into(),
        }
    }
}

/// Matches requests by target domain, method and a path substring. Absent
/// fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPredicate {
    pub domain: Option<String>,
    pub method: Option<String>,
    pub path_contains: Option<String>,
}

impl FaultPredicate {
    fn matches(&self, request: &OutboundRequest) -> bool {
        self.domain
            .as_ref()
            .is_none_or(|d| d.eq_ignore_ascii_case(&host_header(&request.url)))
            && self.method.as_ref().is_none_or(|m| m.eq_ignore_ascii_case(&request.method))
            && self
                .path_contains
                .as_ref()
                .is_none_or(|p| request.url.path().contains(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRule {
    #[serde(default)]
    pub predicate: FaultPredicate,
    pub behavior: FaultBehavior,
    /// Number of matching requests affected; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

/// One request as observed on the virtual wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: usize,
    pub at: String,
    pub from: String,
    pub method: String,
    pub url: String,
    pub purpose: Purpose,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub body_sha256: String,
}

struct ActiveRule {
    id: u64,
    rule: FaultRule,
    remaining: Option<u32>,
}

struct Instance {
    server: Arc<Server>,
    config: Config,
    seed: u64,
}

pub struct VirtualNet {
    me: Weak<VirtualNet>,
    seed: u64,
    clock: VirtualClock,
    instances: Mutex<BTreeMap<String, Instance>>,
    log: Mutex<Vec<LogEntry>>,
    rules: Mutex<Vec<ActiveRule>>,
    next_rule: Mutex<u64>,
    tokens: Mutex<BTreeMap<(String, String), String>>,
    /// Wire bytes of every POST that reached an instance and of its
    /// response, by target host.
    inbound: Mutex<Vec<(String, Vec<u8>, Vec<u8>)>>,
}

struct SimTransport {
    net: Weak<VirtualNet>,
    from: String,
}

impl Transport for SimTransport {
    fn send(&self, request: OutboundRequest) -> Result<HttpResponse, TransportError> {
        match self.net.upgrade() {
            Some(net) => net.exchange(&self.from, request),
            None => Err(TransportError::Connection("network torn down".into())),
        }
    }
}

fn instance_seed(seed: u64, domain: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{domain}").as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl VirtualNet {
    pub fn new(seed: u64) -> Arc<Self> {
        Arc::new_cyclic(|me| Self {
            me: me.clone(),
            seed,
            clock: VirtualClock::default(),
            instances: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Vec::new()),
            rules: Mutex::new(Vec::new()),
            next_rule: Mutex::new(0),
            tokens: Mutex::new(BTreeMap::new()),
            inbound: Mutex::new(Vec::new()),
        })
    }

    /// A transport whose requests are logged as coming from `from`.
    pub fn transport_for(&self, from: &str) -> Arc<dyn Transport> {
        Arc::new(SimTransport {
            net: self.me.clone(),
            from: from.to_string(),
        })
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    /// Harness defaults for an instance on `domain`: memory store, small keys.
    pub fn default_config(domain: &str) -> Config {
        Config {
            key_bits: SIM_KEY_BITS,
            ..Config::for_domain(domain)
        }
    }

    fn open_store(config: &Config) -> Result<Arc<Store>, SimError> {
        Ok(Arc::new(match (config.store_backend, &config.store_path) {
            (BackendKind::File, Some(path)) => Store::open(path)?,
            _ => Store::memory(),
        }))
    }

    pub fn spawn_instance(&self, domain: &str, config: Config) -> Result<Arc<Server>, SimError> {
        let mut instances = self.instances.lock().unwrap();
        if instances.contains_key(domain) {
            return Err(SimError::DuplicateDomain(domain.to_string()));
        }
        let store = Self::open_store(&config)?;
        let seed = instance_seed(self.seed, domain);
        let server = self.build_server(domain, config.clone(), store, seed);
        instances.insert(
            domain.to_string(),
            Instance {
                server: server.clone(),
                config,
                seed,
            },
        );
        Ok(server)
    }

    fn build_server(&self, domain: &str, config: Config, store: Arc<Store>, seed: u64) -> Arc<Server> {
        let transport = Arc::new(SimTransport {
            net: self.me.clone(),
            from: domain.to_string(),
        });
        Arc::new(Server::new(config, store, transport, Arc::new(self.clock.clone()), Some(seed)))
    }

    /// Simulates a crash and restart. File-backed instances reload from
    /// disk; memory-backed ones keep their store, standing in for a
    /// process whose state outlives it.
    pub fn restart_instance(&self, domain: &str) -> Result<Arc<Server>, SimError> {
        let mut instances = self.instances.lock().unwrap();
        let instance = instances
            .get_mut(domain)
            .ok_or_else(|| SimError::UnknownDomain(domain.to_string()))?;
        let store = match instance.config.store_backend {
            BackendKind::File => Self::open_store(&instance.config)?,
            BackendKind::Memory => instance.server.store().clone(),
        };
        // The old handle is dropped without any shutdown step.
        let server = self.build_server(domain, instance.config.clone(), store, instance.seed.wrapping_add(1));
        instance.server = server.clone();
        instance.seed = instance.seed.wrapping_add(1);
        Ok(server)
    }

    pub fn server(&self, domain: &str) -> Result<Arc<Server>, SimError> {
        self.instances
            .lock()
            .unwrap()
            .get(domain)
            .map(|i| i.server.clone())
            .ok_or_else(|| SimError::UnknownDomain(domain.to_string()))
    }

    pub fn domains(&self) -> Vec<String> {
        self.instances.lock().unwrap().keys().cloned().collect()
    }

    pub fn inject_fault(&self, rule: FaultRule) -> u64 {
        let mut next = self.next_rule.lock().unwrap();
        *next += 1;
        let id = *next;
        self.rules.lock().unwrap().push(ActiveRule {
            id,
            remaining: rule.times,
            rule,
        });
        id
    }

    pub fn remove_fault(&self, id: u64) -> bool {
        let mut rules = self.rules.lock().unwrap();
        let before = rules.len();
        rules.retain(|r| r.id != id);
        rules.len() != before
    }

    pub fn clear_faults(&self) {
        self.rules.lock().unwrap().clear();
    }

    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().unwrap().clone()
    }

    /// The log as JSON lines; byte-identical across runs with equal seeds.
    pub fn log_text(&self) -> String {
        self.log
            .lock()
            .unwrap()
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }

    fn take_fault(&self, request: &OutboundRequest) -> Option<FaultBehavior> {
        let mut rules = self.rules.lock().unwrap();
        let rule = rules
            .iter_mut()
            .find(|r| r.remaining != Some(0) && r.rule.predicate.matches(request))?;
        if let Some(n) = rule.remaining.as_mut() {
            *n -= 1;
        }
        Some(rule.rule.behavior.clone())
    }

    /// Carries one request across the virtual wire.
    fn exchange(&self, from: &str, request: OutboundRequest) -> Result<HttpResponse, TransportError> {
        let fault = self.take_fault(&request);
        let target = host_header(&request.url);
        let wire = request.to_server_request().encode();
        let body_sha256 = hex::encode(Sha256::digest(&request.body));
        let mut entry = LogEntry {
            seq: 0,
            at: format_timestamp(&self.clock.now()),
            from: from.to_string(),
            method: request.method.clone(),
            url: request.url.to_string(),
            purpose: request.purpose,
            status: None,
            fault: fault.as_ref().map(FaultBehavior::label),
            error: None,
            body_sha256,
        };

        let result = match fault {
            Some(FaultBehavior::Drop) => Err(TransportError::Timeout),
            Some(FaultBehavior::Status { code }) => Ok(HttpResponse::error(code, "InjectedFault", format!("status {code}"))),
            Some(FaultBehavior::Empty200) => Ok(HttpResponse::new(200, JSON, Vec::new())),
            Some(FaultBehavior::Delay { ms }) => {
                self.clock.advance(std::time::Duration::from_millis(ms));
                let timeout_ms = self
                    .server(from)
                    .map(|s| s.config().request_timeout_secs * 1000)
                    .unwrap_or(10_000);
                if ms >= timeout_ms {
                    Err(TransportError::Timeout)
                } else {
                    self.deliver(&target, &wire)
                }
            }
            None => self.deliver(&target, &wire),
        };
        match &result {
            Ok(resp) => entry.status = Some(resp.status),
            Err(e) => entry.error = Some(e.to_string()),
        }
        let mut log = self.log.lock().unwrap();
        entry.seq = log.len();
        log.push(entry);
        result
    }

    fn deliver(&self, target: &str, wire: &[u8]) -> Result<HttpResponse, TransportError> {
        let server = self
            .server(target)
            .map_err(|_| TransportError::Connection(format!("no route to host {target}")))?;
        let request = HttpRequest::decode(wire).map_err(|e| TransportError::InvalidResponse(e.to_string()))?;
        let is_post = request.method == "POST";
        let response = server.handle(request);
        if is_post {
            self.inbound
                .lock()
                .unwrap()
                .push((target.to_string(), wire.to_vec(), response.encode()));
        }
        HttpResponse::decode(&response.encode()).map_err(|e| TransportError::InvalidResponse(e.to_string()))
    }

    /// Every POST delivered to `domain` with the instance's response, in
    /// arrival order.
    pub fn inbound_posts(&self, domain: &str) -> Vec<(HttpRequest, HttpResponse)> {
        self.inbound
            .lock()
            .unwrap()
            .iter()
            .filter(|(d, ..)| d == domain)
            .map(|(_, req, resp)| {
                (
                    HttpRequest::decode(req).expect("captured requests decode"),
                    HttpResponse::decode(resp).expect("captured responses decode"),
                )
            })
            .collect()
    }

    /// Earliest pending delivery across all instances.
    fn next_due(&self) -> Option<DateTime<Utc>> {
        self.servers().iter().filter_map(|s| s.store().next_due()).min()
    }

    fn servers(&self) -> Vec<Arc<Server>> {
        self.instances
            .lock()
            .unwrap()
            .values()
            .map(|i| i.server.clone())
            .collect()
    }

    pub fn pending_tasks(&self) -> usize {
        self.servers().iter().map(|s| s.store().pending_tasks()).sum()
    }

    /// Advances virtual time to each next due delivery and processes every
    /// queue, in domain order, until nothing is pending.
    pub fn run_until_quiet(&self, max_steps: usize) -> Result<usize, SimError> {
        if max_steps == 0 {
            return Err(SimError::ZeroBudget);
        }
        let mut steps = 0;
        while let Some(due) = self.next_due() {
            if steps == max_steps {
                return Err(SimError::NotQuiescent {
                    steps,
                    pending: self.pending_tasks(),
                });
            }
            self.clock.advance_to(due);
            for server in self.servers() {
                server.process_queue()?;
            }
            steps += 1;
        }
        Ok(steps)
    }

    // ---- conveniences that act like a client of one instance ----

    pub fn create_user(&self, domain: &str, name: &str) -> Result<CreatedUser, SimError> {
        let created = self.server(domain)?.create_user(name)?;
        self.tokens
            .lock()
            .unwrap()
            .insert((domain.to_string(), name.to_string()), created.token.clone());
        Ok(created)
    }

    fn token(&self, domain: &str, user: &str) -> Result<String, SimError> {
        self.tokens
            .lock()
            .unwrap()
            .get(&(domain.to_string(), user.to_string()))
            .cloned()
            .ok_or_else(|| SimError::UnknownUser(format!("{user}@{domain}")))
    }

    /// Sends a client request to `domain` over the virtual wire.
    pub fn client_request(
        &self,
        domain: &str,
        method: &str,
        path_and_query: &str,
        token: Option<&str>,
        body: Option<serde_json::Value>,
    ) -> Result<HttpResponse, SimError> {
        let url = url::Url::parse(&format!("https://{domain}{path_and_query}"))
            .map_err(|e| SimError::Script(e.to_string()))?;
        let mut request = OutboundRequest::get(url, JSON, Purpose::Client);
        request.method = method.to_string();
        if let Some(token) = token {
            request.headers.set("Authorization", format!("Bearer {token}"));
        }
        if let Some(body) = body {
            request.headers.set("Content-Type", JSON);
            request.body = body.to_string().into_bytes();
        }
        self.exchange("client", request)
            .map_err(|e| SimError::Client(e.to_string()))
    }

    fn client_json(
        &self,
        domain: &str,
        method: &str,
        path: &str,
        user: &str,
        body: Option<serde_json::Value>,
    ) -> Result<serde_json::Value, SimError> {
        let token = self.token(domain, user)?;
        let resp = self.client_request(domain, method, path, Some(&token), body)?;
        if !resp.is_success() {
            return Err(SimError::Client(format!(
                "{method} {path} on {domain}: {} {}",
                resp.status,
                resp.body_text()
            )));
        }
        serde_json::from_slice(&resp.body).map_err(|e| SimError::Client(e.to_string()))
    }

    /// Posts through the client API; returns the Status JSON.
    pub fn post_status(
        &self,
        domain: &str,
        user: &str,
        text: &str,
        visibility: Visibility,
    ) -> Result<serde_json::Value, SimError> {
        self.client_json(
            domain,
            "POST",
            "/api/v1/statuses",
            user,
            Some(serde_json::json!({"status": text, "visibility": visibility.name()})),
        )
    }

    /// Looks `target` up from `domain` and follows it; returns the
    /// relationship JSON.
    pub fn follow(&self, domain: &str, user: &str, target: &str) -> Result<serde_json::Value, SimError> {
        let path = format!("/api/v1/accounts/lookup?acct={}", urlencode(target));
        let account = self.client_json(domain, "GET", &path, user, None)?;
        let id = account["id"]
            .as_str()
            .ok_or_else(|| SimError::Client("lookup returned no id".into()))?;
        self.client_json(domain, "POST", &format!("/api/v1/accounts/{id}/follow"), user, None)
    }

    /// Home timeline of `user` as Status JSON, newest first.
    pub fn home_timeline(&self, domain: &str, user: &str, limit: usize) -> Result<Vec<serde_json::Value>, SimError> {
        let value = self.client_json(domain, "GET", &format!("/api/v1/timelines/home?limit={limit}"), user, None)?;
        Ok(value.as_array().cloned().unwrap_or_default())
    }

    pub fn delete_account(&self, domain: &str, user: &str) -> Result<usize, SimError> {
        Ok(self.server(domain)?.delete_account(user)?.deletes_queued)
    }

    /// Every failed task across instances with its recorded reason.
    pub fn failed_tasks(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (domain, instance) in self.instances.lock().unwrap().iter() {
            for task in instance.server.store().tasks() {
                if let TaskState::Failed { reason, .. } = task.state {
                    out.push((domain.clone(), reason));
                }
            }
        }
        out
    }

    /// Root directory of a file-backed instance.
    pub fn store_root(&self, domain: &str) -> Option<PathBuf> {
        self.server(domain).ok()?.store().root()
    }
}

fn urlencode(text: &str) -> String {
    url::form_urlencoded::byte_serialize(text.as_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net_ab() -> Arc<VirtualNet> {
        let net = VirtualNet::new(1);
        for d in ["a.test", "b.test"] {
            net.spawn_instance(d, VirtualNet::default_config(d)).unwrap();
        }
        net.create_user("a.test", "alice").unwrap();
        net.create_user("b.test", "bob").unwrap();
        net
    }

    #[test]
    fn duplicate_domain() {
        let net = VirtualNet::new(1);
        net.spawn_instance("a.test", VirtualNet::default_config("a.test")).unwrap();
        assert!(matches!(
            net.spawn_instance("a.test", VirtualNet::default_config("a.test")),
            Err(SimError::DuplicateDomain(_))
        ));
    }

    #[test]
    fn quiet_net_takes_zero_steps() {
        let net = net_ab();
        assert_eq!(net.run_until_quiet(5).unwrap(), 0);
        assert!(matches!(net.run_until_quiet(0), Err(SimError::ZeroBudget)));
    }

    #[test]
    fn mention_delivers_in_one_step() {
        let net = net_ab();
        net.post_status("a.test", "alice", "hi @bob@b.test", Visibility::Public).unwrap();
        assert_eq!(net.run_until_quiet(10).unwrap(), 1);
        let home = net.home_timeline("b.test", "bob", 20).unwrap();
        assert_eq!(home.len(), 1);
    }

    #[test]
    fn delay_within_timeout_still_delivers() {
        let net = net_ab();
        net.inject_fault(FaultRule {
            predicate: FaultPredicate {
                path_contains: Some("/inbox".into()),
                ..Default::default()
            },
            behavior: FaultBehavior::Delay { ms: 5000 },
            times: None,
        });
        net.post_status("a.test", "alice", "hi @bob@b.test", Visibility::Public).unwrap();
        net.run_until_quiet(10).unwrap();
        assert_eq!(net.home_timeline("b.test", "bob", 20).unwrap().len(), 1);
        assert!(net.log().iter().any(|e| e.fault.as_deref() == Some("delay(5000)")));
    }

    #[test]
    fn timeouts_then_success_counts_attempts() {
        let net = net_ab();
        net.inject_fault(FaultRule {
            predicate: FaultPredicate {
                domain: Some("b.test".into()),
                method: Some("POST".into()),
                path_contains: Some("/inbox".into()),
            },
            behavior: FaultBehavior::Drop,
            times: Some(2),
        });
        net.post_status("a.test", "alice", "hi @bob@b.test", Visibility::Public).unwrap();
        net.run_until_quiet(10).unwrap();
        let tasks = net.server("a.test").unwrap().store().tasks();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].attempts, 2);
        assert!(matches!(tasks[0].state, TaskState::Delivered { .. }));
    }

    #[test]
    fn drop_everything_exhausts_retries() {
        let net = net_ab();
        net.post_status("a.test", "alice", "hi @bob@b.test", Visibility::Public).unwrap();
        net.inject_fault(FaultRule {
            predicate: FaultPredicate {
                path_contains: Some("/inbox".into()),
                ..Default::default()
            },
            behavior: FaultBehavior::Drop,
            times: None,
        });
        assert!(matches!(net.run_until_quiet(3), Err(SimError::NotQuiescent { pending: 1, .. })));
        net.run_until_quiet(100).unwrap();
        let failed = net.failed_tasks();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].1.contains("gave up after 8 attempts"), "{}", failed[0].1);
    }
}
