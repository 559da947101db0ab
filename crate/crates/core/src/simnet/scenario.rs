//! JSON scenario scripts.
//!
//! ```json
//! {"name": "mention", "seed": 7, "steps": [
//!   {"op": "spawn", "domain": "a.test"},
//!   {"op": "create_user", "domain": "a.test", "name": "alice"},
//!   {"op": "post_status", "domain": "a.test", "user": "alice", "text": "hi", "visibility": "public"},
//!   {"op": "run", "max_steps": 50},
//!   {"op": "expect", "check": {"kind": "home_count", "domain": "a.test", "user": "alice", "count": 1}}
//! ]}
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FaultRule, LogEntry, SimError, VirtualNet};
use crate::federation::TaskState;
use crate::http::Purpose;
use crate::mastodon::Visibility;
use crate::storage::BackendKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Spawn {
        domain: String,
    },
    CreateUser {
        domain: String,
        name: String,
    },
    PostStatus {
        domain: String,
        user: String,
        text: String,
        #[serde(default = "public")]
        visibility: String,
    },
    Follow {
        domain: String,
        user: String,
        target: String,
    },
    DeleteAccount {
        domain: String,
        user: String,
    },
    InjectFault {
        rule: FaultRule,
    },
    ClearFaults,
    /// Crash and restart an instance.
    Restart {
        domain: String,
    },
    Run {
        #[serde(default = "default_steps")]
        max_steps: usize,
        /// Expect the budget to run out.
        #[serde(default)]
        expect_not_quiescent: bool,
    },
    Expect {
        check: Check,
    },
}

fn public() -> String {
    "public".into()
}

fn default_steps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    /// Number of statuses in a user's home timeline (up to 40).
    HomeCount { domain: String, user: String, count: usize },
    /// Whether some status in the home timeline contains `text`.
    HomeContains { domain: String, user: String, text: String, present: bool },
    TagCount { domain: String, tag: String, count: usize },
    /// Statuses stored on `domain` whose content contains `text`.
    StoredCount { domain: String, text: String, count: usize },
    /// Lookup of `acct` from `domain` succeeds or not.
    Lookup { domain: String, acct: String, present: bool },
    /// Local `user` on `domain` has `follower` (an actor URI) as an accepted follower.
    Follower { domain: String, user: String, follower: String, present: bool },
    /// Log entries matching all given fields.
    LogCount {
        #[serde(default)]
        method: Option<String>,
        #[serde(default)]
        url_contains: Option<String>,
        #[serde(default)]
        status: Option<u16>,
        #[serde(default)]
        fault: Option<String>,
        #[serde(default)]
        purpose: Option<Purpose>,
        count: usize,
    },
    /// No delivery ever reads an outbox.
    NoOutboxGet,
    /// Tasks on `domain` in `state` (pending, delivered, failed).
    TaskCount { domain: String, state: String, count: usize },
    /// Every failed task across the net has a non-empty reason.
    FailuresExplained,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Memory,
    /// One store directory per domain under this root.
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub log: Vec<LogEntry>,
    pub log_text: String,
    pub checks_passed: usize,
    /// Canonical store snapshots by domain after the last step.
    pub snapshots: Vec<(String, String)>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Script(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn visibility(name: &str) -> Result<Visibility, SimError> {
    Visibility::from_name(name).ok_or_else(|| SimError::Script(format!("unknown visibility {name:?}")))
}

fn expect_eq<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), SimError> {
    if got == want {
        Ok(())
    } else {
        Err(SimError::Expectation(format!("{what}: got {got:?}, want {want:?}")))
    }
}

fn check(net: &VirtualNet, check: &Check) -> Result<(), SimError> {
    match check {
        Check::HomeCount { domain, user, count } => {
            let got = net.home_timeline(domain, user, 40)?.len();
            expect_eq(&format!("home timeline of {user}@{domain}"), got, *count)
        }
        Check::HomeContains {
            domain,
            user,
            text,
            present,
        } => {
            let got = net
                .home_timeline(domain, user, 40)?
                .iter()
                .any(|s| s["content"].as_str().unwrap_or_default().contains(text.as_str()));
            expect_eq(&format!("{text:?} in home of {user}@{domain}"), got, *present)
        }
        Check::TagCount { domain, tag, count } => {
            let got = net.server(domain)?.store().query_tag_timeline(tag, 40, None)?.len();
            expect_eq(&format!("tag {tag} on {domain}"), got, *count)
        }
        Check::StoredCount { domain, text, count } => {
            let got = net
                .server(domain)?
                .store()
                .all_statuses()
                .iter()
                .filter(|s| s.content.contains(text.as_str()))
                .count();
            expect_eq(&format!("statuses containing {text:?} on {domain}"), got, *count)
        }
        Check::Lookup { domain, acct, present } => {
            let got = net.server(domain)?.lookup(acct).is_ok();
            expect_eq(&format!("lookup {acct} from {domain}"), got, *present)
        }
        Check::Follower {
            domain,
            user,
            follower,
            present,
        } => {
            let server = net.server(domain)?;
            let account = server
                .store()
                .local_account(user)
                .ok_or_else(|| SimError::UnknownUser(format!("{user}@{domain}")))?;
            let got = server
                .store()
                .followers_of(account.id, true)
                .iter()
                .any(|(_, a)| a.actor_uri.as_str() == follower);
            expect_eq(&format!("{follower} follows {user}@{domain}"), got, *present)
        }
        Check::LogCount {
            method,
            url_contains,
            status,
            fault,
            purpose,
            count,
        } => {
            let got = net
                .log()
                .iter()
                .filter(|e| method.as_ref().is_none_or(|m| m.eq_ignore_ascii_case(&e.method)))
                .filter(|e| url_contains.as_ref().is_none_or(|u| e.url.contains(u.as_str())))
                .filter(|e| status.is_none_or(|s| e.status == Some(s)))
                .filter(|e| fault.as_ref().is_none_or(|f| e.fault.as_ref() == Some(f)))
                .filter(|e| purpose.is_none_or(|p| e.purpose == p))
                .count();
            expect_eq(&format!("log entries matching {check:?}"), got, *count)
        }
        Check::NoOutboxGet => {
            let got = net
                .log()
                .iter()
                .filter(|e| e.method == "GET" && e.url.split('?').next().unwrap_or("").ends_with("/outbox"))
                .count();
            expect_eq("outbox GETs", got, 0)
        }
        Check::TaskCount { domain, state, count } => {
            let got = net
                .server(domain)?
                .store()
                .tasks()
                .iter()
                .filter(|t| match (&t.state, state.as_str()) {
                    (TaskState::Pending, "pending") => true,
                    (TaskState::Delivered { .. }, "delivered") => true,
                    (TaskState::Failed { .. }, "failed") => true,
                    _ => false,
                })
                .count();
            expect_eq(&format!("{state} tasks on {domain}"), got, *count)
        }
        Check::FailuresExplained => {
            let unexplained = net.failed_tasks().into_iter().filter(|(_, r)| r.trim().is_empty()).count();
            expect_eq("failed tasks without a reason", unexplained, 0)
        }
    }
}

/// Runs one scenario on a fresh net. Any failed expectation aborts the run.
pub fn run_scenario(scenario: &Scenario, backend: &Backend) -> Result<ScenarioOutcome, SimError> {
    let net = VirtualNet::new(scenario.seed);
    let mut checks_passed = 0;
    for (index, step) in scenario.steps.iter().enumerate() {
        let at = |e: SimError| match e {
            SimError::Expectation(m) => SimError::Expectation(format!("{} step {index}: {m}", scenario.name)),
            other => SimError::Script(format!("{} step {index}: {other}", scenario.name)),
        };
        run_step(&net, step, backend, &mut checks_passed).map_err(at)?;
    }
    let snapshots = net
        .domains()
        .into_iter()
        .map(|d| {
            let snap = net.server(&d).map(|s| s.store().snapshot()).unwrap_or_default();
            (d, snap)
        })
        .collect();
    Ok(ScenarioOutcome {
        name: scenario.name.clone(),
        log: net.log(),
        log_text: net.log_text(),
        checks_passed,
        snapshots,
    })
}

fn run_step(net: &Arc<VirtualNet>, step: &Step, backend: &Backend, checks: &mut usize) -> Result<(), SimError> {
    match step {
        Step::Spawn { domain } => {
            let mut config = VirtualNet::default_config(domain);
            if let Backend::File(root) = backend {
                config.store_backend = BackendKind::File;
                config.store_path = Some(root.join(domain));
            }
            net.spawn_instance(domain, config)?;
        }
        Step::CreateUser { domain, name } => {
            net.create_user(domain, name)?;
        }
        Step::PostStatus {
            domain,
            user,
            text,
            visibility: vis,
        } => {
            net.post_status(domain, user, text, visibility(vis)?)?;
        }
        Step::Follow { domain, user, target } => {
            net.follow(domain, user, target)?;
        }
        Step::DeleteAccount { domain, user } => {
            net.delete_account(domain, user)?;
        }
        Step::InjectFault { rule } => {
            net.inject_fault(rule.clone());
        }
        Step::ClearFaults => net.clear_faults(),
        Step::Restart { domain } => {
            net.restart_instance(domain)?;
        }
        Step::Run {
            max_steps,
            expect_not_quiescent,
        } => match (net.run_until_quiet(*max_steps), expect_not_quiescent) {
            (Ok(_), false) | (Err(SimError::NotQuiescent { .. }), true) => {}
            (Ok(steps), true) => {
                return Err(SimError::Expectation(format!("quiescent after {steps} steps")));
            }
            (Err(e), _) => return Err(e),
        },
        Step::Expect { check: c } => {
            check(net, c)?;
            *checks += 1;
        }
    }
    Ok(())
}

/// Loads every `*.json` scenario in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<Scenario>, SimError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| SimError::Script(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p)).collect()
}

/// Runs scenarios in order. File backends get one subdirectory per scenario.
pub fn run_suite(scenarios: &[Scenario], backend: &Backend) -> Result<Vec<ScenarioOutcome>, SimError> {
    scenarios
        .iter()
        .map(|s| {
            let backend = match backend {
                Backend::Memory => Backend::Memory,
                Backend::File(root) => Backend::File(root.join(&s.name)),
            };
            run_scenario(s, &backend)
        })
        .collect()
}

