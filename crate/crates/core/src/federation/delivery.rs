use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use rsa::RsaPrivateKey;
use serde::{Deserialize, Serialize};
use url::Url;

use super::signature::sign_request;
use super::{DeliveryTask, FollowRelation, FollowState, Site, TaskState};
use crate::activitypub::{public_collection, serialize_object, Activity, ActivityKind, ActivityObject};
use crate::http::{host_header, OutboundRequest, Purpose, ACTIVITY_JSON};
use crate::mastodon::{status_to_note, Account, AccountId, Status, Visibility};
use crate::routes;
use crate::storage::StorageError;
use crate::transport::Transport;

/// Exponential backoff: after the n-th failed attempt the next one is
/// scheduled `base * 2^n` later, up to `max_attempts` attempts in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 8,
            base: Duration::seconds(10),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempts: u32) -> Duration {
        self.base * 2i32.saturating_pow(attempts.min(30))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueReport {
    pub attempted: usize,
    pub delivered: usize,
    pub failed: usize,
    pub retried: usize,
}

/// Serializes `activity` and queues it for `inbox`, signed by `signer`.
pub(crate) fn enqueue_activity(
    site: &Site,
    activity: &Activity,
    signer: &Account,
    inbox: &Url,
    now: DateTime<Utc>,
) -> Result<DeliveryTask, StorageError> {
    let mut task = DeliveryTask::new(
        serialize_object(activity),
        inbox.clone(),
        signer.id,
        routes::key_id(&signer.actor_uri),
        now,
    );
    task.task_id = site.store.enqueue(&task)?;
    if !site.is_local(inbox) {
        site.store.record_peer(&host_header(inbox), inbox)?;
    }
    Ok(task)
}

/// Queues one Create per distinct remote inbox that should receive `status`:
/// accepted followers for public and followers-only statuses, plus every
/// mentioned remote account.
pub fn fan_out(
    site: &Site,
    status: &Status,
    author: &Account,
    now: DateTime<Utc>,
) -> Result<Vec<DeliveryTask>, StorageError> {
    let mut inboxes = BTreeSet::new();
    if status.visibility != Visibility::Direct {
        for (_, follower) in site.store.followers_of(author.id, true) {
            inboxes.insert(follower.inbox_uri);
        }
    }
    for mention in &status.mentions {
        if let Some(account) = site.store.account_by_actor(&mention.actor_uri) {
            inboxes.insert(account.inbox_uri);
        }
    }
    inboxes.retain(|inbox| !site.is_local(inbox));
    if inboxes.is_empty() {
        return Ok(Vec::new());
    }

    let note = status_to_note(status, author);
    let mut id = status.uri.clone();
    id.set_path(&format!("{}/activity", status.uri.path()));
    let create = Activity {
        id,
        kind: ActivityKind::Create,
        actor: author.actor_uri.clone(),
        to: note.to.clone(),
        cc: note.cc.clone(),
        published: Some(status.created_at),
        object: ActivityObject::Note(Box::new(note)),
    };
    inboxes
        .iter()
        .map(|inbox| enqueue_activity(site, &create, author, inbox, now))
        .collect()
}

/// Follows `followee` on behalf of local `follower`. Remote follows start
/// pending and send a Follow; local ones are accepted at once.
pub fn follow_account(
    site: &Site,
    follower: &Account,
    followee: &Account,
    now: DateTime<Utc>,
) -> Result<FollowRelation, StorageError> {
    if let Some(existing) = site.store.follow(follower.id, followee.id) {
        return Ok(existing);
    }
    let id = site.activity_id(&follower.actor_uri, "follows")?;
    let local = followee.is_local();
    let relation = FollowRelation {
        follower: follower.id,
        followee: followee.id,
        follower_actor_uri: follower.actor_uri.clone(),
        state: if local { FollowState::Accepted } else { FollowState::Pending },
        follow_activity_id: id.clone(),
    };
    site.store.upsert_follow(&relation)?;
    if !local {
        let follow = Activity {
            id,
            kind: ActivityKind::Follow,
            actor: follower.actor_uri.clone(),
            object: ActivityObject::Uri(followee.actor_uri.clone()),
            to: vec![followee.actor_uri.clone()],
            cc: Vec::new(),
            published: Some(now),
        };
        enqueue_activity(site, &follow, follower, &followee.inbox_uri, now)?;
    }
    Ok(relation)
}

/// Queues a Delete of `account`'s actor to one inbox of every known peer.
pub fn propagate_delete(
    site: &Site,
    account: &Account,
    now: DateTime<Utc>,
) -> Result<Vec<DeliveryTask>, StorageError> {
    let inboxes: BTreeSet<Url> = site.store.peers().into_iter().map(|p| p.inbox).collect();
    if inboxes.is_empty() {
        return Ok(Vec::new());
    }
    let mut id = account.actor_uri.clone();
    id.set_fragment(Some("delete"));
    let delete = Activity {
        id,
        kind: ActivityKind::Delete,
        actor: account.actor_uri.clone(),
        object: ActivityObject::Uri(account.actor_uri.clone()),
        to: vec![public_collection()],
        cc: Vec::new(),
        published: Some(now),
    };
    inboxes
        .iter()
        .map(|inbox| enqueue_activity(site, &delete, account, inbox, now))
        .collect()
}

enum Outcome {
    Delivered(Option<String>),
    Permanent(String),
    Retry(String),
}

fn attempt(
    task: &DeliveryTask,
    now: DateTime<Utc>,
    transport: &dyn Transport,
    key: &RsaPrivateKey,
) -> Outcome {
    let body = task.activity_body.as_bytes();
    let signed = match sign_request("POST", &task.target_inbox, body, &task.key_id, key, now) {
        Ok(s) => s,
        Err(e) => return Outcome::Permanent(e.to_string()),
    };
    let mut headers = signed.headers;
    headers.set("Content-Type", ACTIVITY_JSON);
    headers.set("Accept", ACTIVITY_JSON);
    let request = OutboundRequest {
        method: "POST".into(),
        url: task.target_inbox.clone(),
        headers,
        body: body.to_vec(),
        purpose: Purpose::Delivery,
    };
    match transport.send(request) {
        Ok(resp) if resp.is_success() => {
            Outcome::Delivered(resp.body.is_empty().then(|| format!("HTTP {} with empty body", resp.status)))
        }
        Ok(resp) => {
            let detail = resp.error_reason().unwrap_or_else(|| {
                let text = resp.body_text();
                if text.is_empty() {
                    "empty body".to_string()
                } else {
                    text.chars().take(120).collect()
                }
            });
            let reason = format!("HTTP {}: {detail}", resp.status);
            if (400..500).contains(&resp.status) && resp.status != 429 {
                Outcome::Permanent(reason)
            } else {
                Outcome::Retry(reason)
            }
        }
        Err(e) => Outcome::Retry(e.to_string()),
    }
}

/// Attempts every pending task due at `now`. Failures are recorded on the
/// task, never returned.
pub fn process_queue(
    site: &Site,
    now: DateTime<Utc>,
    transport: &dyn Transport,
    keys: &dyn Fn(AccountId) -> Option<RsaPrivateKey>,
    policy: RetryPolicy,
) -> Result<QueueReport, StorageError> {
    let mut report = QueueReport::default();
    for mut task in site.store.claim_due(now) {
        report.attempted += 1;
        let outcome = match keys(task.signer) {
            Some(key) => attempt(&task, now, transport, &key),
            None => Outcome::Permanent(format!("KeyUnavailable: no private key for account {}", task.signer)),
        };
        match outcome {
            Outcome::Delivered(note) => {
                log::info!("delivered task {} to {}", task.task_id, task.target_inbox);
                task.state = TaskState::Delivered { at: now, note };
                report.delivered += 1;
            }
            Outcome::Permanent(reason) => {
                log::warn!("task {} to {} failed: {reason}", task.task_id, task.target_inbox);
                task.last_error = Some(reason.clone());
                task.state = TaskState::Failed { at: now, reason };
                report.failed += 1;
            }
            Outcome::Retry(reason) => {
                task.attempts += 1;
                task.last_error = Some(reason.clone());
                if task.attempts >= policy.max_attempts {
                    log::warn!("task {} to {} abandoned: {reason}", task.task_id, task.target_inbox);
                    task.state = TaskState::Failed {
                        at: now,
                        reason: format!("gave up after {} attempts: {reason}", task.attempts),
                    };
                    report.failed += 1;
                } else {
                    task.next_attempt_at = now + policy.delay_after(task.attempts);
                    report.retried += 1;
                }
            }
        }
        site.store.complete_task(&task)?;
    }
    Ok(report)
}
