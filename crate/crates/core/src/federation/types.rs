use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::mastodon::AccountId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FollowState {
    Pending,
    Accepted,
}

/// A directed follow edge. Both ends are stored accounts; at most one
/// relation exists per (follower, followee) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowRelation {
    pub follower: AccountId,
    pub followee: AccountId,
    pub follower_actor_uri: Url,
    pub state: FollowState,
    pub follow_activity_id: Url,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InteractionKind {
    Like,
    Announce,
}

/// A received Like or Announce, keyed by (kind, actor, object).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub actor_uri: Url,
    pub object_uri: Url,
    pub activity_id: Url,
}

/// A remote instance this server has exchanged activities with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Peer {
    pub domain: String,
    /// An inbox on that instance, used when no specific recipient exists.
    pub inbox: Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Delivered {
        at: DateTime<Utc>,
        /// Set when the peer acknowledged with something worth noticing,
        /// such as an empty 2xx body.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Failed {
        at: DateTime<Utc>,
        reason: String,
    },
}

/// One signed POST of one activity to one remote inbox.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryTask {
    pub task_id: u64,
    pub activity_body: String,
    pub target_inbox: Url,
    /// Local account whose key signs the request.
    pub signer: AccountId,
    pub key_id: Url,
    pub attempts: u32,
    pub next_attempt_at: DateTime<Utc>,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl DeliveryTask {
    pub fn new(
        activity_body: String,
        target_inbox: Url,
        signer: AccountId,
        key_id: Url,
        now: DateTime<Utc>,
    ) -> Self {
        Self {
            task_id: 0,
            activity_body,
            target_inbox,
            signer,
            key_id,
            attempts: 0,
            next_attempt_at: now,
            state: TaskState::Pending,
            last_error: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self.state, TaskState::Pending)
    }

    pub fn failure_reason(&self) -> Option<&str> {
        match &self.state {
            TaskState::Failed { reason, .. } => Some(reason),
            _ => None,
        }
    }
}
