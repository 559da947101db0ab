use chrono::{DateTime, Utc};
use thiserror::Error;
use url::Url;

use super::delivery::enqueue_activity;
use super::{FollowRelation, FollowState, Interaction, InteractionKind, Site};
use crate::activitypub::{Activity, ActivityKind, ActivityObject};
use crate::mastodon::{note_to_status, Account, AccountId, ConversionWarning, Visibility};
use crate::routes;
use crate::storage::{DeleteReport, StorageError};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InboxError {
    #[error("activity actor {activity} differs from signer {signer}")]
    ActorMismatch { activity: Url, signer: Url },
    #[error("actor {0} has been deleted")]
    TombstonedActor(Url),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl InboxError {
    pub fn reason(&self) -> &'static str {
        match self {
            InboxError::ActorMismatch { .. } => "ActorMismatch",
            InboxError::TombstonedActor(_) => "TombstonedActor",
            InboxError::Storage(_) => "StorageUnavailable",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            InboxError::ActorMismatch { .. } => 401,
            InboxError::TombstonedActor(_) => 403,
            InboxError::Storage(_) => 500,
        }
    }
}

/// One observable consequence of an inbound activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    StoreStatus { uri: Url },
    TimelineInsert { owner: AccountId, status_uri: Url },
    UpsertFollow { follower: Url, followee: AccountId, state: FollowState },
    EnqueueDelivery { kind: ActivityKind, inbox: Url },
    FollowAccepted { follower: AccountId, followee: Url },
    RecordInteraction { kind: InteractionKind, object: Url },
    PurgeActor { actor: Url, report: DeleteReport },
    DeleteStatus { uri: Url },
    RemoveFollow { follower: Url, followee: AccountId },
    RemoveInteraction { kind: InteractionKind, object: Url },
    /// Accepted but not acted on; `reason` says why.
    Warning { reason: String },
}

/// Dispatches a verified activity. A replayed activity id yields no effects.
pub fn handle_inbox(
    site: &Site,
    activity: &Activity,
    signer: &Account,
    now: DateTime<Utc>,
) -> Result<Vec<Effect>, InboxError> {
    if activity.actor != signer.actor_uri {
        return Err(InboxError::ActorMismatch {
            activity: activity.actor.clone(),
            signer: signer.actor_uri.clone(),
        });
    }
    if site.store.is_tombstoned(&activity.actor) {
        return Err(InboxError::TombstonedActor(activity.actor.clone()));
    }
    if !site.store.record_seen(activity.id.as_str())? {
        return Ok(Vec::new());
    }
    let result = dispatch(site, activity, signer, now);
    if result.is_err() {
        // Let a redelivery try again rather than silently dropping it.
        let _ = site.store.unrecord_seen(activity.id.as_str());
    }
    result
}

fn warning(reason: impl Into<String>) -> Vec<Effect> {
    vec![Effect::Warning { reason: reason.into() }]
}

fn dispatch(
    site: &Site,
    activity: &Activity,
    signer: &Account,
    now: DateTime<Utc>,
) -> Result<Vec<Effect>, InboxError> {
    let store = site.store;
    match activity.kind {
        ActivityKind::Create => {
            let Some(note) = activity.object.as_note() else {
                return Ok(warning("UnsupportedObject: Create without an embedded Note"));
            };
            if note.attributed_to != signer.actor_uri {
                return Err(InboxError::ActorMismatch {
                    activity: note.attributed_to.clone(),
                    signer: signer.actor_uri.clone(),
                });
            }
            let resolver = |uri: &Url| store.account_by_actor(uri);
            let converted = note_to_status(note, signer, &resolver);
            let mut effects: Vec<Effect> = converted
                .warnings
                .iter()
                .filter(|w| !matches!(w, ConversionWarning::UnresolvableMention(u) if !site.is_local(u)))
                .map(|w| Effect::Warning {
                    reason: format!("{w:?}"),
                })
                .collect();
            let stored = match store.store_status(&converted.status) {
                Ok(s) => s,
                Err(StorageError::DuplicateUri(uri)) => {
                    effects.push(Effect::Warning {
                        reason: format!("DuplicateUri: {uri}"),
                    });
                    return Ok(effects);
                }
                Err(e) => return Err(e.into()),
            };
            effects.push(Effect::StoreStatus {
                uri: stored.uri.clone(),
            });

            let mut owners: Vec<AccountId> = stored
                .mentions
                .iter()
                .filter_map(|m| store.account_by_actor(&m.actor_uri))
                .filter(|a| a.is_local())
                .map(|a| a.id)
                .collect();
            if stored.visibility != Visibility::Direct {
                owners.extend(
                    store
                        .followers_of(signer.id, true)
                        .into_iter()
                        .filter(|(_, a)| a.is_local())
                        .map(|(_, a)| a.id),
                );
            }
            owners.sort();
            owners.dedup();
            for owner in owners {
                if store.insert_timeline(owner, stored.id, now)? {
                    effects.push(Effect::TimelineInsert {
                        owner,
                        status_uri: stored.uri.clone(),
                    });
                }
            }
            Ok(effects)
        }

        ActivityKind::Follow => {
            let target = activity.object.id();
            let Some(followee) = routes::local_username(site.base, target).and_then(|n| store.local_account(&n)) else {
                return Ok(warning(format!("UnknownObject: no local actor {target}")));
            };
            store.upsert_follow(&FollowRelation {
                follower: signer.id,
                followee: followee.id,
                follower_actor_uri: signer.actor_uri.clone(),
                state: FollowState::Pending,
                follow_activity_id: activity.id.clone(),
            })?;
            let accept = Activity {
                id: site.activity_id(&followee.actor_uri, "accepts")?,
                kind: ActivityKind::Accept,
                actor: followee.actor_uri.clone(),
                object: ActivityObject::Uri(activity.id.clone()),
                to: vec![signer.actor_uri.clone()],
                cc: Vec::new(),
                published: Some(now),
            };
            enqueue_activity(site, &accept, &followee, &signer.inbox_uri, now)?;
            // Auto-accept once the Accept is safely queued.
            store.set_follow_state(signer.id, followee.id, FollowState::Accepted)?;
            Ok(vec![
                Effect::UpsertFollow {
                    follower: signer.actor_uri.clone(),
                    followee: followee.id,
                    state: FollowState::Pending,
                },
                Effect::EnqueueDelivery {
                    kind: ActivityKind::Accept,
                    inbox: signer.inbox_uri.clone(),
                },
            ])
        }

        ActivityKind::Accept => {
            let follow_id = activity.object.id();
            match store.follow_by_activity(follow_id) {
                Some(rel) if rel.followee == signer.id => {
                    store.set_follow_state(rel.follower, rel.followee, FollowState::Accepted)?;
                    Ok(vec![Effect::FollowAccepted {
                        follower: rel.follower,
                        followee: signer.actor_uri.clone(),
                    }])
                }
                _ => Ok(warning(format!("UnknownObject: no follow {follow_id} awaiting this actor"))),
            }
        }

        ActivityKind::Like | ActivityKind::Announce => {
            let kind = if activity.kind == ActivityKind::Like {
                InteractionKind::Like
            } else {
                InteractionKind::Announce
            };
            let object = activity.object.id().clone();
            let fresh = store.record_interaction(&Interaction {
                kind,
                actor_uri: signer.actor_uri.clone(),
                object_uri: object.clone(),
                activity_id: activity.id.clone(),
            })?;
            Ok(if fresh {
                vec![Effect::RecordInteraction { kind, object }]
            } else {
                Vec::new()
            })
        }

        ActivityKind::Delete => {
            let object = activity.object.id();
            if object == &signer.actor_uri {
                let report = store.delete_account_data(object)?;
                return Ok(vec![Effect::PurgeActor {
                    actor: object.clone(),
                    report,
                }]);
            }
            match store.status_by_uri(object) {
                Some(status) if status.account_id == signer.id => {
                    store.remove_status(object)?;
                    Ok(vec![Effect::DeleteStatus { uri: object.clone() }])
                }
                Some(_) => Ok(warning(format!("UnknownObject: {object} is not authored by the signer"))),
                None => Ok(warning(format!("UnknownObject: {object}"))),
            }
        }

        ActivityKind::Undo => {
            let target = activity.object.id();
            if let Some(rel) = store.follow_by_activity(target) {
                if rel.follower == signer.id {
                    store.remove_follow(rel.follower, rel.followee)?;
                    return Ok(vec![Effect::RemoveFollow {
                        follower: signer.actor_uri.clone(),
                        followee: rel.followee,
                    }]);
                }
            }
            let owned = store
                .interactions_by_activity(target)
                .is_some_and(|i| i.actor_uri == signer.actor_uri);
            if owned {
                if let Some(i) = store.remove_interaction_by_activity(target)? {
                    return Ok(vec![Effect::RemoveInteraction {
                        kind: i.kind,
                        object: i.object_uri,
                    }]);
                }
            }
            Ok(warning(format!("UnknownObject: nothing to undo for {target}")))
        }
    }
}
