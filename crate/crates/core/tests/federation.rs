//! Inbound dispatch, fan-out, delete propagation and the delivery queue,
//! driven directly against a store with a scripted transport.

mod common;

use std::collections::VecDeque;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rsa::RsaPrivateKey;

use common::{remote_account, url};
use moth_fed::activitypub::{Activity, ActivityKind, ActivityObject};
use moth_fed::federation::signature::{generate_key, public_key_pem, verify_signature, SignerKey};
use moth_fed::federation::{
    fan_out, handle_inbox, process_queue, propagate_delete, Effect, FollowRelation, FollowState, InboxError,
    InteractionKind, RetryPolicy, Site, TaskState,
};
use moth_fed::http::{HttpRequest, HttpResponse, OutboundRequest, ACTIVITY_JSON};
use moth_fed::mastodon::{status_to_note, Account, AccountId, Mention, Status, StatusId, Visibility};
use moth_fed::storage::Store;
use moth_fed::transport::{Transport, TransportError};

struct World {
    store: Store,
    base: url::Url,
    alice: Account,
    key: RsaPrivateKey,
    now: DateTime<Utc>,
}

impl World {
    fn new() -> Self {
        let store = Store::memory();
        let base = url("https://a.test/");
        let mut alice = remote_account(0, &url("https://a.test/users/alice"));
        alice.acct = "alice".into();
        alice.id = store.upsert_account(&alice).unwrap();
        let key = generate_key(&mut ChaCha20Rng::seed_from_u64(5), 1024).unwrap();
        store
            .put_private_key(alice.id, &moth_fed::federation::signature::private_key_pem(&key))
            .unwrap();
        Self {
            store,
            base,
            alice,
            key,
            now: "2024-02-01T00:00:00Z".parse().unwrap(),
        }
    }

    fn site(&self) -> Site<'_> {
        Site {
            store: &self.store,
            base: &self.base,
            domain: "a.test",
        }
    }

    fn remote(&self, uri: &str) -> Account {
        let mut a = remote_account(0, &url(uri));
        a.id = self.store.upsert_account(&a).unwrap();
        a
    }

    fn local(&self, name: &str) -> Account {
        let mut a = remote_account(0, &url(&format!("https://a.test/users/{name}")));
        a.acct = name.into();
        a.id = self.store.upsert_account(&a).unwrap();
        a
    }

    fn accept_follower(&self, follower: &Account) {
        self.store
            .upsert_follow(&FollowRelation {
                follower: follower.id,
                followee: self.alice.id,
                follower_actor_uri: follower.actor_uri.clone(),
                state: FollowState::Accepted,
                follow_activity_id: url(&format!("{}#follows/1", follower.actor_uri)),
            })
            .unwrap();
    }

    fn post(&self, text: &str, visibility: Visibility, mentions: &[&Account]) -> Status {
        let draft = Status {
            id: StatusId(0),
            uri: url("https://a.test/placeholder"),
            content: format!("<p>{text}</p>"),
            account_id: self.alice.id,
            visibility,
            mentions: mentions
                .iter()
                .map(|a| Mention {
                    acct: a.acct.clone(),
                    actor_uri: a.actor_uri.clone(),
                })
                .collect(),
            tags: vec![],
            created_at: self.now,
            in_reply_to_id: None,
            in_reply_to_uri: None,
        };
        self.store
            .store_local_status(&draft, &|id| url(&format!("https://a.test/users/alice/statuses/{}", id.0)))
            .unwrap()
    }
}

fn activity(id: &str, kind: ActivityKind, actor: &Account, object: ActivityObject) -> Activity {
    Activity {
        id: url(id),
        kind,
        actor: actor.actor_uri.clone(),
        object,
        to: vec![],
        cc: vec![],
        published: None,
    }
}

fn remote_create(author: &Account, n: u64, visibility: Visibility, mentions: &[&Account]) -> Activity {
    let status = Status {
        id: StatusId(n),
        uri: url(&format!("{}/statuses/{n}", author.actor_uri)),
        content: "<p>hello</p>".into(),
        account_id: author.id,
        visibility,
        mentions: mentions
            .iter()
            .map(|a| Mention {
                acct: a.acct.clone(),
                actor_uri: a.actor_uri.clone(),
            })
            .collect(),
        tags: vec!["fedi".into()],
        created_at: "2024-01-31T00:00:00Z".parse().unwrap(),
        in_reply_to_id: None,
        in_reply_to_uri: None,
    };
    let note = status_to_note(&status, author);
    Activity {
        id: url(&format!("{}/activity", status.uri)),
        kind: ActivityKind::Create,
        actor: author.actor_uri.clone(),
        to: note.to.clone(),
        cc: note.cc.clone(),
        published: None,
        object: ActivityObject::Note(Box::new(note)),
    }
}

#[test]
fn create_mentioning_a_local_user_stores_and_fills_the_timeline_once() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let create = remote_create(&bob, 1, Visibility::Public, &[&w.alice]);
    let effects = handle_inbox(&w.site(), &create, &bob, w.now).unwrap();
    let uri = url("https://b.test/users/bob/statuses/1");
    assert!(effects.contains(&Effect::StoreStatus { uri: uri.clone() }), "{effects:?}");
    assert!(effects.contains(&Effect::TimelineInsert {
        owner: w.alice.id,
        status_uri: uri.clone()
    }));
    assert_eq!(w.store.query_home_timeline(w.alice.id, 40, None).unwrap().len(), 1);
    assert_eq!(w.store.query_tag_timeline("fedi", 40, None).unwrap().len(), 1);

    assert_eq!(handle_inbox(&w.site(), &create, &bob, w.now).unwrap(), vec![]);
    assert_eq!(w.store.all_statuses().len(), 1);
}

#[test]
fn create_reaches_local_followers_but_direct_only_the_mentioned() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let dave = w.local("dave");
    w.store
        .upsert_follow(&FollowRelation {
            follower: dave.id,
            followee: bob.id,
            follower_actor_uri: dave.actor_uri.clone(),
            state: FollowState::Accepted,
            follow_activity_id: url("https://a.test/users/dave#follows/1"),
        })
        .unwrap();
    handle_inbox(&w.site(), &remote_create(&bob, 1, Visibility::Followers, &[]), &bob, w.now).unwrap();
    handle_inbox(&w.site(), &remote_create(&bob, 2, Visibility::Direct, &[&w.alice]), &bob, w.now).unwrap();
    let home = |a: &Account| w.store.query_home_timeline(a.id, 40, None).unwrap();
    assert_eq!(home(&dave).len(), 1);
    assert_eq!(home(&w.alice).len(), 1);
    assert_eq!(home(&w.alice)[0].visibility, Visibility::Direct);
    assert!(w.store.query_tag_timeline("fedi", 40, None).unwrap().is_empty());
}

#[test]
fn follow_is_recorded_and_answered_with_accept() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let follow = activity(
        "https://b.test/users/bob#follows/7",
        ActivityKind::Follow,
        &bob,
        ActivityObject::Uri(w.alice.actor_uri.clone()),
    );
    let effects = handle_inbox(&w.site(), &follow, &bob, w.now).unwrap();
    assert_eq!(
        &effects[..2],
        &[
            Effect::UpsertFollow {
                follower: bob.actor_uri.clone(),
                followee: w.alice.id,
                state: FollowState::Pending
            },
            Effect::EnqueueDelivery {
                kind: ActivityKind::Accept,
                inbox: bob.inbox_uri.clone()
            },
        ]
    );
    let relation = w.store.follow(bob.id, w.alice.id).unwrap();
    assert_eq!(relation.state, FollowState::Accepted);
    let tasks = w.store.tasks();
    assert_eq!(tasks.len(), 1);
    let accept: serde_json::Value = serde_json::from_str(&tasks[0].activity_body).unwrap();
    assert_eq!(accept["type"], "Accept");
    assert_eq!(accept["object"], "https://b.test/users/bob#follows/7");
}

#[test]
fn accept_marks_outbound_follow() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let follow_id = url("https://a.test/users/alice#follows/1");
    w.store
        .upsert_follow(&FollowRelation {
            follower: w.alice.id,
            followee: bob.id,
            follower_actor_uri: w.alice.actor_uri.clone(),
            state: FollowState::Pending,
            follow_activity_id: follow_id.clone(),
        })
        .unwrap();
    let accept = activity(
        "https://b.test/users/bob#accepts/1",
        ActivityKind::Accept,
        &bob,
        ActivityObject::Uri(follow_id),
    );
    let effects = handle_inbox(&w.site(), &accept, &bob, w.now).unwrap();
    assert!(matches!(effects[0], Effect::FollowAccepted { .. }), "{effects:?}");
    assert_eq!(w.store.follow(w.alice.id, bob.id).unwrap().state, FollowState::Accepted);
}

#[test]
fn unknown_objects_are_warnings_not_errors() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    for (n, kind) in [(1, ActivityKind::Accept), (2, ActivityKind::Undo)] {
        let act = activity(
            &format!("https://b.test/users/bob#x/{n}"),
            kind,
            &bob,
            ActivityObject::Uri(url("https://b.test/nothing")),
        );
        let effects = handle_inbox(&w.site(), &act, &bob, w.now).unwrap();
        assert!(matches!(&effects[..], [Effect::Warning { reason }] if !reason.is_empty()), "{effects:?}");
    }
}

#[test]
fn interactions_are_recorded_and_undone() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let status = w.post("likeable", Visibility::Public, &[]);
    for (id, kind) in [("likes/1", ActivityKind::Like), ("boosts/1", ActivityKind::Announce)] {
        let act = activity(
            &format!("https://b.test/users/bob#{id}"),
            kind,
            &bob,
            ActivityObject::Uri(status.uri.clone()),
        );
        handle_inbox(&w.site(), &act, &bob, w.now).unwrap();
    }
    let kinds: Vec<InteractionKind> = w.store.interactions_on(&status.uri).iter().map(|i| i.kind).collect();
    assert_eq!(kinds.len(), 2);
    let undo = activity(
        "https://b.test/users/bob#undo/1",
        ActivityKind::Undo,
        &bob,
        ActivityObject::Uri(url("https://b.test/users/bob#likes/1")),
    );
    handle_inbox(&w.site(), &undo, &bob, w.now).unwrap();
    let left = w.store.interactions_on(&status.uri);
    assert_eq!(left.len(), 1);
    assert_eq!(left[0].kind, InteractionKind::Announce);
}

#[test]
fn mismatched_and_deleted_actors_are_rejected() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let carol = w.remote("https://b.test/users/carol");
    let like = activity(
        "https://b.test/users/carol#likes/1",
        ActivityKind::Like,
        &carol,
        ActivityObject::Uri(url("https://a.test/x")),
    );
    let err = handle_inbox(&w.site(), &like, &bob, w.now).unwrap_err();
    assert_eq!(err.reason(), "ActorMismatch");
    assert_eq!(err.status(), 401);

    let delete = activity(
        "https://b.test/users/bob#delete",
        ActivityKind::Delete,
        &bob,
        ActivityObject::Uri(bob.actor_uri.clone()),
    );
    let effects = handle_inbox(&w.site(), &delete, &bob, w.now).unwrap();
    assert!(effects.iter().any(|e| matches!(e, Effect::PurgeActor { .. })));
    let create = remote_create(&bob, 3, Visibility::Public, &[]);
    assert!(matches!(
        handle_inbox(&w.site(), &create, &bob, w.now),
        Err(InboxError::TombstonedActor(_))
    ));
}

#[test]
fn fan_out_examples() {
    let w = World::new();
    let bob = w.remote("https://b.test/users/bob");
    let carol = w.remote("https://b.test/users/carol");
    w.accept_follower(&bob);
    w.accept_follower(&carol);
    let public = w.post("hi", Visibility::Public, &[]);
    let tasks = fan_out(&w.site(), &public, &w.alice, w.now).unwrap();
    let mut inboxes: Vec<_> = tasks.iter().map(|t| t.target_inbox.to_string()).collect();
    inboxes.sort();
    assert_eq!(
        inboxes,
        ["https://b.test/users/bob/inbox", "https://b.test/users/carol/inbox"]
    );
    let body: serde_json::Value = serde_json::from_str(&tasks[0].activity_body).unwrap();
    assert_eq!(body["type"], "Create");
    assert_eq!(body["object"]["type"], "Note");
    assert_eq!(tasks[0].key_id.as_str(), "https://a.test/users/alice#main-key");

    let dave = w.local("dave");
    let local_only = w.post("hey @dave", Visibility::Direct, &[&dave]);
    assert!(fan_out(&w.site(), &local_only, &w.alice, w.now).unwrap().is_empty());
}

#[test]
fn direct_status_with_many_followers_reaches_only_the_mentioned() {
    let w = World::new();
    for i in 0..50 {
        let f = w.remote(&format!("https://f{}.test/users/u{i}", i % 7));
        w.accept_follower(&f);
    }
    let bob = w.remote("https://b.test/users/bob");
    let status = w.post("psst", Visibility::Direct, &[&bob]);
    let tasks = fan_out(&w.site(), &status, &w.alice, w.now).unwrap();
    assert_eq!(tasks.len(), 1);
    assert_eq!(tasks[0].target_inbox, bob.inbox_uri);
    let body: serde_json::Value = serde_json::from_str(&tasks[0].activity_body).unwrap();
    assert_eq!(body["object"]["to"], serde_json::json!([bob.actor_uri.as_str()]));
    assert_eq!(body["object"].get("cc").map_or(0, |c| c.as_array().unwrap().len()), 0);
}

#[test]
fn delete_goes_to_each_peer_once() {
    let w = World::new();
    assert!(propagate_delete(&w.site(), &w.alice, w.now).unwrap().is_empty());
    for (domain, inbox) in [
        ("b.test", "https://b.test/users/bob/inbox"),
        ("c.test", "https://c.test/users/carol/inbox"),
        ("b.test", "https://b.test/users/other/inbox"),
    ] {
        w.store.record_peer(domain, &url(inbox)).unwrap();
    }
    let tasks = propagate_delete(&w.site(), &w.alice, w.now).unwrap();
    assert_eq!(tasks.len(), 2);
    for t in &tasks {
        let body: serde_json::Value = serde_json::from_str(&t.activity_body).unwrap();
        assert_eq!(body["type"], "Delete");
        assert_eq!(body["object"], "https://a.test/users/alice");
    }
}

/// Answers from a script and keeps every request it saw.
struct Scripted {
    replies: Mutex<VecDeque<Result<u16, TransportError>>>,
    seen: Mutex<Vec<OutboundRequest>>,
}

impl Scripted {
    fn new(replies: impl IntoIterator<Item = Result<u16, TransportError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Transport for Scripted {
    fn send(&self, request: OutboundRequest) -> Result<HttpResponse, TransportError> {
        self.seen.lock().unwrap().push(request);
        let next = self.replies.lock().unwrap().pop_front().unwrap_or(Ok(202));
        next.map(|status| HttpResponse::new(status, "application/json", "{}"))
    }
}

fn queued(w: &World) -> u64 {
    let bob = w.remote("https://b.test/users/bob");
    let status = w.post("deliver me", Visibility::Public, &[&bob]);
    fan_out(&w.site(), &status, &w.alice, w.now).unwrap()[0].task_id
}

fn run_queue(w: &World, transport: &Scripted, at: DateTime<Utc>) {
    let key = w.key.clone();
    process_queue(&w.site(), at, transport, &|_| Some(key.clone()), RetryPolicy::default()).unwrap();
}

fn task(w: &World, id: u64) -> moth_fed::federation::DeliveryTask {
    w.store.tasks().into_iter().find(|t| t.task_id == id).unwrap()
}

#[test]
fn delivery_is_signed_and_verifiable() {
    let w = World::new();
    let id = queued(&w);
    let transport = Scripted::new([Ok(202)]);
    run_queue(&w, &transport, w.now);
    assert!(matches!(task(&w, id).state, TaskState::Delivered { note: None, .. }));

    let sent = transport.seen.lock().unwrap()[0].clone();
    assert_eq!(sent.method, "POST");
    assert_eq!(sent.headers.get("content-type"), Some(ACTIVITY_JSON));
    for h in ["date", "digest", "signature", "host"] {
        assert!(sent.headers.get(h).is_some(), "{h} missing");
    }
    let request: HttpRequest = sent.to_server_request();
    let pem = public_key_pem(&w.key.to_public_key());
    let source = |key_id: &url::Url, _: bool| {
        Ok(SignerKey {
            key_id: key_id.clone(),
            owner: url("https://a.test/users/alice"),
            public_key_pem: pem.clone(),
        })
    };
    verify_signature(&request, w.now, Duration::seconds(300), &source).unwrap();
}

#[test]
fn timeouts_then_success_counts_attempts_and_backs_off() {
    let w = World::new();
    let id = queued(&w);
    let transport = Scripted::new([Err(TransportError::Timeout), Err(TransportError::Timeout), Ok(202)]);
    run_queue(&w, &transport, w.now);
    let t = task(&w, id);
    assert_eq!(t.attempts, 1);
    assert_eq!(t.next_attempt_at, w.now + Duration::seconds(20));
    assert_eq!(t.last_error.as_deref(), Some("request timed out"));

    // Not due yet: nothing is sent.
    run_queue(&w, &transport, w.now + Duration::seconds(19));
    assert_eq!(transport.seen.lock().unwrap().len(), 1);

    let second = w.now + Duration::seconds(20);
    run_queue(&w, &transport, second);
    let t = task(&w, id);
    assert_eq!(t.attempts, 2);
    assert_eq!(t.next_attempt_at, second + Duration::seconds(40));

    run_queue(&w, &transport, second + Duration::seconds(40));
    let t = task(&w, id);
    assert_eq!(t.attempts, 2);
    assert!(matches!(t.state, TaskState::Delivered { .. }));
}

#[test]
fn client_errors_are_terminal_but_429_retries() {
    let w = World::new();
    let id = queued(&w);
    run_queue(&w, &Scripted::new([Ok(403)]), w.now);
    let t = task(&w, id);
    assert!(t.failure_reason().unwrap().contains("403"), "{t:?}");

    let w = World::new();
    let id = queued(&w);
    run_queue(&w, &Scripted::new([Ok(429)]), w.now);
    let t = task(&w, id);
    assert_eq!(t.state, TaskState::Pending);
    assert_eq!(t.attempts, 1);
}

#[test]
fn retries_stop_at_max_attempts() {
    let w = World::new();
    let id = queued(&w);
    let transport = Scripted::new(std::iter::repeat_n(Ok(503), 20));
    let mut at = w.now;
    for _ in 0..20 {
        run_queue(&w, &transport, at);
        at += Duration::days(2);
    }
    let t = task(&w, id);
    assert_eq!(t.attempts, RetryPolicy::default().max_attempts);
    assert!(t.failure_reason().unwrap().contains("503"));
    assert_eq!(transport.seen.lock().unwrap().len(), 8);
}

#[test]
fn missing_key_fails_with_reason() {
    let w = World::new();
    let id = queued(&w);
    process_queue(&w.site(), w.now, &Scripted::new([]), &|_: AccountId| None, RetryPolicy::default()).unwrap();
    assert!(task(&w, id).failure_reason().unwrap().contains("KeyUnavailable"));
}
