//! Generators shared by the integration tests.
#![allow(dead_code)]

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use url::Url;

use moth_fed::activitypub::{
    public_collection, Activity, ActivityKind, ActivityObject, Actor, ActorKind, Note, PublicKey, TagEntry, TagKind,
};
use moth_fed::mastodon::{Account, AccountId, Mention, Status, StatusId, Visibility};

pub const PEM: &str = "-----BEGIN PUBLIC KEY-----\nMFwwDQYJKoZIhvcNAQEBBQADSwAwSAJBAK\n-----END PUBLIC KEY-----\n";

pub fn url(s: &str) -> Url {
    Url::parse(s).unwrap()
}

pub fn host() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,7}\\.(test|example|social)"
}

pub fn username() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,11}"
}

/// Millisecond precision, 2000 to 2030.
pub fn timestamp() -> impl Strategy<Value = DateTime<Utc>> {
    (946_684_800_000i64..1_893_456_000_000).prop_map(|ms| Utc.timestamp_millis_opt(ms).unwrap())
}

/// Any printable text, including markup and non-ASCII.
pub fn text() -> impl Strategy<Value = String> {
    "\\PC{0,60}"
}

pub fn hashtag() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,9}"
}

pub fn actor_url() -> impl Strategy<Value = Url> {
    (host(), username()).prop_map(|(h, u)| url(&format!("https://{h}/users/{u}")))
}

pub fn actor() -> impl Strategy<Value = Actor> {
    (
        host(),
        username(),
        proptest::sample::select(ActorKind::ALL.to_vec()),
        proptest::option::of(text()),
    )
        .prop_map(|(h, u, kind, name)| {
            let id = url(&format!("https://{h}/users/{u}"));
            Actor {
                kind,
                preferred_username: u.clone(),
                name,
                inbox: url(&format!("{id}/inbox")),
                outbox: url(&format!("{id}/outbox")),
                followers: url(&format!("{id}/followers")),
                following: url(&format!("{id}/following")),
                public_key: PublicKey {
                    id: url(&format!("{id}#main-key")),
                    owner: id.clone(),
                    public_key_pem: PEM.into(),
                },
                id,
            }
        })
}

fn audience() -> impl Strategy<Value = Vec<Url>> {
    proptest::collection::vec(
        prop_oneof![1 => Just(public_collection()), 3 => actor_url()],
        0..4,
    )
}

fn tag_entry() -> impl Strategy<Value = TagEntry> {
    prop_oneof![
        (username(), host()).prop_map(|(u, h)| TagEntry {
            kind: TagKind::Mention,
            href: Some(url(&format!("https://{h}/users/{u}"))),
            name: format!("@{u}@{h}"),
        }),
        (hashtag(), proptest::option::of(host())).prop_map(|(t, h)| TagEntry {
            kind: TagKind::Hashtag,
            href: h.map(|h| url(&format!("https://{h}/tags/{t}"))),
            name: format!("#{t}"),
        }),
    ]
}

pub fn note() -> impl Strategy<Value = Note> {
    (
        actor_url(),
        1u64..1_000_000,
        text(),
        audience(),
        audience(),
        proptest::collection::vec(tag_entry(), 0..5),
        timestamp(),
        proptest::option::of(actor_url()),
    )
        .prop_map(|(author, n, content, to, cc, tags, published, reply)| Note {
            id: url(&format!("{author}/statuses/{n}")),
            attributed_to: author,
            content,
            to,
            cc,
            tags,
            published,
            in_reply_to: reply.map(|r| url(&format!("{r}/statuses/1"))),
        })
}

pub fn activity() -> impl Strategy<Value = Activity> {
    (
        proptest::sample::select(ActivityKind::ALL.to_vec()),
        note(),
        actor_url(),
        audience(),
        audience(),
        proptest::option::of(timestamp()),
    )
        .prop_map(|(kind, note, target, to, cc, published)| {
            let actor = note.attributed_to.clone();
            let object = match kind {
                ActivityKind::Create => ActivityObject::Note(Box::new(note)),
                _ => ActivityObject::Uri(target),
            };
            Activity {
                id: url(&format!("{actor}#{}/1", kind.name().to_lowercase())),
                kind,
                actor,
                object,
                to,
                cc,
                published,
            }
        })
}

pub fn remote_account(id: u64, actor: &Url) -> Account {
    let host = actor.host_str().unwrap();
    let name = actor.path().rsplit('/').next().unwrap();
    Account {
        id: AccountId(id),
        username: name.into(),
        acct: format!("{name}@{host}"),
        display_name: String::new(),
        actor_uri: actor.clone(),
        inbox_uri: url(&format!("{actor}/inbox")),
        followers_uri: url(&format!("{actor}/followers")),
        public_key_pem: Some(PEM.into()),
        created_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
    }
}

/// A status as a client would produce it: escaped plain text, normalized
/// tags, at least one mention when direct.
pub fn status() -> impl Strategy<Value = (Status, Account)> {
    (
        actor_url(),
        "[a-zA-Z0-9 <>&\"'!?.,\n]{0,60}",
        proptest::sample::select(Visibility::ALL.to_vec()),
        proptest::collection::btree_set(actor_url(), 0..4),
        proptest::collection::btree_set(hashtag(), 0..4),
        timestamp(),
        1u64..1_000_000,
    )
        .prop_filter("direct needs a mention", |(_, _, vis, mentions, ..)| {
            *vis != Visibility::Direct || !mentions.is_empty()
        })
        .prop_filter("author does not mention itself", |(author, _, _, mentions, ..)| {
            !mentions.contains(author)
        })
        .prop_map(|(author_uri, body, visibility, mentioned, tags, created_at, n)| {
            let author = remote_account(1, &author_uri);
            let mentions = mentioned
                .iter()
                .map(|u| Mention {
                    acct: remote_account(0, u).acct,
                    actor_uri: u.clone(),
                })
                .collect();
            let status = Status {
                id: StatusId(n),
                uri: url(&format!("{author_uri}/statuses/{n}")),
                content: moth_fed::mastodon::render_plain_text(&body),
                account_id: author.id,
                visibility,
                mentions,
                tags: tags.into_iter().collect(),
                created_at,
                in_reply_to_id: None,
                in_reply_to_uri: None,
            };
            (status, author)
        })
}
