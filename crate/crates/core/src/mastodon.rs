//! Mastodon's Account and Status, and conversion to and from ActivityPub
//! Actor and Note.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::activitypub::{
    is_public, public_collection, Actor, ActorKind, Note, PublicKey, TagEntry, TagKind,
};
use crate::http::host_header;
use crate::identity::AcctHandle;
use crate::routes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub u64);

/// Time-ordered: sorting ids sorts statuses oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatusId(pub u64);

impl AccountId {
    /// Placeholder carried by converted values until storage assigns an id.
    pub const UNASSIGNED: AccountId = AccountId(0);
}

impl StatusId {
    pub const UNASSIGNED: StatusId = StatusId(0);
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for StatusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("account {0} is remote; its actor document lives on its own server")]
    RemoteAccount(String),
    #[error("account {0} has no public key")]
    MissingKey(String),
    #[error("status invariant violated: {0}")]
    InvalidStatus(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: AccountId,
    pub username: String,
    /// `user` for local accounts, `user@domain` for remote ones.
    pub acct: String,
    pub display_name: String,
    pub actor_uri: Url,
    pub inbox_uri: Url,
    pub followers_uri: Url,
    pub public_key_pem: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl Account {
    pub fn is_local(&self) -> bool {
        !self.acct.contains('@')
    }

    /// Domain part of the actor URI, including a non-default port.
    pub fn domain(&self) -> String {
        host_header(&self.actor_uri)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Direct,
    Followers,
    Public,
}

impl Visibility {
    pub const ALL: [Visibility; 3] = [Visibility::Public, Visibility::Followers, Visibility::Direct];

    pub fn name(self) -> &'static str {
        match self {
            Visibility::Public => "public",
            Visibility::Followers => "followers",
            Visibility::Direct => "direct",
        }
    }

    /// Accepts Mastodon's names, treating `private` as followers-only and
    /// `unlisted` as public.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "public" | "unlisted" => Some(Visibility::Public),
            "followers" | "private" => Some(Visibility::Followers),
            "direct" => Some(Visibility::Direct),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub acct: String,
    pub actor_uri: Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub id: StatusId,
    pub uri: Url,
    pub content: String,
    pub account_id: AccountId,
    pub visibility: Visibility,
    pub mentions: Vec<Mention>,
    pub tags: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub in_reply_to_id: Option<StatusId>,
    pub in_reply_to_uri: Option<Url>,
}

impl Status {
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        if let Some(bad) = self.tags.iter().find(|t| !is_normalized_tag(t)) {
            return Err(ModelError::InvalidStatus(format!("tag {bad:?} is not normalized")));
        }
        if self.visibility == Visibility::Direct && self.mentions.is_empty() {
            return Err(ModelError::InvalidStatus("direct status without mentions".into()));
        }
        Ok(())
    }

    pub fn mentions_actor(&self, actor_uri: &Url) -> bool {
        self.mentions.iter().any(|m| &m.actor_uri == actor_uri)
    }
}

fn is_normalized_tag(tag: &str) -> bool {
    !tag.is_empty() && !tag.starts_with('#') && tag.to_lowercase() == tag
}

/// Converts a received actor. `seen_at` becomes the account's creation time.
pub fn actor_to_account(actor: &Actor, local_domain: &str, seen_at: DateTime<Utc>) -> Account {
    let host = host_header(&actor.id);
    let acct = if host.eq_ignore_ascii_case(local_domain) {
        actor.preferred_username.clone()
    } else {
        format!("{}@{}", actor.preferred_username, host)
    };
    Account {
        id: AccountId::UNASSIGNED,
        username: actor.preferred_username.clone(),
        acct,
        display_name: actor.name.clone().unwrap_or_default(),
        actor_uri: actor.id.clone(),
        inbox_uri: actor.inbox.clone(),
        followers_uri: actor.followers.clone(),
        public_key_pem: Some(actor.public_key.public_key_pem.clone()),
        created_at: seen_at,
    }
}

pub fn account_to_actor(account: &Account, base_url: &Url) -> Result<Actor, ModelError> {
    if !account.is_local() {
        return Err(ModelError::RemoteAccount(account.acct.clone()));
    }
    let pem = account
        .public_key_pem
        .clone()
        .ok_or_else(|| ModelError::MissingKey(account.acct.clone()))?;
    let id = routes::actor(base_url, &account.username);
    Ok(Actor {
        kind: ActorKind::Person,
        preferred_username: account.username.clone(),
        name: (!account.display_name.is_empty()).then(|| account.display_name.clone()),
        inbox: routes::inbox(base_url, &account.username),
        outbox: routes::outbox(base_url, &account.username),
        followers: routes::followers(base_url, &account.username),
        following: routes::following(base_url, &account.username),
        public_key: PublicKey {
            id: routes::key_id(&id),
            owner: id.clone(),
            public_key_pem: pem,
        },
        id,
    })
}

/// Addressing for a status: public statuses go to the public collection,
/// followers-only ones to the author's followers, direct ones to mentions.
pub fn audience_for(status: &Status, author: &Account) -> (Vec<Url>, Vec<Url>) {
    let mentioned: Vec<Url> = status.mentions.iter().map(|m| m.actor_uri.clone()).collect();
    match status.visibility {
        Visibility::Public => {
            let mut cc = vec![author.followers_uri.clone()];
            cc.extend(mentioned.into_iter().filter(|u| u != &author.followers_uri));
            (vec![public_collection()], cc)
        }
        Visibility::Followers => (vec![author.followers_uri.clone()], mentioned),
        Visibility::Direct => (mentioned, Vec::new()),
    }
}

pub fn status_to_note(status: &Status, author: &Account) -> Note {
    let (to, cc) = audience_for(status, author);
    let mut tags: Vec<TagEntry> = status
        .mentions
        .iter()
        .map(|m| TagEntry {
            kind: TagKind::Mention,
            href: Some(m.actor_uri.clone()),
            name: format!("@{}", m.acct),
        })
        .collect();
    tags.extend(status.tags.iter().map(|t| TagEntry {
        kind: TagKind::Hashtag,
        href: None,
        name: format!("#{t}"),
    }));
    Note {
        id: status.uri.clone(),
        attributed_to: author.actor_uri.clone(),
        content: status.content.clone(),
        to,
        cc,
        tags,
        published: status.created_at,
        in_reply_to: status.in_reply_to_uri.clone(),
    }
}

/// Maps a mentioned actor URI to a known account.
pub trait AccountResolver {
    fn resolve_actor(&self, actor_uri: &Url) -> Option<Account>;
}

impl<F: Fn(&Url) -> Option<Account>> AccountResolver for F {
    fn resolve_actor(&self, actor_uri: &Url) -> Option<Account> {
        self(actor_uri)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConversionWarning {
    /// The mention was kept with an acct derived from its name and href.
    UnresolvableMention(Url),
    /// Nobody was addressed; the status was stored as followers-only.
    EmptyAudience,
    /// Scripts, styles or event handler attributes were removed.
    ContentSanitized,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Converted {
    pub status: Status,
    pub warnings: Vec<ConversionWarning>,
}

/// Converts a received note. The status id is left unassigned for storage to
/// fill in.
pub fn note_to_status(note: &Note, author: &Account, resolver: &dyn AccountResolver) -> Converted {
    let mut warnings = Vec::new();
    let mut mentions: Vec<Mention> = Vec::new();
    for entry in note.tags.iter().filter(|t| t.kind == TagKind::Mention) {
        let Some(href) = &entry.href else { continue };
        if mentions.iter().any(|m| &m.actor_uri == href) {
            continue;
        }
        let acct = match resolver.resolve_actor(href) {
            Some(account) => account.acct,
            None => {
                warnings.push(ConversionWarning::UnresolvableMention(href.clone()));
                let name = entry.name.trim_start_matches('@');
                if name.contains('@') || name.is_empty() {
                    name.to_string()
                } else {
                    format!("{name}@{}", host_header(href))
                }
            }
        };
        mentions.push(Mention {
            acct,
            actor_uri: href.clone(),
        });
    }

    let mut tags: Vec<String> = Vec::new();
    for entry in note.tags.iter().filter(|t| t.kind == TagKind::Hashtag) {
        let tag = entry.name.trim_start_matches('#').to_lowercase();
        if !tag.is_empty() && !tags.contains(&tag) {
            tags.push(tag);
        }
    }

    let addressed = |uri: &Url| note.to.contains(uri) || note.cc.contains(uri);
    let mut visibility = if note.to.iter().any(|u| is_public(u.as_str())) {
        Visibility::Public
    } else if addressed(&author.followers_uri) {
        Visibility::Followers
    } else {
        Visibility::Direct
    };
    if visibility == Visibility::Direct && mentions.is_empty() {
        warnings.push(ConversionWarning::EmptyAudience);
        visibility = Visibility::Followers;
    }

    let content = sanitize_html(&note.content);
    if content != note.content {
        warnings.push(ConversionWarning::ContentSanitized);
    }

    Converted {
        status: Status {
            id: StatusId::UNASSIGNED,
            uri: note.id.clone(),
            content,
            account_id: author.id,
            visibility,
            mentions,
            tags,
            created_at: note.published,
            in_reply_to_id: None,
            in_reply_to_uri: note.in_reply_to.clone(),
        },
        warnings,
    }
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?:^|[^A-Za-z0-9_/])@([A-Za-z0-9_]+)(?:@([A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?(?:\.[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?)+))?",
        )
        .unwrap()
    })
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^\p{L}\p{N}_/])#([\p{L}\p{N}_]+)").unwrap())
}

/// Every `@user` or `@user@domain` token in order of first appearance. A
/// token must start the text or follow a non-word character other than `/`.
pub fn extract_mentions(content: &str, local_domain: &str) -> Vec<AcctHandle> {
    let mut found: Vec<AcctHandle> = Vec::new();
    for caps in mention_re().captures_iter(content) {
        let user = &caps[1];
        let domain = caps.get(2).map_or(local_domain, |m| m.as_str());
        if let Ok(handle) = AcctHandle::new(user, domain, local_domain) {
            if !found.contains(&handle) {
                found.push(handle);
            }
        }
    }
    found
}

/// Every `#tag` token, lowercased without the `#`, in order of first appearance.
pub fn extract_tags(content: &str) -> Vec<String> {
    let mut found: Vec<String> = Vec::new();
    for caps in tag_re().captures_iter(content) {
        let tag = caps[1].to_lowercase();
        if !found.contains(&tag) {
            found.push(tag);
        }
    }
    found
}

fn script_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?is)<(script|style)\b[^>]*>.*?</(script|style)\s*>|<(script|style)\b[^>]*>").unwrap()
    })
}

fn tag_markup_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Za-z][^>]*>").unwrap())
}

fn handler_attr_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)\s+on[a-z]+\s*=\s*("[^"]*"|'[^']*'|[^\s>]+)"#).unwrap()
    })
}

/// Removes script and style elements and `on*` attributes; all other markup
/// passes through unchanged.
pub fn sanitize_html(content: &str) -> String {
    let without_scripts = script_re().replace_all(content, "");
    tag_markup_re()
        .replace_all(&without_scripts, |caps: &regex::Captures<'_>| {
            handler_attr_re().replace_all(&caps[0], "").into_owned()
        })
        .into_owned()
}

/// Renders client-submitted plain text as the HTML stored in `content`.
pub fn render_plain_text(text: &str) -> String {
    let mut escaped = String::with_capacity(text.len() + 7);
    for c in text.chars() {
        match c {
            '&' => escaped.push_str("&amp;"),
            '<' => escaped.push_str("&lt;"),
            '>' => escaped.push_str("&gt;"),
            '"' => escaped.push_str("&quot;"),
            '\'' => escaped.push_str("&#39;"),
            '\n' => escaped.push_str("<br>"),
            c => escaped.push(c),
        }
    }
    format!("<p>{escaped}</p>")
}

/// The set of tags carried by statuses, for index cross-checks.
pub fn tag_set(status: &Status) -> BTreeSet<&str> {
    status.tags.iter().map(String::as_str).collect()
}
