//! ActivityPub wire objects: actors, notes, activities and collections.
//!
//! Documents are emitted with an `@context` member and with no `null`
//! members. Parsing is lenient about unknown members and strict about what
//! delivery and verification depend on (type, actor, inbox, key).

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;
use url::Url;

pub const AS_CONTEXT: &str = "https://www.w3.org/ns/activitystreams";
pub const SECURITY_CONTEXT: &str = "https://w3id.org/security/v1";
/// Addressing this collection makes an object public.
pub const PUBLIC_COLLECTION: &str = "https://www.w3.org/ns/activitystreams#Public";

pub fn public_collection() -> Url {
    Url::parse(PUBLIC_COLLECTION).expect("constant URI")
}

/// True for the public collection and its compact aliases.
pub fn is_public(uri: &str) -> bool {
    matches!(uri, PUBLIC_COLLECTION | "as:Public" | "Public")
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ApError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("missing required field {0:?}")]
    MissingRequiredField(String),
    #[error("unsupported type {0:?}")]
    UnsupportedType(String),
    #[error("actor has no {0} endpoint")]
    MissingEndpoint(String),
    #[error("actor has no usable public key: {0}")]
    MissingKey(String),
}

impl ApError {
    pub fn reason(&self) -> &'static str {
        match self {
            ApError::MalformedDocument(_) => "MalformedDocument",
            ApError::MissingRequiredField(_) => "MissingRequiredField",
            ApError::UnsupportedType(_) => "UnsupportedType",
            ApError::MissingEndpoint(_) => "MissingEndpoint",
            ApError::MissingKey(_) => "MissingKey",
        }
    }
}

fn malformed(why: impl Into<String>) -> ApError {
    ApError::MalformedDocument(why.into())
}

pub(crate) fn serialize_timestamp<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(t))
}

fn serialize_opt_timestamp<S: Serializer>(
    t: &Option<DateTime<Utc>>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => serialize_timestamp(t, s),
        None => s.serialize_none(),
    }
}

/// RFC 3339 in UTC with a `Z` offset.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>, ApError> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| malformed(format!("timestamp {text:?}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorKind {
    Person,
    Application,
    Group,
    Organization,
    Service,
}

impl ActorKind {
    pub const ALL: [ActorKind; 5] = [
        ActorKind::Person,
        ActorKind::Application,
        ActorKind::Group,
        ActorKind::Organization,
        ActorKind::Service,
    ];

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActorKind::Person => "Person",
            ActorKind::Application => "Application",
            ActorKind::Group => "Group",
            ActorKind::Organization => "Organization",
            ActorKind::Service => "Service",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PublicKey {
    pub id: Url,
    pub owner: Url,
    pub public_key_pem: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Actor {
    pub id: Url,
    #[serde(rename = "type")]
    pub kind: ActorKind,
    pub preferred_username: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub inbox: Url,
    pub outbox: Url,
    pub followers: Url,
    pub following: Url,
    pub public_key: PublicKey,
}

impl Actor {
    pub fn host(&self) -> &str {
        self.id.host_str().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagKind {
    Mention,
    Hashtag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagEntry {
    #[serde(rename = "type")]
    pub kind: TagKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub href: Option<Url>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub struct Note {
    pub id: Url,
    pub attributed_to: Url,
    pub content: String,
    pub to: Vec<Url>,
    pub cc: Vec<Url>,
    #[serde(rename = "tag", skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<TagEntry>,
    #[serde(serialize_with = "serialize_timestamp")]
    pub published: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<Url>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivityKind {
    Create,
    Follow,
    Accept,
    Like,
    Announce,
    Delete,
    Undo,
}

impl ActivityKind {
    pub const ALL: [ActivityKind; 7] = [
        ActivityKind::Create,
        ActivityKind::Follow,
        ActivityKind::Accept,
        ActivityKind::Like,
        ActivityKind::Announce,
        ActivityKind::Delete,
        ActivityKind::Undo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivityKind::Create => "Create",
            ActivityKind::Follow => "Follow",
            ActivityKind::Accept => "Accept",
            ActivityKind::Like => "Like",
            ActivityKind::Announce => "Announce",
            ActivityKind::Delete => "Delete",
            ActivityKind::Undo => "Undo",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// What an activity acts on. Only `Create` embeds an object; every other
/// kind references its target by URI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum ActivityObject {
    Uri(Url),
    Note(Box<Note>),
}

impl ActivityObject {
    pub fn id(&self) -> &Url {
        match self {
            ActivityObject::Uri(uri) => uri,
            ActivityObject::Note(note) => &note.id,
        }
    }

    pub fn as_note(&self) -> Option<&Note> {
        match self {
            ActivityObject::Note(note) => Some(note),
            ActivityObject::Uri(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Activity {
    pub id: Url,
    #[serde(rename = "type")]
    pub kind: ActivityKind,
    pub actor: Url,
    pub object: ActivityObject,
    pub to: Vec<Url>,
    pub cc: Vec<Url>,
    #[serde(
        serialize_with = "serialize_opt_timestamp",
        skip_serializing_if = "Option::is_none"
    )]
    pub published: Option<DateTime<Utc>>,
}

/// A single-page ordered collection of URIs or embedded activities.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename = "OrderedCollection", rename_all = "camelCase")]
pub struct OrderedCollection {
    pub id: Url,
    pub total_items: usize,
    pub ordered_items: Vec<Value>,
}

/// A document that can be emitted at the top level.
pub trait ApDocument: Serialize {
    fn context(&self) -> Value {
        Value::String(AS_CONTEXT.into())
    }
}

impl ApDocument for Actor {
    fn context(&self) -> Value {
        Value::Array(vec![AS_CONTEXT.into(), SECURITY_CONTEXT.into()])
    }
}
impl ApDocument for Note {}
impl ApDocument for Activity {}
impl ApDocument for OrderedCollection {}

/// The document as a JSON value without `@context`, as embedded in another.
pub fn to_embedded_value<T: Serialize>(obj: &T) -> Value {
    serde_json::to_value(obj).expect("wire types serialize infallibly")
}

pub fn to_document_value<T: ApDocument>(obj: &T) -> Value {
    let mut value = to_embedded_value(obj);
    if let Value::Object(map) = &mut value {
        map.insert("@context".into(), obj.context());
    }
    value
}

/// Top-level JSON text with `@context`. Member order is deterministic.
pub fn serialize_object<T: ApDocument>(obj: &T) -> String {
    to_document_value(obj).to_string()
}

fn as_object(value: &Value) -> Result<&Map<String, Value>, ApError> {
    value
        .as_object()
        .ok_or_else(|| malformed("document is not a JSON object"))
}

fn parse_json(text: &str) -> Result<Value, ApError> {
    serde_json::from_str(text).map_err(|e| malformed(format!("invalid JSON: {e}")))
}

fn absolute_uri(text: &str, field: &str) -> Result<Url, ApError> {
    let url = Url::parse(text).map_err(|e| malformed(format!("{field}: {text:?} is not an absolute URI ({e})")))?;
    if url.host_str().is_none() {
        return Err(malformed(format!("{field}: {text:?} has no host")));
    }
    Ok(url)
}

/// A URI member, given either as a string or as an object with an `id`.
fn uri_member(obj: &Map<String, Value>, field: &str) -> Result<Option<Url>, ApError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => absolute_uri(s, field).map(Some),
        Some(Value::Object(inner)) => match inner.get("id") {
            Some(Value::String(s)) => absolute_uri(s, field).map(Some),
            _ => Err(malformed(format!("{field}: embedded object without id"))),
        },
        Some(_) => Err(malformed(format!("{field}: expected a URI"))),
    }
}

fn uri_list(obj: &Map<String, Value>, field: &str) -> Result<Vec<Url>, ApError> {
    let items: Vec<&Value> = match obj.get(field) {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(items)) => items.iter().collect(),
        Some(single) => vec![single],
    };
    items
        .into_iter()
        .map(|item| match item {
            Value::String(s) if is_public(s) => Ok(public_collection()),
            Value::String(s) => absolute_uri(s, field),
            Value::Object(inner) => inner
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("{field}: embedded object without id")))
                .and_then(|s| absolute_uri(s, field)),
            _ => Err(malformed(format!("{field}: expected URIs"))),
        })
        .collect()
}

fn string_member<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<Option<&'a str>, ApError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(malformed(format!("{field}: expected a string"))),
    }
}

fn type_name(obj: &Map<String, Value>) -> Option<&str> {
    match obj.get("type")? {
        Value::String(s) => Some(s),
        Value::Array(items) => items.iter().find_map(Value::as_str),
        _ => None,
    }
}

pub fn parse_note_value(value: &Value) -> Result<Note, ApError> {
    let obj = as_object(value)?;
    match type_name(obj) {
        Some("Note") => {}
        Some(other) => return Err(ApError::UnsupportedType(other.to_string())),
        None => return Err(ApError::MissingRequiredField("type".into())),
    }
    let id = uri_member(obj, "id")?.ok_or_else(|| ApError::MissingRequiredField("id".into()))?;
    let attributed_to = uri_member(obj, "attributedTo")?
        .ok_or_else(|| ApError::MissingRequiredField("attributedTo".into()))?;
    let published = string_member(obj, "published")?
        .ok_or_else(|| ApError::MissingRequiredField("published".into()))
        .and_then(parse_timestamp)?;
    let content = string_member(obj, "content")?.unwrap_or_default().to_string();
    let tags = match obj.get("tag") {
        Some(Value::Array(items)) => items.iter().filter_map(parse_tag_entry).collect(),
        Some(single @ Value::Object(_)) => parse_tag_entry(single).into_iter().collect(),
        _ => Vec::new(),
    };
    Ok(Note {
        id,
        attributed_to,
        content,
        to: uri_list(obj, "to")?,
        cc: uri_list(obj, "cc")?,
        tags,
        published,
        in_reply_to: uri_member(obj, "inReplyTo")?,
    })
}

/// Entries of other types (emoji and the like) and malformed entries are skipped.
fn parse_tag_entry(value: &Value) -> Option<TagEntry> {
    let obj = value.as_object()?;
    let name = obj.get("name").and_then(Value::as_str);
    let href = obj
        .get("href")
        .and_then(Value::as_str)
        .and_then(|s| absolute_uri(s, "href").ok());
    match type_name(obj)? {
        "Mention" => Some(TagEntry {
            kind: TagKind::Mention,
            name: name.unwrap_or_default().to_string(),
            href: Some(href?),
        }),
        "Hashtag" => {
            let name = name?.trim();
            if name.trim_start_matches('#').is_empty() {
                return None;
            }
            Some(TagEntry {
                kind: TagKind::Hashtag,
                name: if name.starts_with('#') {
                    name.to_string()
                } else {
                    format!("#{name}")
                },
                href,
            })
        }
        _ => None,
    }
}

fn parse_activity_value(value: &Value, require_context: bool) -> Result<Activity, ApError> {
    let obj = as_object(value)?;
    let type_text = type_name(obj).ok_or_else(|| ApError::MissingRequiredField("type".into()))?;
    let actor = uri_member(obj, "actor")?.ok_or_else(|| ApError::MissingRequiredField("actor".into()))?;
    let kind = ActivityKind::from_name(type_text)
        .ok_or_else(|| ApError::UnsupportedType(type_text.to_string()))?;
    let id = uri_member(obj, "id")?.ok_or_else(|| ApError::MissingRequiredField("id".into()))?;
    if require_context && !obj.contains_key("@context") {
        return Err(ApError::MissingRequiredField("@context".into()));
    }
    let object_value = obj
        .get("object")
        .filter(|v| !v.is_null())
        .ok_or_else(|| ApError::MissingRequiredField("object".into()))?;
    let object = match (kind, object_value) {
        (ActivityKind::Create, Value::Object(_)) => {
            ActivityObject::Note(Box::new(parse_note_value(object_value)?))
        }
        (ActivityKind::Create, _) => return Err(malformed("Create must embed a Note")),
        (_, Value::String(s)) => ActivityObject::Uri(absolute_uri(s, "object")?),
        (_, Value::Object(inner)) => match inner.get("id").and_then(Value::as_str) {
            Some(s) => ActivityObject::Uri(absolute_uri(s, "object")?),
            None => return Err(malformed("object: embedded object without id")),
        },
        _ => return Err(malformed("object: expected a URI or an object")),
    };
    let published = string_member(obj, "published")?
        .map(parse_timestamp)
        .transpose()?;
    Ok(Activity {
        id,
        kind,
        actor,
        object,
        to: uri_list(obj, "to")?,
        cc: uri_list(obj, "cc")?,
        published,
    })
}

pub fn parse_activity(text: &str) -> Result<Activity, ApError> {
    parse_activity_value(&parse_json(text)?, true)
}

/// Parses an activity embedded in another document (no `@context` needed).
pub fn parse_embedded_activity(value: &Value) -> Result<Activity, ApError> {
    parse_activity_value(value, false)
}

pub fn validate_actor_document(text: &str) -> Result<Actor, ApError> {
    parse_actor_value(&parse_json(text)?)
}

pub fn parse_actor_value(value: &Value) -> Result<Actor, ApError> {
    let obj = as_object(value)?;
    let type_text = type_name(obj).ok_or_else(|| ApError::MissingRequiredField("type".into()))?;
    let kind = ActorKind::from_name(type_text)
        .ok_or_else(|| ApError::UnsupportedType(type_text.to_string()))?;
    let id = uri_member(obj, "id")?.ok_or_else(|| ApError::MissingRequiredField("id".into()))?;
    let preferred_username = string_member(obj, "preferredUsername")?
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ApError::MissingRequiredField("preferredUsername".into()))?
        .to_string();
    let endpoint = |field: &str| -> Result<Url, ApError> {
        let uri = uri_member(obj, field)?.ok_or_else(|| ApError::MissingEndpoint(field.to_string()))?;
        if uri.host_str() != id.host_str() {
            return Err(malformed(format!("{field} {uri} is not on the actor's host")));
        }
        Ok(uri)
    };
    let inbox = endpoint("inbox")?;
    let outbox = endpoint("outbox")?;
    let followers = endpoint("followers")?;
    let following = endpoint("following")?;
    let key = obj
        .get("publicKey")
        .and_then(Value::as_object)
        .ok_or_else(|| ApError::MissingKey("no publicKey member".into()))?;
    let key_id = uri_member(key, "id")?.ok_or_else(|| ApError::MissingKey("publicKey has no id".into()))?;
    let owner = uri_member(key, "owner")?.ok_or_else(|| ApError::MissingKey("publicKey has no owner".into()))?;
    if owner != id {
        return Err(ApError::MissingKey(format!("key owner {owner} is not the actor {id}")));
    }
    let pem = string_member(key, "publicKeyPem")?
        .filter(|p| p.contains("-----BEGIN"))
        .ok_or_else(|| ApError::MissingKey("publicKeyPem absent or not PEM".into()))?;
    Ok(Actor {
        id,
        kind,
        preferred_username,
        name: string_member(obj, "name")?.map(str::to_string),
        inbox,
        outbox,
        followers,
        following,
        public_key: PublicKey {
            id: key_id,
            owner,
            public_key_pem: pem.to_string(),
        },
    })
}

pub fn parse_collection(text: &str) -> Result<OrderedCollection, ApError> {
    let value = parse_json(text)?;
    let obj = as_object(&value)?;
    if !obj.contains_key("@context") {
        return Err(ApError::MissingRequiredField("@context".into()));
    }
    match type_name(obj) {
        Some("OrderedCollection") | Some("Collection") => {}
        Some(other) => return Err(ApError::UnsupportedType(other.to_string())),
        None => return Err(ApError::MissingRequiredField("type".into())),
    }
    let id = uri_member(obj, "id")?.ok_or_else(|| ApError::MissingRequiredField("id".into()))?;
    let items = obj
        .get("orderedItems")
        .or_else(|| obj.get("items"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let total_items = obj
        .get("totalItems")
        .and_then(Value::as_u64)
        .map(|n| n as usize)
        .unwrap_or(items.len());
    Ok(OrderedCollection {
        id,
        total_items,
        ordered_items: items,
    })
}

/// True if `value` or any nested member is JSON `null`.
pub fn contains_null(value: &Value) -> bool {
    match value {
        Value::Null => true,
        Value::Array(items) => items.iter().any(contains_null),
        Value::Object(map) => map.values().any(contains_null),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    fn note() -> Note {
        Note {
            id: url("https://a.test/users/alice/statuses/1"),
            attributed_to: url("https://a.test/users/alice"),
            content: "hi".into(),
            to: vec![public_collection()],
            cc: vec![url("https://a.test/users/alice/followers")],
            tags: vec![],
            published: Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap(),
            in_reply_to: None,
        }
    }

    fn actor() -> Actor {
        let id = url("https://a.test/users/alice");
        Actor {
            kind: ActorKind::Person,
            preferred_username: "alice".into(),
            name: Some("Alice".into()),
            inbox: url("https://a.test/users/alice/inbox"),
            outbox: url("https://a.test/users/alice/outbox"),
            followers: url("https://a.test/users/alice/followers"),
            following: url("https://a.test/users/alice/following"),
            public_key: PublicKey {
                id: url("https://a.test/users/alice#main-key"),
                owner: id.clone(),
                public_key_pem: "-----BEGIN PUBLIC KEY-----\nAAAA\n-----END PUBLIC KEY-----\n".into(),
            },
            id,
        }
    }

    #[test]
    fn minimal_note_serialization() {
        let text = serialize_object(&note());
        assert!(text.contains("\"type\":\"Note\""));
        assert!(text.contains("\"content\":\"hi\""));
        assert!(text.contains("\"@context\""));
        assert!(text.contains("\"published\":\"2024-05-01T12:00:00Z\""));
        assert!(!text.contains("null"));
    }

    #[test]
    fn create_embeds_note_serialization() {
        let n = note();
        let activity = Activity {
            id: url("https://a.test/users/alice/statuses/1/activity"),
            kind: ActivityKind::Create,
            actor: n.attributed_to.clone(),
            object: ActivityObject::Note(Box::new(n.clone())),
            to: n.to.clone(),
            cc: n.cc.clone(),
            published: Some(n.published),
        };
        let value: Value = serde_json::from_str(&serialize_object(&activity)).unwrap();
        let mut note_value: Value = serde_json::from_str(&serialize_object(&n)).unwrap();
        note_value.as_object_mut().unwrap().remove("@context");
        assert_eq!(value["object"], note_value);
        assert_eq!(parse_activity(&serialize_object(&activity)).unwrap(), activity);
    }

    #[test]
    fn parse_activity_errors() {
        assert_eq!(
            parse_activity(r#"{"type":"Like"}"#),
            Err(ApError::MissingRequiredField("actor".into()))
        );
        assert_eq!(
            parse_activity(r#"{"actor":"https://b.test/users/bob"}"#),
            Err(ApError::MissingRequiredField("type".into()))
        );
        assert_eq!(
            parse_activity(
                r#"{"@context":"https://www.w3.org/ns/activitystreams","id":"https://b.test/m/1","type":"Move","actor":"https://b.test/users/bob","object":"https://c.test/users/bob"}"#
            ),
            Err(ApError::UnsupportedType("Move".into()))
        );
        assert!(matches!(parse_activity("[1,2]"), Err(ApError::MalformedDocument(_))));
        assert!(matches!(
            parse_activity(
                r#"{"@context":"https://www.w3.org/ns/activitystreams","id":"https://b.test/c/1","type":"Create","actor":"https://b.test/users/bob","object":"https://b.test/n/1"}"#
            ),
            Err(ApError::MalformedDocument(_))
        ));
    }

    #[test]
    fn parse_accepts_mastodon_shapes() {
        // Accept embedding the Follow, unknown members, public alias.
        let text = r#"{
            "@context": ["https://www.w3.org/ns/activitystreams", {"toot": "http://joinmastodon.org/ns#"}],
            "id": "https://b.test/users/bob#accepts/follows/1",
            "type": "Accept",
            "actor": "https://b.test/users/bob",
            "object": {"id": "https://a.test/users/alice/follows/7", "type": "Follow",
                       "actor": "https://a.test/users/alice", "object": "https://b.test/users/bob"},
            "to": "as:Public",
            "signature": {"type": "RsaSignature2017"}
        }"#;
        let activity = parse_activity(text).unwrap();
        assert_eq!(activity.kind, ActivityKind::Accept);
        assert_eq!(activity.object.id().as_str(), "https://a.test/users/alice/follows/7");
        assert_eq!(activity.to, vec![public_collection()]);
        assert!(activity.cc.is_empty());
        assert_eq!(activity.published, None);
    }

    #[test]
    fn actor_round_trip_and_validation() {
        let a = actor();
        let text = serialize_object(&a);
        assert_eq!(validate_actor_document(&text).unwrap(), a);

        let mut value: Value = serde_json::from_str(&text).unwrap();
        value.as_object_mut().unwrap().remove("inbox");
        assert_eq!(
            validate_actor_document(&value.to_string()),
            Err(ApError::MissingEndpoint("inbox".into()))
        );

        let mut value: Value = serde_json::from_str(&text).unwrap();
        value.as_object_mut().unwrap().remove("publicKey");
        assert!(matches!(
            validate_actor_document(&value.to_string()),
            Err(ApError::MissingKey(_))
        ));

        let mut value: Value = serde_json::from_str(&text).unwrap();
        value["id"] = Value::String("/users/alice".into());
        assert!(matches!(
            validate_actor_document(&value.to_string()),
            Err(ApError::MalformedDocument(_))
        ));
    }

    #[test]
    fn tag_entries() {
        let mut n = note();
        n.tags = vec![
            TagEntry {
                kind: TagKind::Mention,
                href: Some(url("https://b.test/users/bob")),
                name: "@bob@b.test".into(),
            },
            TagEntry {
                kind: TagKind::Hashtag,
                href: None,
                name: "#cats".into(),
            },
        ];
        let mut value = to_document_value(&n);
        value["tag"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"type": "Emoji", "name": ":blob:"}));
        assert_eq!(parse_note_value(&value).unwrap(), n);
    }

    #[test]
    fn null_detection() {
        assert!(contains_null(&serde_json::json!({"a": [1, null]})));
        assert!(!contains_null(&to_document_value(&actor())));
    }
}
