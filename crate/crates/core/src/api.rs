//! The HTTP surface: ActivityPub endpoints, WebFinger and a small Mastodon
//! client API. [`Server::handle`] maps one request to one response and is
//! safe to call from any number of threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rsa::RsaPrivateKey;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use url::Url;

use crate::activitypub::{
    format_timestamp, parse_activity, to_document_value, to_embedded_value, validate_actor_document, Activity,
    ActivityKind, ActivityObject, Actor, OrderedCollection,
};
use crate::config::Config;
use crate::federation::signature::{
    self, generate_key, parse_private_key, private_key_pem, public_key_pem, signature_params, SignatureError,
    SignerKey,
};
use crate::federation::{self, DeliveryTask, FollowState, QueueReport, Site};
use crate::http::{
    host_header, is_activity_media_type, HttpRequest, HttpResponse, OutboundRequest, Purpose, ACTIVITY_JSON, HTML,
    JRD_JSON, JSON,
};
use crate::identity::{build_jrd, is_valid_username, parse_acct, parse_resource, AcctHandle, IdentityError, Resolver};
use crate::mastodon::{
    account_to_actor, actor_to_account, extract_mentions, extract_tags, render_plain_text, status_to_note, Account,
    AccountId, Mention, Status, StatusId, Visibility,
};
use crate::routes;
use crate::storage::{DeleteReport, StorageError, Store, MAX_PAGE};
use crate::transport::{Clock, Transport};

pub const DEFAULT_PAGE: usize = 20;

/// A client-visible failure: status code, machine-readable reason, detail.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{status} {reason}: {detail}")]
pub struct ApiError {
    pub status: u16,
    pub reason: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: u16, reason: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            reason,
            detail: detail.into(),
        }
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(404, "NotFound", detail)
    }

    fn response(&self) -> HttpResponse {
        HttpResponse::error(self.status, self.reason, &self.detail)
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Tombstoned(_) => ApiError::new(410, "Gone", e.to_string()),
            StorageError::UnknownAccount(_) => ApiError::not_found(e.to_string()),
            StorageError::InvalidLimit(_) => ApiError::new(400, "InvalidLimit", e.to_string()),
            StorageError::DuplicateUri(_) => ApiError::new(409, "DuplicateUri", e.to_string()),
            StorageError::Invalid(_) => ApiError::new(422, "Invalid", e.to_string()),
            StorageError::Io(_) | StorageError::Corrupt(_) => ApiError::new(500, "StorageUnavailable", e.to_string()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UserError {
    #[error("{0:?} is not a valid username")]
    InvalidName(String),
    #[error("username {0:?} is taken")]
    NameTaken(String),
    #[error("no local user {0:?}")]
    UnknownUser(String),
    #[error("key generation failed: {0}")]
    Key(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Result of provisioning a local user. The token is not stored in clear
/// and cannot be shown again.
#[derive(Debug, Clone)]
pub struct CreatedUser {
    pub account: Account,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletedUser {
    pub report: DeleteReport,
    pub deletes_queued: usize,
}

pub struct Server {
    config: Config,
    base: Url,
    store: Arc<Store>,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    resolver: Resolver,
    rng: Mutex<ChaCha20Rng>,
    keys: Mutex<HashMap<AccountId, RsaPrivateKey>>,
}

impl Server {
    /// `seed` fixes key and token generation for reproducible runs; `None`
    /// seeds from the operating system.
    pub fn new(
        config: Config,
        store: Arc<Store>,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
        seed: Option<u64>,
    ) -> Self {
        let rng = match seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let resolver = Resolver::new(
            &config.domain,
            config.test_mode,
            std::time::Duration::from_secs(config.resolve_ttl_secs),
        );
        Self {
            base: config.base_url(),
            config,
            store,
            transport,
            clock,
            resolver,
            rng: Mutex::new(rng),
            keys: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    pub fn domain(&self) -> &str {
        &self.config.domain
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn site(&self) -> Site<'_> {
        Site {
            store: &self.store,
            base: &self.base,
            domain: &self.config.domain,
        }
    }

    // ---- operations also used by the CLI and the harness ----

    pub fn create_user(&self, name: &str) -> Result<CreatedUser, UserError> {
        if !is_valid_username(name) {
            return Err(UserError::InvalidName(name.to_string()));
        }
        let actor_uri = routes::actor(&self.base, name);
        if self.store.local_account(name).is_some() || self.store.is_tombstoned(&actor_uri) {
            return Err(UserError::NameTaken(name.to_string()));
        }
        let (key, token) = {
            let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
            let key = generate_key(&mut *rng, self.config.key_bits).map_err(|e| UserError::Key(e.to_string()))?;
            let mut token = [0u8; 24];
            rng.fill_bytes(&mut token);
            (key, hex::encode(token))
        };
        let account = Account {
            id: AccountId::UNASSIGNED,
            username: name.to_string(),
            acct: name.to_string(),
            display_name: name.to_string(),
            inbox_uri: routes::inbox(&self.base, name),
            followers_uri: routes::followers(&self.base, name),
            actor_uri,
            public_key_pem: Some(public_key_pem(&key.to_public_key())),
            created_at: self.now(),
        };
        let id = self.store.upsert_account(&account)?;
        self.store.put_private_key(id, &private_key_pem(&key))?;
        self.store.add_token(&token, id)?;
        self.keys.lock().unwrap_or_else(|p| p.into_inner()).insert(id, key);
        let account = self.store.account(id).expect("just stored");
        Ok(CreatedUser { account, token })
    }

    /// Replaces a local user's key pair.
    pub fn rotate_key(&self, name: &str) -> Result<Account, UserError> {
        let mut account = self
            .store
            .local_account(name)
            .ok_or_else(|| UserError::UnknownUser(name.to_string()))?;
        let key = {
            let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
            generate_key(&mut *rng, self.config.key_bits).map_err(|e| UserError::Key(e.to_string()))?
        };
        account.public_key_pem = Some(public_key_pem(&key.to_public_key()));
        self.store.upsert_account(&account)?;
        self.store.put_private_key(account.id, &private_key_pem(&key))?;
        self.keys.lock().unwrap_or_else(|p| p.into_inner()).insert(account.id, key);
        Ok(account)
    }

    /// Issues an additional bearer token for a local user.
    pub fn issue_token(&self, name: &str) -> Result<String, UserError> {
        let account = self
            .store
            .local_account(name)
            .ok_or_else(|| UserError::UnknownUser(name.to_string()))?;
        let mut bytes = [0u8; 24];
        self.rng.lock().unwrap_or_else(|p| p.into_inner()).fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        self.store.add_token(&token, account.id)?;
        Ok(token)
    }

    /// Deletes a local user: a Delete goes to every peer, then local data is
    /// purged and the name tombstoned. The private key is kept so the queued
    /// Deletes can still be signed.
    pub fn delete_account(&self, name: &str) -> Result<DeletedUser, UserError> {
        let account = self
            .store
            .local_account(name)
            .ok_or_else(|| UserError::UnknownUser(name.to_string()))?;
        let tasks = federation::propagate_delete(&self.site(), &account, self.now())?;
        let report = self.store.delete_account_data(&account.actor_uri)?;
        Ok(DeletedUser {
            report,
            deletes_queued: tasks.len(),
        })
    }

    fn private_key(&self, id: AccountId) -> Option<RsaPrivateKey> {
        let mut cache = self.keys.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(key) = cache.get(&id) {
            return Some(key.clone());
        }
        let key = parse_private_key(&self.store.private_key(id)?).ok()?;
        cache.insert(id, key.clone());
        Some(key)
    }

    /// Attempts every due delivery.
    pub fn process_queue(&self) -> Result<QueueReport, StorageError> {
        federation::process_queue(
            &self.site(),
            self.now(),
            self.transport.as_ref(),
            &|id| self.private_key(id),
            self.config.retry_policy(),
        )
    }

    /// Posts a status as a local user, storing it, filling local timelines
    /// and queueing remote deliveries.
    pub fn post_status(
        &self,
        author: &Account,
        text: &str,
        visibility: Visibility,
        in_reply_to: Option<StatusId>,
    ) -> Result<(Status, Vec<DeliveryTask>), ApiError> {
        if text.trim().is_empty() {
            return Err(ApiError::new(422, "EmptyContent", "status text is empty"));
        }
        let mut mentions: Vec<Mention> = Vec::new();
        for handle in extract_mentions(text, &self.config.domain) {
            match self.account_for_handle(&handle) {
                Ok(account) if account.id != author.id => {
                    if !mentions.iter().any(|m| m.actor_uri == account.actor_uri) {
                        mentions.push(Mention {
                            acct: account.acct.clone(),
                            actor_uri: account.actor_uri.clone(),
                        });
                    }
                }
                Ok(_) => {}
                Err(e) => log::info!("mention {handle} not resolvable: {}", e.detail),
            }
        }
        if visibility == Visibility::Direct && mentions.is_empty() {
            return Err(ApiError::new(
                422,
                "NoResolvableMention",
                "a direct status needs at least one resolvable mention",
            ));
        }
        let parent = match in_reply_to {
            Some(id) => Some(
                self.store
                    .status(id)
                    .filter(|s| self.store.can_view(author.id, s))
                    .ok_or_else(|| ApiError::not_found(format!("no status {id} to reply to")))?,
            ),
            None => None,
        };
        let now = self.now();
        let draft = Status {
            id: StatusId::UNASSIGNED,
            uri: routes::status(&self.base, &author.username, 0),
            content: render_plain_text(text),
            account_id: author.id,
            visibility,
            mentions,
            tags: extract_tags(text),
            created_at: now,
            in_reply_to_id: parent.as_ref().map(|p| p.id),
            in_reply_to_uri: parent.map(|p| p.uri),
        };
        let base = self.base.clone();
        let username = author.username.clone();
        let status = self
            .store
            .store_local_status(&draft, &|id| routes::status(&base, &username, id))?;

        let mut owners = vec![author.id];
        for mention in &status.mentions {
            if let Some(a) = self.store.account_by_actor(&mention.actor_uri).filter(Account::is_local) {
                owners.push(a.id);
            }
        }
        if visibility != Visibility::Direct {
            owners.extend(
                self.store
                    .followers_of(author.id, true)
                    .into_iter()
                    .filter(|(_, a)| a.is_local())
                    .map(|(_, a)| a.id),
            );
        }
        owners.sort();
        owners.dedup();
        for owner in owners {
            self.store.insert_timeline(owner, status.id, now)?;
        }
        let tasks = federation::fan_out(&self.site(), &status, author, now)?;
        Ok((status, tasks))
    }

    /// Follows `target` on behalf of local `follower`.
    pub fn follow(&self, follower: &Account, target: &Account) -> Result<FollowState, ApiError> {
        if follower.id == target.id {
            return Err(ApiError::new(422, "SelfFollow", "cannot follow yourself"));
        }
        let relation = federation::follow_account(&self.site(), follower, target, self.now())?;
        Ok(relation.state)
    }

    /// Finds an account by `user` or `user@domain`, resolving and fetching
    /// remote actors as needed.
    pub fn lookup(&self, acct: &str) -> Result<Account, ApiError> {
        let handle = parse_acct(acct, &self.config.domain)
            .map_err(|e| ApiError::not_found(format!("unresolvable handle: {e}")))?;
        self.account_for_handle(&handle)
    }

    fn account_for_handle(&self, handle: &AcctHandle) -> Result<Account, ApiError> {
        if handle.is_local(&self.config.domain) {
            return self
                .store
                .local_account(handle.username())
                .ok_or_else(|| ApiError::not_found(format!("no local user {}", handle.username())));
        }
        let acct = handle.acct_for(&self.config.domain);
        if let Some(account) = self.store.account_by_acct(&acct) {
            return Ok(account);
        }
        let resolved = self
            .resolver
            .resolve(handle, self.transport.as_ref(), self.now())
            .map_err(|e| match e {
                IdentityError::LocalHandle(_) => ApiError::not_found(e.to_string()),
                other => ApiError::not_found(other.to_string()),
            })?;
        if self.store.is_tombstoned(&resolved.actor_uri) {
            return Err(ApiError::new(410, "Gone", format!("{} has been deleted", resolved.actor_uri)));
        }
        if let Some(account) = self.store.account_by_actor(&resolved.actor_uri) {
            return Ok(account);
        }
        let actor = self.fetch_actor(&resolved.actor_uri).map_err(|e| match e {
            FetchError::Gone(detail) => ApiError::new(410, "Gone", detail),
            FetchError::Failed(detail) => ApiError::not_found(detail),
        })?;
        let id = self.store.upsert_account(&actor_to_account(&actor, &self.config.domain, self.now()))?;
        Ok(self.store.account(id).expect("just stored"))
    }

    fn fetch_actor(&self, uri: &Url) -> Result<Actor, FetchError> {
        let response = self
            .transport
            .send(OutboundRequest::get(uri.clone(), ACTIVITY_JSON, Purpose::ActorFetch))
            .map_err(|e| FetchError::Failed(format!("GET {uri}: {e}")))?;
        if response.status == 410 {
            return Err(FetchError::Gone(format!("GET {uri}: status 410")));
        }
        if !response.is_success() {
            return Err(FetchError::Failed(format!("GET {uri}: status {}", response.status)));
        }
        if response.body.is_empty() {
            return Err(FetchError::Failed(format!("GET {uri}: actor body empty")));
        }
        let actor = validate_actor_document(&response.body_text())
            .map_err(|e| FetchError::Failed(format!("GET {uri}: {e}")))?;
        if &actor.id != uri {
            return Err(FetchError::Failed(format!("GET {uri}: document describes {}", actor.id)));
        }
        Ok(actor)
    }

    fn signer_key(&self, key_id: &Url, refresh: bool) -> Result<SignerKey, SignatureError> {
        let mut owner = key_id.clone();
        owner.set_fragment(None);
        if !refresh {
            if let Some(pem) = self.store.account_by_actor(&owner).and_then(|a| a.public_key_pem) {
                return Ok(SignerKey {
                    key_id: key_id.clone(),
                    owner,
                    public_key_pem: pem,
                });
            }
        }
        let actor = self.fetch_actor(&owner).map_err(|e| match e {
            FetchError::Gone(d) | FetchError::Failed(d) => SignatureError::ActorFetchFailed(d),
        })?;
        if &actor.public_key.id != key_id {
            return Err(SignatureError::ActorFetchFailed(format!(
                "actor {} publishes key {}, not {key_id}",
                actor.id, actor.public_key.id
            )));
        }
        self.store
            .upsert_account(&actor_to_account(&actor, &self.config.domain, self.now()))
            .map_err(|e| SignatureError::ActorFetchFailed(e.to_string()))?;
        Ok(SignerKey {
            key_id: key_id.clone(),
            owner: actor.id,
            public_key_pem: actor.public_key.public_key_pem,
        })
    }

    // ---- request routing ----

    pub fn handle(&self, request: HttpRequest) -> HttpResponse {
        let response = self.route(&request).unwrap_or_else(|e| e.response());
        if response.status >= 400 {
            log::warn!(
                "{} {} -> {} {}",
                request.method,
                request.path(),
                response.status,
                response.error_reason().unwrap_or_default()
            );
        }
        response
    }

    fn route(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let path = req.path().trim_end_matches('/');
        let segments: Vec<&str> = path.split('/').skip(1).collect();
        let method = req.method.as_str();
        match (method, segments.as_slice()) {
            ("GET", [".well-known", "webfinger"]) => self.webfinger(req),
            ("GET", ["users", name]) => self.actor_document(req, name),
            ("POST", ["users", name, "inbox"]) => self.inbox(req, name),
            ("GET", ["users", name, "outbox"]) => self.outbox(name),
            ("GET", ["users", name, "followers"]) => self.follow_collection(name, true),
            ("GET", ["users", name, "following"]) => self.follow_collection(name, false),
            ("GET", ["users", name, "statuses", id]) => self.status_document(name, id),
            ("POST", ["api", "v1", "statuses"]) => self.api_post_status(req),
            ("GET", ["api", "v1", "statuses", id]) => self.api_get_status(req, id),
            ("GET", ["api", "v1", "timelines", "home"]) => self.api_home(req),
            ("GET", ["api", "v1", "timelines", "tag", tag]) => self.api_tag(req, tag),
            ("GET", ["api", "v1", "accounts", "lookup"]) => self.api_lookup(req),
            ("GET", ["api", "v1", "accounts", "relationships"]) => self.api_relationships(req),
            ("GET", ["api", "v1", "accounts", id]) => self.api_account(id),
            ("POST", ["api", "v1", "accounts", id, "follow"]) => self.api_follow(req, id),
            (_, segs) if self.known_path(segs) => {
                Err(ApiError::new(405, "MethodNotAllowed", format!("{method} not allowed on {path}")))
            }
            _ => Err(ApiError::not_found(format!("no route for {path}"))),
        }
    }

    fn known_path(&self, segments: &[&str]) -> bool {
        matches!(
            segments,
            [".well-known", "webfinger"]
                | ["users", _]
                | ["users", _, "inbox" | "outbox" | "followers" | "following"]
                | ["api", "v1", "statuses"]
                | ["api", "v1", "timelines", "home"]
                | ["api", "v1", "accounts", _, "follow"]
        )
    }

    fn local_or_gone(&self, name: &str) -> Result<Account, ApiError> {
        if let Some(account) = self.store.local_account(name) {
            return Ok(account);
        }
        if self.store.is_tombstoned(&routes::actor(&self.base, name)) {
            return Err(ApiError::new(410, "Gone", format!("user {name} has been deleted")));
        }
        Err(ApiError::not_found(format!("no user {name}")))
    }

    fn webfinger(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let resource = req
            .query_param("resource")
            .ok_or_else(|| ApiError::new(400, "MissingResource", "resource parameter required"))?;
        let handle = parse_resource(&resource, &self.config.domain)
            .map_err(|e| ApiError::new(400, "MalformedResource", e.to_string()))?;
        if !handle.is_local(&self.config.domain) {
            return Err(ApiError::not_found(format!("{} is not served here", handle.domain())));
        }
        let jrd = build_jrd(self.store.as_ref(), handle.username(), &self.base)
            .map_err(|e| ApiError::not_found(e.to_string()))?;
        let body = serde_json::to_string(&jrd).expect("jrd serializes");
        Ok(HttpResponse::new(200, JRD_JSON, body))
    }

    fn actor_document(&self, req: &HttpRequest, name: &str) -> Result<HttpResponse, ApiError> {
        let account = self.local_or_gone(name)?;
        let wants_activity = req.headers.get("accept").is_some_and(is_activity_media_type);
        if wants_activity {
            let actor = account_to_actor(&account, &self.base)
                .map_err(|e| ApiError::new(500, "MissingKey", e.to_string()))?;
            return Ok(HttpResponse::json(200, ACTIVITY_JSON, &to_document_value(&actor)));
        }
        let handle = format!("@{}@{}", account.username, self.config.domain);
        let body = format!(
            "<!DOCTYPE html>\n<html><head><title>{title}</title>\
             <link rel=\"alternate\" type=\"{ACTIVITY_JSON}\" href=\"{uri}\"></head>\
             <body><h1>{title}</h1><p>{handle}</p></body></html>\n",
            title = escape_html(&account.display_name),
            handle = escape_html(&handle),
            uri = account.actor_uri,
        );
        Ok(HttpResponse::new(200, HTML, body))
    }

    fn inbox(&self, req: &HttpRequest, name: &str) -> Result<HttpResponse, ApiError> {
        self.local_or_gone(name)?;
        let now = self.now();

        // Deleted actors are answered without touching the network so a
        // replay cannot resurrect them.
        if let Ok(params) = signature_params(req) {
            let mut owner = params.key_id.clone();
            owner.set_fragment(None);
            if self.store.is_tombstoned(&owner) {
                if is_self_delete(&req.body, &owner) {
                    return Ok(accepted("already deleted"));
                }
                return Err(ApiError::new(403, "TombstonedActor", format!("{owner} has been deleted")));
            }
        }

        let verified = signature::verify_signature(req, now, self.config.skew_window(), &|key_id: &Url, refresh| {
            self.signer_key(key_id, refresh)
        });
        let key = match verified {
            Ok(key) => key,
            Err(SignatureError::ActorFetchFailed(detail)) => {
                // A Delete from an actor we never stored has nothing to purge.
                if let Ok(params) = signature_params(req) {
                    let mut owner = params.key_id;
                    owner.set_fragment(None);
                    if is_self_delete(&req.body, &owner) && self.store.account_by_actor(&owner).is_none() {
                        return Ok(accepted("unknown actor deleted"));
                    }
                }
                return Err(ApiError::new(401, "ActorFetchFailed", detail));
            }
            Err(e) => return Err(ApiError::new(401, e.reason(), e.to_string())),
        };

        let activity = parse_activity(&String::from_utf8_lossy(&req.body))
            .map_err(|e| ApiError::new(400, e.reason(), e.to_string()))?;
        let signer = self
            .store
            .account_by_actor(&key.owner)
            .ok_or_else(|| ApiError::new(401, "ActorFetchFailed", format!("signer {} not stored", key.owner)))?;
        if !signer.is_local() {
            self.store.record_peer(&host_header(&signer.actor_uri), &signer.inbox_uri)?;
        }
        match federation::handle_inbox(&self.site(), &activity, &signer, now) {
            Ok(effects) => {
                for effect in &effects {
                    if let federation::Effect::Warning { reason } = effect {
                        log::warn!("{} {}: {reason}", activity.kind.name(), activity.id);
                    }
                }
                let mut body = json!({"status": "accepted", "effects": effects.len()});
                // Purges are reported so the sender can audit what was removed.
                if let Some(report) = effects.iter().find_map(|e| match e {
                    federation::Effect::PurgeActor { report, .. } => Some(report),
                    _ => None,
                }) {
                    body["purged"] = serde_json::to_value(report).expect("report serializes");
                }
                Ok(HttpResponse::json(
                    202,
                    JSON,
                    &body,
                ))
            }
            Err(e) => Err(ApiError::new(e.status(), e.reason(), e.to_string())),
        }
    }

    fn outbox(&self, name: &str) -> Result<HttpResponse, ApiError> {
        let account = self.local_or_gone(name)?;
        let items: Vec<Value> = self
            .store
            .statuses_by_account(account.id)
            .into_iter()
            .filter(|s| s.visibility == Visibility::Public)
            .map(|s| {
                let note = status_to_note(&s, &account);
                let mut id = s.uri.clone();
                id.set_path(&format!("{}/activity", s.uri.path()));
                to_embedded_value(&Activity {
                    id,
                    kind: ActivityKind::Create,
                    actor: account.actor_uri.clone(),
                    to: note.to.clone(),
                    cc: note.cc.clone(),
                    published: Some(s.created_at),
                    object: ActivityObject::Note(Box::new(note)),
                })
            })
            .collect();
        let collection = OrderedCollection {
            id: routes::outbox(&self.base, &account.username),
            total_items: items.len(),
            ordered_items: items,
        };
        Ok(HttpResponse::json(200, ACTIVITY_JSON, &to_document_value(&collection)))
    }

    fn follow_collection(&self, name: &str, followers: bool) -> Result<HttpResponse, ApiError> {
        let account = self.local_or_gone(name)?;
        let (id, edges) = if followers {
            (
                routes::followers(&self.base, &account.username),
                self.store.followers_of(account.id, true),
            )
        } else {
            (
                routes::following(&self.base, &account.username),
                self.store.following_of(account.id, true),
            )
        };
        let items: Vec<Value> = edges.into_iter().map(|(_, a)| Value::String(a.actor_uri.into())).collect();
        let collection = OrderedCollection {
            id,
            total_items: items.len(),
            ordered_items: items,
        };
        Ok(HttpResponse::json(200, ACTIVITY_JSON, &to_document_value(&collection)))
    }

    fn status_document(&self, name: &str, id: &str) -> Result<HttpResponse, ApiError> {
        let account = self.local_or_gone(name)?;
        let status = id
            .parse::<u64>()
            .ok()
            .and_then(|id| self.store.status(StatusId(id)))
            .filter(|s| s.account_id == account.id && s.visibility == Visibility::Public)
            .ok_or_else(|| ApiError::not_found(format!("no public status {id}")))?;
        let note = status_to_note(&status, &account);
        Ok(HttpResponse::json(200, ACTIVITY_JSON, &to_document_value(&note)))
    }

    // ---- client API ----

    fn bearer(&self, req: &HttpRequest) -> Result<Account, ApiError> {
        let header = req
            .headers
            .get("authorization")
            .ok_or_else(|| ApiError::new(401, "Unauthorized", "bearer token required"))?;
        let token = header
            .strip_prefix("Bearer ")
            .or_else(|| header.strip_prefix("bearer "))
            .ok_or_else(|| ApiError::new(401, "Unauthorized", "authorization is not a bearer token"))?;
        self.store
            .account_for_token(token.trim())
            .and_then(|id| self.store.account(id))
            .ok_or_else(|| ApiError::new(401, "Unauthorized", "unknown token"))
    }

    fn api_post_status(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let author = self.bearer(req)?;
        let form = StatusForm::from_request(req)?;
        let visibility = match form.visibility.as_deref() {
            None => Visibility::Public,
            Some(name) => Visibility::from_name(name)
                .ok_or_else(|| ApiError::new(422, "InvalidVisibility", format!("unknown visibility {name:?}")))?,
        };
        let in_reply_to = match form.in_reply_to_id.as_deref().filter(|s| !s.is_empty()) {
            Some(id) => Some(StatusId(
                id.parse()
                    .map_err(|_| ApiError::new(422, "Invalid", format!("in_reply_to_id {id:?} is not an id")))?,
            )),
            None => None,
        };
        let (status, _) = self.post_status(&author, form.status.as_deref().unwrap_or(""), visibility, in_reply_to)?;
        Ok(HttpResponse::json(200, JSON, &self.status_json(&status)))
    }

    fn api_get_status(&self, req: &HttpRequest, id: &str) -> Result<HttpResponse, ApiError> {
        let viewer = req.headers.get("authorization").map(|_| self.bearer(req)).transpose()?;
        let status = id
            .parse::<u64>()
            .ok()
            .and_then(|id| self.store.status(StatusId(id)))
            .filter(|s| match &viewer {
                Some(v) => self.store.can_view(v.id, s),
                None => s.visibility == Visibility::Public,
            })
            .ok_or_else(|| ApiError::not_found(format!("no status {id}")))?;
        Ok(HttpResponse::json(200, JSON, &self.status_json(&status)))
    }

    fn page(&self, req: &HttpRequest) -> Result<(usize, Option<StatusId>), ApiError> {
        let limit = match req.query_param("limit") {
            Some(text) => text
                .parse::<usize>()
                .map_err(|_| ApiError::new(400, "InvalidLimit", format!("limit {text:?} is not a number")))?
                .clamp(1, MAX_PAGE),
            None => DEFAULT_PAGE,
        };
        let max_id = match req.query_param("max_id") {
            Some(text) => Some(StatusId(
                text.parse()
                    .map_err(|_| ApiError::new(400, "InvalidMaxId", format!("max_id {text:?} is not an id")))?,
            )),
            None => None,
        };
        Ok((limit, max_id))
    }

    fn api_home(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let viewer = self.bearer(req)?;
        let (limit, max_id) = self.page(req)?;
        let statuses = self.store.query_home_timeline(viewer.id, limit, max_id)?;
        Ok(self.status_list(&statuses))
    }

    fn api_tag(&self, req: &HttpRequest, tag: &str) -> Result<HttpResponse, ApiError> {
        let (limit, max_id) = self.page(req)?;
        let tag = percent_decode(tag);
        let tag = tag.trim_start_matches('#').to_lowercase();
        let statuses = self.store.query_tag_timeline(&tag, limit, max_id)?;
        Ok(self.status_list(&statuses))
    }

    fn status_list(&self, statuses: &[Status]) -> HttpResponse {
        let items: Vec<Value> = statuses.iter().map(|s| self.status_json(s)).collect();
        HttpResponse::json(200, JSON, &Value::Array(items))
    }

    fn api_lookup(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let acct = req
            .query_param("acct")
            .ok_or_else(|| ApiError::new(400, "MissingAcct", "acct parameter required"))?;
        let account = self.lookup(&acct)?;
        Ok(HttpResponse::json(200, JSON, &self.account_json(&account)))
    }

    fn api_account(&self, id: &str) -> Result<HttpResponse, ApiError> {
        let account = id
            .parse::<u64>()
            .ok()
            .and_then(|id| self.store.account(AccountId(id)))
            .ok_or_else(|| ApiError::not_found(format!("no account {id}")))?;
        Ok(HttpResponse::json(200, JSON, &self.account_json(&account)))
    }

    fn api_follow(&self, req: &HttpRequest, id: &str) -> Result<HttpResponse, ApiError> {
        let me = self.bearer(req)?;
        let target = id
            .parse::<u64>()
            .ok()
            .and_then(|id| self.store.account(AccountId(id)))
            .ok_or_else(|| ApiError::not_found(format!("no account {id}")))?;
        self.follow(&me, &target)?;
        Ok(HttpResponse::json(200, JSON, &self.relationship_json(&me, target.id)))
    }

    fn api_relationships(&self, req: &HttpRequest) -> Result<HttpResponse, ApiError> {
        let me = self.bearer(req)?;
        let ids: Vec<AccountId> = req
            .query()
            .map(|q| {
                url::form_urlencoded::parse(q.as_bytes())
                    .filter(|(k, _)| k == "id" || k == "id[]")
                    .filter_map(|(_, v)| v.parse().ok().map(AccountId))
                    .collect()
            })
            .unwrap_or_default();
        let list: Vec<Value> = ids.iter().map(|id| self.relationship_json(&me, *id)).collect();
        Ok(HttpResponse::json(200, JSON, &Value::Array(list)))
    }

    fn relationship_json(&self, me: &Account, other: AccountId) -> Value {
        let outgoing = self.store.follow(me.id, other).map(|f| f.state);
        let incoming = self.store.follow(other, me.id).map(|f| f.state);
        json!({
            "id": other.to_string(),
            "following": outgoing == Some(FollowState::Accepted),
            "requested": outgoing == Some(FollowState::Pending),
            "followed_by": incoming == Some(FollowState::Accepted),
        })
    }

    fn account_json(&self, account: &Account) -> Value {
        json!({
            "id": account.id.to_string(),
            "username": account.username,
            "acct": account.acct,
            "display_name": account.display_name,
            "url": account.actor_uri.to_string(),
            "uri": account.actor_uri.to_string(),
            "created_at": format_timestamp(&account.created_at),
        })
    }

    fn status_json(&self, status: &Status) -> Value {
        let account = self.store.account(status.account_id);
        let mentions: Vec<Value> = status
            .mentions
            .iter()
            .map(|m| {
                let stored = self.store.account_by_actor(&m.actor_uri);
                json!({
                    "id": stored.as_ref().map(|a| a.id.to_string()).unwrap_or_default(),
                    "username": m.acct.split('@').next().unwrap_or_default(),
                    "acct": m.acct,
                    "url": m.actor_uri.to_string(),
                })
            })
            .collect();
        let tags: Vec<Value> = status
            .tags
            .iter()
            .map(|t| json!({"name": t, "url": routes::tag(&self.base, t).to_string()}))
            .collect();
        let mut value = json!({
            "id": status.id.to_string(),
            "uri": status.uri.to_string(),
            "url": status.uri.to_string(),
            "content": status.content,
            "visibility": status.visibility.name(),
            "mentions": mentions,
            "tags": tags,
            "created_at": format_timestamp(&status.created_at),
            "account": account.map(|a| self.account_json(&a)).unwrap_or_else(|| json!({})),
        });
        if let Some(parent) = status.in_reply_to_id {
            value["in_reply_to_id"] = Value::String(parent.to_string());
        }
        value
    }
}

enum FetchError {
    Gone(String),
    Failed(String),
}

#[derive(Debug, Default, Deserialize)]
struct StatusForm {
    status: Option<String>,
    visibility: Option<String>,
    in_reply_to_id: Option<String>,
}

impl StatusForm {
    fn from_request(req: &HttpRequest) -> Result<Self, ApiError> {
        let content_type = req.headers.get("content-type").unwrap_or("").to_ascii_lowercase();
        if content_type.starts_with("application/x-www-form-urlencoded") {
            let mut form = StatusForm::default();
            for (k, v) in url::form_urlencoded::parse(&req.body) {
                match k.as_ref() {
                    "status" => form.status = Some(v.into_owned()),
                    "visibility" => form.visibility = Some(v.into_owned()),
                    "in_reply_to_id" => form.in_reply_to_id = Some(v.into_owned()),
                    _ => {}
                }
            }
            return Ok(form);
        }
        let value: Value = serde_json::from_slice(&req.body)
            .map_err(|e| ApiError::new(400, "MalformedBody", format!("body is not JSON: {e}")))?;
        // Clients send in_reply_to_id as either a string or a number.
        let mut value = value;
        if let Some(n) = value.get("in_reply_to_id").and_then(Value::as_u64) {
            value["in_reply_to_id"] = Value::String(n.to_string());
        }
        if value.get("in_reply_to_id").is_some_and(Value::is_null) {
            value.as_object_mut().map(|o| o.remove("in_reply_to_id"));
        }
        serde_json::from_value(value).map_err(|e| ApiError::new(400, "MalformedBody", e.to_string()))
    }
}

fn accepted(note: &str) -> HttpResponse {
    HttpResponse::json(202, JSON, &json!({"status": "accepted", "note": note}))
}

/// Whether `body` is a Delete whose actor and object are both `actor`.
fn is_self_delete(body: &[u8], actor: &Url) -> bool {
    let Ok(value) = serde_json::from_slice::<Value>(body) else {
        return false;
    };
    let object = match value.get("object") {
        Some(Value::String(s)) => Some(s.as_str()),
        Some(Value::Object(o)) => o.get("id").and_then(Value::as_str),
        _ => None,
    };
    value.get("type").and_then(Value::as_str) == Some("Delete")
        && value.get("actor").and_then(Value::as_str) == Some(actor.as_str())
        && object == Some(actor.as_str())
}

fn percent_decode(text: &str) -> String {
    url::form_urlencoded::parse(format!("x={text}").as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

fn escape_html(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
