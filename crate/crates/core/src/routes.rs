//! Fixed URI templates for locally hosted objects. Every document this server
//! emits builds its URIs through these functions.

use url::Url;

pub fn actor(base: &Url, username: &str) -> Url {
    join(base, &format!("users/{username}"))
}

pub fn inbox(base: &Url, username: &str) -> Url {
    join(base, &format!("users/{username}/inbox"))
}

pub fn outbox(base: &Url, username: &str) -> Url {
    join(base, &format!("users/{username}/outbox"))
}

pub fn followers(base: &Url, username: &str) -> Url {
    join(base, &format!("users/{username}/followers"))
}

pub fn following(base: &Url, username: &str) -> Url {
    join(base, &format!("users/{username}/following"))
}

pub fn status(base: &Url, username: &str, id: impl std::fmt::Display) -> Url {
    join(base, &format!("users/{username}/statuses/{id}"))
}

/// `{actor}#main-key`
pub fn key_id(actor: &Url) -> Url {
    let mut key = actor.clone();
    key.set_fragment(Some("main-key"));
    key
}

pub fn webfinger(scheme: &str, domain: &str, resource: &str) -> Url {
    let mut url = Url::parse(&format!("{scheme}://{domain}/.well-known/webfinger"))
        .expect("domain validated before building a WebFinger URL");
    url.query_pairs_mut().append_pair("resource", resource);
    url
}

pub fn tag(base: &Url, tag: &str) -> Url {
    join(base, &format!("tags/{tag}"))
}

/// Local username when `uri` is a local actor URI under `base`.
pub fn local_username(base: &Url, uri: &Url) -> Option<String> {
    if uri.host_str() != base.host_str() || uri.port_or_known_default() != base.port_or_known_default() {
        return None;
    }
    let rest = uri.path().strip_prefix("/users/")?;
    (!rest.is_empty() && !rest.contains('/') && uri.fragment().is_none()).then(|| rest.to_string())
}

fn join(base: &Url, path: &str) -> Url {
    let mut url = base.clone();
    url.set_path(&format!("/{path}"));
    url.set_query(None);
    url.set_fragment(None);
    url
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates() {
        let base = Url::parse("https://a.test").unwrap();
        assert_eq!(actor(&base, "alice").as_str(), "https://a.test/users/alice");
        assert_eq!(inbox(&base, "alice").as_str(), "https://a.test/users/alice/inbox");
        assert_eq!(
            key_id(&actor(&base, "alice")).as_str(),
            "https://a.test/users/alice#main-key"
        );
        assert_eq!(
            webfinger("https", "a.test", "acct:alice@a.test").as_str(),
            "https://a.test/.well-known/webfinger?resource=acct%3Aalice%40a.test"
        );
        assert_eq!(
            local_username(&base, &actor(&base, "alice")).as_deref(),
            Some("alice")
        );
        assert_eq!(local_username(&base, &inbox(&base, "alice")), None);
    }
}
