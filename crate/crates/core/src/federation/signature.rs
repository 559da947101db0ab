//! draft-cavage HTTP signatures with RSA-SHA256.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use rand_core::CryptoRngCore;
use rsa::pkcs1v15::{Signature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::http::{host_header, Headers, HttpRequest};

pub const ALGORITHM: &str = "rsa-sha256";
/// Headers covered by every signature this server produces.
pub const SIGNED_HEADERS: [&str; 4] = ["(request-target)", "host", "date", "digest"];
pub const DEFAULT_SKEW_SECS: i64 = 300;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("request carries no signature")]
    NoSignature,
    #[error("date header outside the accepted window: {0}")]
    StaleDate(String),
    #[error("body digest does not match: {0}")]
    DigestMismatch(String),
    #[error("signature does not verify: {0}")]
    BadSignature(String),
    #[error("could not fetch signing actor: {0}")]
    ActorFetchFailed(String),
    #[error("signing key unavailable: {0}")]
    KeyUnavailable(String),
}

impl SignatureError {
    /// Machine-readable reason placed in 401 bodies.
    pub fn reason(&self) -> &'static str {
        match self {
            SignatureError::NoSignature => "NoSignature",
            SignatureError::StaleDate(_) => "StaleDate",
            SignatureError::DigestMismatch(_) => "DigestMismatch",
            SignatureError::BadSignature(_) => "BadSignature",
            SignatureError::ActorFetchFailed(_) => "ActorFetchFailed",
            SignatureError::KeyUnavailable(_) => "KeyUnavailable",
        }
    }
}

/// Parsed `Signature` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureParams {
    pub key_id: Url,
    pub algorithm: String,
    pub headers: Vec<String>,
    pub signature: Vec<u8>,
}

impl SignatureParams {
    pub fn to_header(&self) -> String {
        format!(
            "keyId=\"{}\",algorithm=\"{}\",headers=\"{}\",signature=\"{}\"",
            self.key_id,
            self.algorithm,
            self.headers.join(" "),
            B64.encode(&self.signature)
        )
    }

    pub fn parse(value: &str) -> Result<Self, SignatureError> {
        let bad = |what: &str| SignatureError::BadSignature(format!("malformed Signature header: {what}"));
        let mut key_id = None;
        let mut algorithm = None;
        let mut headers = None;
        let mut signature = None;
        let mut rest = value.trim();
        while !rest.is_empty() {
            let eq = rest.find('=').ok_or_else(|| bad("missing '='"))?;
            let name = rest[..eq].trim().trim_start_matches(',').trim().to_ascii_lowercase();
            let after = rest[eq + 1..].trim_start();
            let (val, tail) = if let Some(quoted) = after.strip_prefix('"') {
                let end = quoted.find('"').ok_or_else(|| bad("unterminated quote"))?;
                (&quoted[..end], &quoted[end + 1..])
            } else {
                let end = after.find(',').unwrap_or(after.len());
                (&after[..end], &after[end..])
            };
            match name.as_str() {
                "keyid" => key_id = Some(val.to_string()),
                "algorithm" => algorithm = Some(val.to_string()),
                "headers" => headers = Some(val.to_string()),
                "signature" => signature = Some(val.to_string()),
                _ => {}
            }
            rest = tail.trim_start().trim_start_matches(',').trim_start();
        }
        let key_id = key_id.ok_or_else(|| bad("no keyId"))?;
        let key_id = Url::parse(&key_id).map_err(|_| bad("keyId is not a URI"))?;
        let signature = signature.ok_or_else(|| bad("no signature"))?;
        let signature = B64.decode(signature.as_bytes()).map_err(|_| bad("signature is not base64"))?;
        let headers = headers
            .unwrap_or_else(|| "date".into())
            .split_whitespace()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        Ok(Self {
            key_id,
            algorithm: algorithm.unwrap_or_else(|| ALGORITHM.into()),
            headers,
            signature,
        })
    }
}

/// `SHA-256=<base64>` digest header value.
pub fn body_digest(body: &[u8]) -> String {
    format!("SHA-256={}", B64.encode(Sha256::digest(body)))
}

pub fn http_date(at: DateTime<Utc>) -> String {
    httpdate::fmt_http_date(std::time::SystemTime::from(at))
}

/// The string covered by the signature.
pub fn signing_string(
    method: &str,
    target: &str,
    headers: &Headers,
    names: &[String],
) -> Result<String, SignatureError> {
    let mut lines = Vec::with_capacity(names.len());
    for name in names {
        if name == "(request-target)" {
            lines.push(format!("(request-target): {} {}", method.to_ascii_lowercase(), target));
        } else {
            let value = headers
                .get(name)
                .ok_or_else(|| SignatureError::BadSignature(format!("signed header {name} absent")))?;
            lines.push(format!("{name}: {}", value.trim()));
        }
    }
    Ok(lines.join("\n"))
}

/// Headers to attach to a signed request.
#[derive(Debug, Clone)]
pub struct SignedHeaders {
    pub params: SignatureParams,
    pub headers: Headers,
}

/// Computes Host, Date, Digest and Signature headers for a request.
pub fn sign_request(
    method: &str,
    url: &Url,
    body: &[u8],
    key_id: &Url,
    private_key: &RsaPrivateKey,
    date: DateTime<Utc>,
) -> Result<SignedHeaders, SignatureError> {
    let mut headers = Headers::new();
    headers.set("Host", host_header(url));
    headers.set("Date", http_date(date));
    headers.set("Digest", body_digest(body));
    let target = match url.query() {
        Some(q) => format!("{}?{q}", url.path()),
        None => url.path().to_string(),
    };
    let names: Vec<String> = SIGNED_HEADERS.iter().map(|s| s.to_string()).collect();
    let text = signing_string(method, &target, &headers, &names)?;
    let signer = SigningKey::<Sha256>::new(private_key.clone());
    let signature = signer
        .try_sign(text.as_bytes())
        .map_err(|e| SignatureError::KeyUnavailable(e.to_string()))?
        .to_vec();
    let params = SignatureParams {
        key_id: key_id.clone(),
        algorithm: ALGORITHM.into(),
        headers: names,
        signature,
    };
    headers.set("Signature", params.to_header());
    Ok(SignedHeaders { params, headers })
}

/// The public key a key id resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignerKey {
    pub key_id: Url,
    pub owner: Url,
    pub public_key_pem: String,
}

/// Resolves key ids to keys. `refresh` asks for a fresh fetch, bypassing
/// any cache, after a cached key failed to verify.
pub trait KeySource {
    fn key(&self, key_id: &Url, refresh: bool) -> Result<SignerKey, SignatureError>;
}

impl<F: Fn(&Url, bool) -> Result<SignerKey, SignatureError>> KeySource for F {
    fn key(&self, key_id: &Url, refresh: bool) -> Result<SignerKey, SignatureError> {
        self(key_id, refresh)
    }
}

/// Extracts the Signature params without verifying anything.
pub fn signature_params(request: &HttpRequest) -> Result<SignatureParams, SignatureError> {
    let value = match request.headers.get("signature") {
        Some(v) => v.to_string(),
        None => match request.headers.get("authorization") {
            Some(auth) if auth.len() > 10 && auth[..10].eq_ignore_ascii_case("signature ") => auth[10..].to_string(),
            _ => return Err(SignatureError::NoSignature),
        },
    };
    SignatureParams::parse(&value)
}

/// Checks date skew, body digest and the RSA signature of an inbound
/// request, returning the verified key.
pub fn verify_signature(
    request: &HttpRequest,
    now: DateTime<Utc>,
    window: Duration,
    keys: &dyn KeySource,
) -> Result<SignerKey, SignatureError> {
    let params = signature_params(request)?;
    if !params.algorithm.eq_ignore_ascii_case(ALGORITHM) && !params.algorithm.eq_ignore_ascii_case("hs2019") {
        return Err(SignatureError::BadSignature(format!(
            "unsupported algorithm {}",
            params.algorithm
        )));
    }
    let is_post = request.method.eq_ignore_ascii_case("POST");
    let mut required = vec!["(request-target)", "host", "date"];
    if is_post {
        required.push("digest");
    }
    for name in required {
        if !params.headers.iter().any(|h| h == name) {
            return Err(SignatureError::BadSignature(format!("{name} not covered by signature")));
        }
    }

    let date = request
        .headers
        .get("date")
        .ok_or_else(|| SignatureError::StaleDate("no Date header".into()))?;
    let date: DateTime<Utc> = httpdate::parse_http_date(date)
        .map_err(|_| SignatureError::StaleDate(format!("unparseable Date {date:?}")))?
        .into();
    let skew = now.signed_duration_since(date);
    if skew > window || -skew > window {
        return Err(SignatureError::StaleDate(format!(
            "skew of {} s exceeds {} s",
            skew.num_seconds(),
            window.num_seconds()
        )));
    }

    if is_post || request.headers.get("digest").is_some() {
        let claimed = request
            .headers
            .get("digest")
            .ok_or_else(|| SignatureError::DigestMismatch("no Digest header".into()))?;
        let actual = body_digest(&request.body);
        let matches = claimed
            .split(',')
            .map(str::trim)
            .any(|d| d.len() > 8 && d[..8].eq_ignore_ascii_case("sha-256=") && d[8..] == actual[8..]);
        if !matches {
            return Err(SignatureError::DigestMismatch(format!("expected {actual}")));
        }
    }

    let text = signing_string(&request.method, &request.target, &request.headers, &params.headers)?;
    let key = keys.key(&params.key_id, false)?;
    match check(&key, &text, &params.signature) {
        Ok(()) => Ok(key),
        Err(_) => {
            // The actor may have rotated its key since we cached it.
            let fresh = keys.key(&params.key_id, true)?;
            if fresh.public_key_pem == key.public_key_pem {
                return Err(SignatureError::BadSignature("signature does not match key".into()));
            }
            check(&fresh, &text, &params.signature)?;
            Ok(fresh)
        }
    }
}

fn check(key: &SignerKey, text: &str, signature: &[u8]) -> Result<(), SignatureError> {
    let public = parse_public_key(&key.public_key_pem)?;
    let signature = Signature::try_from(signature)
        .map_err(|e| SignatureError::BadSignature(format!("malformed signature: {e}")))?;
    VerifyingKey::<Sha256>::new(public)
        .verify(text.as_bytes(), &signature)
        .map_err(|_| SignatureError::BadSignature("signature does not match key".into()))
}

pub fn generate_key(rng: &mut impl CryptoRngCore, bits: usize) -> Result<RsaPrivateKey, SignatureError> {
    RsaPrivateKey::new(rng, bits).map_err(|e| SignatureError::KeyUnavailable(e.to_string()))
}

pub fn private_key_pem(key: &RsaPrivateKey) -> String {
    key.to_pkcs8_pem(LineEnding::LF)
        .expect("RSA keys encode as PKCS#8")
        .to_string()
}

pub fn public_key_pem(key: &RsaPublicKey) -> String {
    key.to_public_key_pem(LineEnding::LF)
        .expect("RSA keys encode as SPKI")
}

pub fn parse_private_key(pem: &str) -> Result<RsaPrivateKey, SignatureError> {
    RsaPrivateKey::from_pkcs8_pem(pem)
        .or_else(|_| rsa::pkcs1::DecodeRsaPrivateKey::from_pkcs1_pem(pem))
        .map_err(|e| SignatureError::KeyUnavailable(e.to_string()))
}

/// Accepts SPKI (`BEGIN PUBLIC KEY`) and PKCS#1 (`BEGIN RSA PUBLIC KEY`).
pub fn parse_public_key(pem: &str) -> Result<RsaPublicKey, SignatureError> {
    RsaPublicKey::from_public_key_pem(pem.trim())
        .or_else(|_| rsa::pkcs1::DecodeRsaPublicKey::from_pkcs1_pem(pem.trim()))
        .map_err(|e| SignatureError::BadSignature(format!("unusable public key: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;
    use std::sync::OnceLock;

    fn keys() -> &'static (RsaPrivateKey, RsaPrivateKey) {
        static KEYS: OnceLock<(RsaPrivateKey, RsaPrivateKey)> = OnceLock::new();
        KEYS.get_or_init(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(7);
            (generate_key(&mut rng, 1024).unwrap(), generate_key(&mut rng, 1024).unwrap())
        })
    }

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()
    }

    fn signed(body: &[u8], key: &RsaPrivateKey) -> HttpRequest {
        let url = Url::parse("https://b.test/users/bob/inbox").unwrap();
        let key_id = Url::parse("https://a.test/users/alice#main-key").unwrap();
        let signed = sign_request("POST", &url, body, &key_id, key, at()).unwrap();
        let mut req = HttpRequest::new("POST", "/users/bob/inbox");
        for (k, v) in signed.headers.iter() {
            req.headers.set(k, v);
        }
        req.body = body.to_vec();
        req
    }

    fn source(key: &RsaPrivateKey) -> impl KeySource {
        let pem = public_key_pem(&key.to_public_key());
        move |key_id: &Url, _refresh: bool| {
            let mut owner = key_id.clone();
            owner.set_fragment(None);
            Ok(SignerKey {
                key_id: key_id.clone(),
                owner,
                public_key_pem: pem.clone(),
            })
        }
    }

    fn window() -> Duration {
        Duration::seconds(DEFAULT_SKEW_SECS)
    }

    #[test]
    fn digest_known_value() {
        // sha256("") is the well-known e3b0c442... digest.
        assert_eq!(body_digest(b""), "SHA-256=47DEQpj8HBSa+/TImW+5JCeuQeRkm5NMpJWZG3hSuFU=");
    }

    #[test]
    fn header_round_trip() {
        let (a, _) = keys();
        let req = signed(b"{}", a);
        let params = signature_params(&req).unwrap();
        assert_eq!(SignatureParams::parse(&params.to_header()).unwrap(), params);
        assert_eq!(params.headers, SIGNED_HEADERS.map(String::from).to_vec());
    }

    #[test]
    fn closed_loop_and_rejections() {
        let (a, b) = keys();
        let req = signed(br#"{"type":"Create"}"#, a);
        let key = verify_signature(&req, at(), window(), &source(a)).unwrap();
        assert_eq!(key.owner.as_str(), "https://a.test/users/alice");

        let mut tampered = req.clone();
        tampered.body[2] ^= 1;
        assert_eq!(
            verify_signature(&tampered, at(), window(), &source(a)).unwrap_err().reason(),
            "DigestMismatch"
        );
        assert_eq!(
            verify_signature(&req, at(), window(), &source(b)).unwrap_err().reason(),
            "BadSignature"
        );
        let mut unsigned = req.clone();
        unsigned.headers = unsigned.headers.iter().filter(|(k, _)| *k != "Signature").collect();
        assert_eq!(
            verify_signature(&unsigned, at(), window(), &source(a)).unwrap_err(),
            SignatureError::NoSignature
        );
        for skew in [301, -301, 600] {
            let now = at() + Duration::seconds(skew);
            assert_eq!(
                verify_signature(&req, now, window(), &source(a)).unwrap_err().reason(),
                "StaleDate"
            );
        }
        assert!(verify_signature(&req, at() + Duration::seconds(300), window(), &source(a)).is_ok());
    }

    #[test]
    fn refetch_recovers_rotated_key() {
        let (a, b) = keys();
        let req = signed(b"x", a);
        let stale = public_key_pem(&b.to_public_key());
        let fresh = public_key_pem(&a.to_public_key());
        let src = |key_id: &Url, refresh: bool| {
            Ok(SignerKey {
                key_id: key_id.clone(),
                owner: key_id.clone(),
                public_key_pem: if refresh { fresh.clone() } else { stale.clone() },
            })
        };
        assert!(verify_signature(&req, at(), window(), &src).is_ok());
    }

    #[test]
    fn pem_round_trip() {
        let (a, _) = keys();
        let pem = private_key_pem(a);
        assert_eq!(&parse_private_key(&pem).unwrap(), a);
        let public = public_key_pem(&a.to_public_key());
        assert!(public.starts_with("-----BEGIN PUBLIC KEY-----"));
        assert_eq!(parse_public_key(&public).unwrap(), a.to_public_key());
    }
}
