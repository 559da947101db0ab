//! C ABI over moth-fed.
//!
//! Every function returns a [`MothError`] code. On failure a message is kept
//! per thread and can be read with [`moth_last_error_message`]. Strings handed
//! out through `out` parameters are owned by the caller and must be released
//! with [`moth_free_string`]. Servers are opaque; free them with
//! [`moth_server_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use moth_fed::api::{Server, UserError};
use moth_fed::config::Config;
use moth_fed::http::HttpRequest;
use moth_fed::identity::parse_acct;
use moth_fed::mastodon::{extract_mentions, extract_tags};
use moth_fed::storage::{BackendKind, Store};
use moth_fed::transport::{HttpTransport, SystemClock};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MothError {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidName = 4,
    NameTaken = 5,
    NotFound = 6,
    Storage = 7,
    Config = 8,
    Panic = 99,
}

/// Opaque server handle.
pub struct MothServer {
    inner: Server,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

type FfiResult = Result<(), (MothError, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> MothError {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MothError::Ok,
        Ok(Err((code, message))) => {
            set_error(message);
            code
        }
        Err(_) => {
            set_error("internal panic");
            MothError::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MothError, String)> {
    if p.is_null() {
        return Err((MothError::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MothError::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, (MothError, String)> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn put_string(out: *mut *mut c_char, text: String) -> FfiResult {
    if out.is_null() {
        return Err((MothError::NullArgument, "out is null".into()));
    }
    let c = CString::new(text).map_err(|_| (MothError::Parse, "output contains NUL".to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn user_error(e: UserError) -> (MothError, String) {
    let code = match &e {
        UserError::InvalidName(_) => MothError::InvalidName,
        UserError::NameTaken(_) => MothError::NameTaken,
        UserError::UnknownUser(_) => MothError::NotFound,
        UserError::Key(_) => MothError::Panic,
        UserError::Storage(_) => MothError::Storage,
    };
    (code, e.to_string())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn moth_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn moth_free_string(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a handle. Writes `{"username":..,"domain":..,"acct":..}`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moth_parse_acct(
    text: *const c_char,
    local_domain: *const c_char,
    out: *mut *mut c_char,
) -> MothError {
    guard(|| {
        let text = str_arg(text, "text")?;
        let local = str_arg(local_domain, "local_domain")?;
        let handle = parse_acct(text, local).map_err(|e| (MothError::Parse, e.to_string()))?;
        let json = serde_json::json!({
            "username": handle.username(),
            "domain": handle.domain(),
            "acct": handle.acct_for(local),
        });
        put_string(out, json.to_string())
    })
}

/// Writes a JSON array of `user@domain` strings mentioned in `text`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moth_extract_mentions(
    text: *const c_char,
    local_domain: *const c_char,
    out: *mut *mut c_char,
) -> MothError {
    guard(|| {
        let text = str_arg(text, "text")?;
        let local = str_arg(local_domain, "local_domain")?;
        let list: Vec<String> = extract_mentions(text, local)
            .iter()
            .map(|h| format!("{}@{}", h.username(), h.domain()))
            .collect();
        put_string(out, serde_json::to_string(&list).expect("strings serialize"))
    })
}

/// Writes a JSON array of lowercased hashtags found in `text`.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moth_extract_tags(text: *const c_char, out: *mut *mut c_char) -> MothError {
    guard(|| {
        let text = str_arg(text, "text")?;
        put_string(out, serde_json::to_string(&extract_tags(text)).expect("strings serialize"))
    })
}

/// Creates a server from a JSON config document (same format as the CLI's
/// config file).
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moth_server_new(config_json: *const c_char, out: *mut *mut MothServer) -> MothError {
    guard(|| {
        if out.is_null() {
            return Err((MothError::NullArgument, "out is null".into()));
        }
        let config = Config::from_json(str_arg(config_json, "config_json")?)
            .map_err(|e| (MothError::Config, e.to_string()))?;
        let store = match (config.store_backend, &config.store_path) {
            (BackendKind::Memory, _) => Store::memory(),
            (BackendKind::File, Some(path)) => Store::open(path).map_err(|e| (MothError::Storage, e.to_string()))?,
            (BackendKind::File, None) => return Err((MothError::Config, "file backend needs store_path".into())),
        };
        let transport = HttpTransport::new(Duration::from_secs(config.request_timeout_secs));
        let inner = Server::new(config, Arc::new(store), Arc::new(transport), Arc::new(SystemClock), None);
        *out = Box::into_raw(Box::new(MothServer { inner }));
        Ok(())
    })
}

/// # Safety
/// `server` must be null or a handle from [`moth_server_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn moth_server_free(server: *mut MothServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

/// Serves one request. `headers_json` is null or a JSON object of header
/// names to values; `body` may be null. The HTTP status is written to
/// `out_status` and the response body to `out_body`.
///
/// # Safety
/// `server` must be live; strings NUL-terminated; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn moth_server_handle_request(
    server: *const MothServer,
    method: *const c_char,
    target: *const c_char,
    headers_json: *const c_char,
    body: *const c_char,
    out_status: *mut u16,
    out_body: *mut *mut c_char,
) -> MothError {
    guard(|| {
        let server = server.as_ref().ok_or((MothError::NullArgument, "server is null".to_string()))?;
        if out_status.is_null() {
            return Err((MothError::NullArgument, "out_status is null".into()));
        }
        let mut request = HttpRequest::new(str_arg(method, "method")?, str_arg(target, "target")?);
        if let Some(headers) = opt_str_arg(headers_json, "headers_json")? {
            let map: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(headers).map_err(|e| (MothError::Parse, format!("headers_json: {e}")))?;
            for (name, value) in map {
                let value = value
                    .as_str()
                    .ok_or((MothError::Parse, format!("header {name} is not a string")))?;
                request.headers.set(&name, value);
            }
        }
        if request.headers.get("host").is_none() {
            request.headers.set("Host", server.inner.domain());
        }
        if let Some(body) = opt_str_arg(body, "body")? {
            request.body = body.as_bytes().to_vec();
        }
        let response = server.inner.handle(request);
        *out_status = response.status;
        put_string(out_body, response.body_text())
    })
}

/// Provisions a local user and writes its bearer token to `out_token`.
///
/// # Safety
/// `server` must be live; `name` NUL-terminated; `out_token` writable.
#[no_mangle]
pub unsafe extern "C" fn moth_user_create(
    server: *const MothServer,
    name: *const c_char,
    out_token: *mut *mut c_char,
) -> MothError {
    guard(|| {
        let server = server.as_ref().ok_or((MothError::NullArgument, "server is null".to_string()))?;
        let created = server.inner.create_user(str_arg(name, "name")?).map_err(user_error)?;
        put_string(out_token, created.token)
    })
}

/// Runs one pass over due deliveries. Writes how many were delivered.
///
/// # Safety
/// `server` must be live; `out_delivered` null or writable.
#[no_mangle]
pub unsafe extern "C" fn moth_process_queue(server: *const MothServer, out_delivered: *mut usize) -> MothError {
    guard(|| {
        let server = server.as_ref().ok_or((MothError::NullArgument, "server is null".to_string()))?;
        let report = server
            .inner
            .process_queue()
            .map_err(|e| (MothError::Storage, e.to_string()))?;
        if !out_delivered.is_null() {
            *out_delivered = report.delivered;
        }
        Ok(())
    })
}
