//! Flat JSON configuration with environment overrides.
//!
//! Precedence is environment (`MOTH_DOMAIN`, `MOTH_PORT`, `MOTH_STORE`) over
//! the file over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::federation::RetryPolicy;
use crate::storage::BackendKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, String),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Public host name, optionally with a port in test mode.
    pub domain: String,
    pub bind: String,
    pub port: u16,
    pub store_backend: BackendKind,
    pub store_path: Option<PathBuf>,
    pub skew_window_secs: u64,
    pub retry_max_attempts: u32,
    pub retry_base_secs: u64,
    /// Permits plain-http URIs for local experiments.
    pub test_mode: bool,
    pub key_bits: usize,
    pub resolve_ttl_secs: u64,
    pub request_timeout_secs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            domain: "localhost".into(),
            bind: "127.0.0.1".into(),
            port: 8080,
            store_backend: BackendKind::Memory,
            store_path: None,
            skew_window_secs: 300,
            retry_max_attempts: 8,
            retry_base_secs: 10,
            test_mode: false,
            key_bits: 2048,
            resolve_ttl_secs: 3600,
            request_timeout_secs: 10,
        }
    }
}

impl Config {
    pub fn for_domain(domain: &str) -> Self {
        Self {
            domain: domain.into(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Config = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads `path` if given, applies environment overrides, validates.
    pub fn load(path: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => Config::default(),
        };
        if let Some(domain) = env("MOTH_DOMAIN") {
            config.domain = domain;
        }
        if let Some(port) = env("MOTH_PORT") {
            config.port = port
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("MOTH_PORT={port} is not a port")))?;
        }
        if let Some(store) = env("MOTH_STORE") {
            if store == "memory" {
                config.store_backend = BackendKind::Memory;
                config.store_path = None;
            } else {
                config.store_backend = BackendKind::File;
                config.store_path = Some(PathBuf::from(store));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let (host, port) = match self.domain.rsplit_once(':') {
            Some((h, p)) if p.chars().all(|c| c.is_ascii_digit()) => (h, Some(p)),
            _ => (self.domain.as_str(), None),
        };
        let host_ok = !host.is_empty()
            && host.split('.').all(|label| {
                !label.is_empty()
                    && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
                    && !label.starts_with('-')
                    && !label.ends_with('-')
            });
        if !host_ok {
            return invalid(format!("domain {:?} is not a host name", self.domain));
        }
        if let Some(p) = port {
            if !self.test_mode {
                return invalid("a port in the domain requires test_mode".into());
            }
            if p.parse::<u16>().map_or(true, |p| p == 0) {
                return invalid(format!("port {p} in domain out of range"));
            }
        }
        if self.port == 0 {
            return invalid("port must be in 1..=65535".into());
        }
        if self.skew_window_secs == 0 || self.retry_base_secs == 0 || self.resolve_ttl_secs == 0 || self.request_timeout_secs == 0 {
            return invalid("durations must be positive".into());
        }
        if self.retry_max_attempts == 0 {
            return invalid("retry_max_attempts must be at least 1".into());
        }
        if self.key_bits < 1024 {
            return invalid("key_bits must be at least 1024".into());
        }
        if self.store_backend == BackendKind::File && self.store_path.is_none() {
            return invalid("the file backend needs store_path".into());
        }
        Ok(())
    }

    pub fn scheme(&self) -> &'static str {
        if self.test_mode {
            "http"
        } else {
            "https"
        }
    }

    pub fn base_url(&self) -> Url {
        Url::parse(&format!("{}://{}", self.scheme(), self.domain)).expect("validated domain forms a URL")
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_max_attempts,
            base: chrono::Duration::seconds(self.retry_base_secs as i64),
        }
    }

    pub fn skew_window(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.skew_window_secs as i64)
    }
}
