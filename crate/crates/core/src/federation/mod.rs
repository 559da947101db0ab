//! Server-to-server engine: inbound dispatch, fan-out, signed delivery with
//! retries and account deletion propagation.

mod delivery;
mod inbox;
pub mod signature;
pub mod types;

pub use delivery::{fan_out, follow_account, process_queue, propagate_delete, QueueReport, RetryPolicy};
pub use inbox::{handle_inbox, Effect, InboxError};
pub use types::*;

use url::Url;

use crate::storage::Store;

/// What the engine needs to know about the instance it runs in.
#[derive(Clone, Copy)]
pub struct Site<'a> {
    pub store: &'a Store,
    pub base: &'a Url,
    pub domain: &'a str,
}

impl Site<'_> {
    /// Whether `uri` lives on this instance.
    pub fn is_local(&self, uri: &Url) -> bool {
        crate::http::host_header(uri).eq_ignore_ascii_case(self.domain)
    }

    /// Mints a fresh activity id under `actor`.
    pub(crate) fn activity_id(&self, actor: &Url, what: &str) -> Result<Url, crate::storage::StorageError> {
        let seq = self.store.next_seq()?;
        let mut id = actor.clone();
        id.set_fragment(Some(&format!("{what}/{seq}")));
        Ok(id)
    }
}
