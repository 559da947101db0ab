//! A Mastodon-compatible ActivityPub federation server.

pub mod activitypub;
pub mod api;
pub mod cli;
pub mod config;
pub mod federation;
pub mod http;
pub mod identity;
pub mod mastodon;
pub mod routes;
pub mod simnet;
pub mod storage;
pub mod transport;
