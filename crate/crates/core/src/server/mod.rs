//! The campaign and measurement service.
//!
//! [`Service`] holds the logic and the SQLite store; [`http`] exposes it as
//! a JSON API and [`client::HttpClient`] talks to that API. Both implement
//! [`GearApi`], so callers can run against either.

pub mod api;
pub mod client;
pub mod clock;
pub mod config;
pub mod error;
pub mod http;
pub mod service;
pub mod store;

pub use api::*;
pub use client::HttpClient;
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::ServerConfig;
pub use error::{ApiError, ApiResult, ErrorKind};
pub use service::Service;
