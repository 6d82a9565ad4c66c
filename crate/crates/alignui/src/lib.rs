//! Service and command-line front end for `alignui-core`.

pub mod config;
pub mod service;

pub use config::ServiceConfig;
pub use service::{router, AppState};
