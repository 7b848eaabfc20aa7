//! HTTP service, blinded rating studies and the `patchsearch` command line
//! on top of the `patchsearch` library.

pub mod cli;
pub mod config;
pub mod service;
pub mod study;

pub use config::Config;
pub use service::{router, AppState, SharedState};
