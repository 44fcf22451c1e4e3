//! HTTP query service and pipeline CLI over a tumor index.

pub mod cli;
pub mod error;
pub mod http;
pub mod items;
pub mod query;
