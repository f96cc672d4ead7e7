//! Command-line verbs, settings and the HTTP service for `ticketgraph`.

pub mod commands;
pub mod remote;
pub mod server;
pub mod settings;

pub use settings::Settings;
