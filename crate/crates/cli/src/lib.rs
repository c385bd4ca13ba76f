//! Command-line workflows and the HTTP companion service.

pub mod cli;
pub mod commands;
pub mod config;
pub mod plot;
pub mod server;
pub mod session;
