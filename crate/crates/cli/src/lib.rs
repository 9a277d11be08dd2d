//! Library half of the `riskdesk` binary: batch subcommands and the HTTP
//! operator service.

pub mod commands;
pub mod service;
