//! Command-line front end: run configuration and the subcommands behind the
//! `tlasdi` binary.

pub mod commands;
pub mod config;
