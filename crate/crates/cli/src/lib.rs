//! Command-line front end and HTTP API for the `miscause` library.

pub mod cli;
pub mod server;
