//! Command line front end and HTTP session service for `immunorec`.

pub mod cli;
pub mod server;

pub use cli::run;
