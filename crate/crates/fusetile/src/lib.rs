//! Command-line front end and file formats for `fusetile-core`.
//!
//! The binary is a thin wrapper over [`cli::run`], which tests call in
//! process.

pub mod cli;
pub mod commands;
pub mod io;
pub mod manifest;
pub mod parallel;

pub use cli::{run, Cli, Exit};
pub use manifest::RunManifest;
