//! Command pipeline over a manifest directory.

pub mod cli;
pub mod commands;
mod workspace;

pub use workspace::*;
