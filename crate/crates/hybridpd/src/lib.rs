//! Command-line front end and file formats for the power-density toolkit.

pub mod cli;
pub mod commands;
pub mod error;
pub mod expr;
pub mod io;
pub mod job;
