//! Command-line front end for the pipeplan toolkit: JSON document formats
//! plus the fit / analyze / plan / schedule / simulate subcommands.

pub mod commands;
pub mod formats;
