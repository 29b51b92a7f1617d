//! Configuration files, CSV formats and the experiment commands behind the
//! `ddpc` binary.

pub mod commands;
pub mod config;
pub mod io;
pub mod report;
