//! IO, parallel sampling and the command-line front end for `drb-core`.

pub mod cli;
pub mod exec;
pub mod fixtures;
pub mod io;
