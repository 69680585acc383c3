//! Command line, file formats and thread-parallel experiment runners for
//! [`hkdyn_core`].

pub mod cli;
pub mod io;
pub mod parallel;
