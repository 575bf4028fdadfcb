//! IO, file formats and the command-line driver around `stvl-core`.

pub mod cli;
pub mod io;
pub mod records;
pub mod report;
