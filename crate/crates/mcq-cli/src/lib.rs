//! Library half of the `mcq` command-line tool; everything the binary does
//! is callable from here so tests can drive it directly.

pub mod bench;
pub mod commands;
pub mod output;
pub mod perturb;
pub mod spec_file;
pub mod sweep;

pub use spec_file::ModelSpecFile;
