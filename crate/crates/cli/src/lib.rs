//! File formats, a rayon executor and the `mbgl` command line for
//! [`mbgl_core`].

pub mod archive;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod exec;
pub mod matfile;

pub use error::{CliError, FormatError};
pub use matfile::MatrixFile;
