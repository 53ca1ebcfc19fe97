//! File formats, run configuration and the command-line pipeline around
//! [`irview_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod lock;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod png_io;
pub mod records;
pub mod trainlog;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use manifest::Corpus;
