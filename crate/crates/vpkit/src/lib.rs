//! Image, latent and JSON formats, the `vpkit` command line and the
//! annotation HTTP service, all built on [`vpkit_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod predictor;
pub mod service;
pub mod store;

pub use error::{AppError, AppResult, ErrorKind};
