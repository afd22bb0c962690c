//! Demonstration bundles, the segmentation pipeline, session storage, the
//! command line and the HTTP review API.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod formats;
pub mod http;
pub mod pipeline;
pub mod store;
pub mod synth;
pub mod transcribe;

pub use error::{Error, Result};
