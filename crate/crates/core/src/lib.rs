pub mod datamodel;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod gsi;
pub mod ingestion;
pub mod relevance;
pub mod synth;
pub mod tfi;

pub use error::{Error, Result};
