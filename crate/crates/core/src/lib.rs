pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod numkernel;
pub mod pipeline;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
