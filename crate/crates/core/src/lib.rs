pub mod compositionality;
pub mod datasets;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod mi;
pub mod nn;
pub mod pretraining;
pub mod probes;
pub mod stats;
pub mod zsl;

pub use error::{Error, Result};
