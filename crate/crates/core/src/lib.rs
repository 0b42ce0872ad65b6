pub mod adversarial;
pub mod autograd;
pub mod cluster;
pub mod contrastive;
pub mod detection;
pub mod error;
pub mod exec;
pub mod gate;
pub mod harness;
pub mod io;
pub mod nn;
pub mod random;

pub use error::{Error, Result};
