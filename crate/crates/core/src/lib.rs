pub mod bgd;
pub mod datahub;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod harness;
pub mod numerics;
pub mod recmodel;
pub mod rng;

pub use error::{Error, Result};
