//! Dense matrix engine, reverse-mode tape, initialisation and Adam.

mod adam;
mod init;
mod matrix;
mod sparse;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use init::xavier_uniform;
pub use matrix::Matrix;
pub use sparse::{SparseMatrix, SparseOperator};
pub use tape::{Gradients, Tape, Var};
