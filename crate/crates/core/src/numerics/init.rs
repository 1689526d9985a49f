use rand::distr::{Distribution, Uniform};
use rand::Rng;

use super::Matrix;

/// Glorot/Xavier uniform initialisation on `[-b, b]`, `b = sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "xavier_uniform needs a non-empty shape");
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_raw(rows, cols, data)
}
