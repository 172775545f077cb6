#![allow(dead_code)]

use arhq_core::Matrix;
use arhq_oracle::Dense;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn from_dense(d: &Dense) -> Matrix {
    Matrix::from_rows(d).unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    from_dense(&arhq_oracle::gaussian(rng, r, c))
}

pub fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius() / b.frobenius()
}

pub fn orth_err(q: &Matrix) -> f64 {
    q.t_matmul(q)
        .unwrap()
        .sub(&Matrix::identity(q.cols()))
        .unwrap()
        .max_abs()
}
