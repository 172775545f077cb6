//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Jacobi is slower than bidiagonal QR but delivers singular values with
//! high relative accuracy and columns orthogonal to working precision, which
//! is what the optimality checks downstream lean on. Dimensions here are
//! layer-sized (at most a few thousand), so the full decomposition is taken
//! and then truncated.

use alloc::vec;
use alloc::vec::Vec;

use super::matrix::dot;
use super::Matrix;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Rank-`r` factors `U_r Σ_r V_rᵀ`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `rows × r`, orthonormal columns.
    pub u: Matrix,
    /// Length `r`, non-negative, descending.
    pub sigma: Vec<f64>,
    /// `cols × r`, orthonormal columns.
    pub v: Matrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U_r Σ_r V_rᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let us = self.u_sigma();
        us.matmul_t(&self.v).expect("factor shapes agree")
    }

    /// `U_r Σ_r`.
    pub fn u_sigma(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        us
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> TruncatedSvd {
        assert!(r <= self.rank());
        TruncatedSvd {
            u: self.u.leading_columns(r),
            sigma: self.sigma[..r].to_vec(),
            v: self.v.leading_columns(r),
        }
    }
}

/// Thin SVD: `min(rows, cols)` triplets, singular values descending.
pub fn svd(m: &Matrix) -> Result<TruncatedSvd> {
    if m.rows() >= m.cols() {
        jacobi_svd(m)
    } else {
        let t = jacobi_svd(&m.transpose())?;
        Ok(TruncatedSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Best rank-`r` Frobenius approximation of `m` as factors.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let k = m.rows().min(m.cols());
    if r == 0 || r > k {
        return Err(Error::param(
            "rank",
            alloc::format!("rank {r} outside 1..={k} for a {}x{} matrix", m.rows(), m.cols()),
        ));
    }
    Ok(svd(m)?.truncate(r))
}

/// One-sided Jacobi on a tall (`rows ≥ cols`) matrix.
fn jacobi_svd(m: &Matrix) -> Result<TruncatedSvd> {
    let (rows, n) = m.shape();
    debug_assert!(rows >= n);
    // Working columns stored contiguously: `work` row j is column j of A·V.
    let mut work = m.transpose();
    let mut v = Matrix::identity(n);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = work.row(p);
                    let cq = work.row(q);
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= f64::EPSILON * libm::sqrt(alpha) * libm::sqrt(beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::hypot(1.0, zeta));
                let c = 1.0 / libm::hypot(1.0, t);
                let s = c * t;
                rotate_rows(&mut work, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "Jacobi SVD",
        });
    }

    let mut sigma: Vec<f64> = (0..n).map(|j| libm::sqrt(dot(work.row(j), work.row(j)))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    // `v` holds Vᵀ row-wise (row j = right singular vector j).
    let mut u = Matrix::zeros(rows, n);
    let mut v_out = Matrix::zeros(n, n);
    let mut filled = vec![false; n];
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        for i in 0..n {
            v_out[(i, dst)] = v[(src, i)];
        }
        if s > 0.0 {
            for i in 0..rows {
                u[(i, dst)] = work[(src, i)] / s;
            }
            filled[dst] = true;
        }
    }
    sigma = order.iter().map(|&k| sigma[k]).collect();
    complete_orthonormal_columns(&mut u, &filled);

    Ok(TruncatedSvd { u, sigma, v: v_out })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the columns of `u` not marked in `filled` with unit vectors
/// orthogonal to every other column (modified Gram-Schmidt against the
/// canonical basis, re-orthogonalized once).
fn complete_orthonormal_columns(u: &mut Matrix, filled: &[bool]) {
    let rows = u.rows();
    let mut candidate = 0;
    for j in 0..filled.len() {
        if filled[j] {
            continue;
        }
        loop {
            assert!(candidate < rows, "cannot complete orthonormal basis");
            let mut x = vec![0.0; rows];
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in 0..filled.len() {
                    if k == j || !(filled[k] || k < j) {
                        continue;
                    }
                    let proj: f64 = (0..rows).map(|i| u[(i, k)] * x[i]).sum();
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi -= proj * u[(i, k)];
                    }
                }
            }
            let norm = libm::sqrt(dot(&x, &x));
            if norm > 0.5 {
                for (i, xi) in x.iter().enumerate() {
                    u[(i, j)] = xi / norm;
                }
                break;
            }
        }
    }
}
