//! Slow, independent reference computations for the arhq test suites.
//!
//! Nothing here depends on `arhq-core`; matrices are plain `Vec<Vec<f64>>`
//! rows. Eigenvalues come from cyclic Jacobi rotations, low-rank optima from
//! alternating least squares, quantizer outputs from exhaustive grid search.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn eye(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let c = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner, "matmul shape");
            (0..c)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

pub fn frob_sq(a: &Dense) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> Dense {
    (0..r)
        .map(|_| (0..c).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Eigenvalues (descending) and eigenvectors (columns) of a symmetric
/// matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen(s: &Dense) -> (Vec<f64>, Dense) {
    let n = s.len();
    let mut a: Dense = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (s[i][j] + s[j][i])).collect())
        .collect();
    let mut v = eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let vals = order.iter().map(|&k| a[k][k]).collect();
    let vecs = (0..n)
        .map(|i| order.iter().map(|&k| v[i][k]).collect())
        .collect();
    (vals, vecs)
}

/// `U diag(f(λ)) Uᵀ` through the Jacobi oracle.
pub fn spectral_map(s: &Dense, f: impl Fn(f64) -> f64) -> Dense {
    let (vals, u) = jacobi_eigen(s);
    let n = vals.len();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| u[i][k] * f(vals[k]) * u[j][k]).sum();
        }
    }
    out
}

/// Squared singular values of `m`, descending, as eigenvalues of `mᵀm`.
pub fn squared_singular_values(m: &Dense) -> Vec<f64> {
    let mtm = matmul(&transpose(m), m);
    let mut vals = jacobi_eigen(&mtm).0;
    vals.iter_mut().for_each(|v| *v = v.max(0.0));
    vals.truncate(m.len().min(mtm.len()));
    vals
}

/// `Σ_{i>r} σ_i²(m)`, summed from the smallest eigenvalue up.
pub fn tail_energy(m: &Dense, r: usize) -> f64 {
    squared_singular_values(m)[r..].iter().rev().sum()
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Dense {
    let g = gaussian(rng, n, n);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut x: Vec<f64> = (0..n).map(|i| g[i][j]).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
                x.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        cols.push(x.into_iter().map(|v| v / norm).collect());
    }
    transpose(&cols)
}

/// SPD matrix `Q diag(λ) Qᵀ` with `λ` log-uniform in `[1, cond]`, endpoints
/// included so the condition number is exactly `cond` (n ≥ 2).
pub fn random_spd(rng: &mut impl Rng, n: usize, cond: f64) -> Dense {
    let q = random_orthogonal(rng, n);
    let lambdas: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => 1.0,
            1 => cond,
            _ => cond.powf(rng.random::<f64>()),
        })
        .collect();
    let mut out = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| q[i][k] * lambdas[k] * q[j][k]).sum();
        }
    }
    out
}

/// Solves `a x = b` (square `a`, multiple right-hand sides) by Gaussian
/// elimination with partial pivoting.
pub fn solve(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Dense = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / d;
                if f != 0.0 {
                    for k in col..n + m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..m).map(|j| aug[i][n + j] / aug[i][i]).collect())
        .collect()
}

/// `Tr((W − L) G (W − L)ᵀ)`.
pub fn weighted_energy(w: &Dense, l: &Dense, g: &Dense) -> f64 {
    let d = sub(w, l);
    let dg = matmul(&d, g);
    dg.iter()
        .flatten()
        .zip(d.iter().flatten())
        .map(|(a, b)| a * b)
        .sum()
}

/// Best objective found by alternating least squares for
/// `min ‖(W − B Aᵀ) G^{1/2}‖_F²`, written as `Tr((W−BAᵀ) G (W−BAᵀ)ᵀ)` so it
/// never needs a matrix square root.
///
/// B-step: `B = W G A (Aᵀ G A)⁻¹`. A-step (for invertible `G`):
/// `A = Wᵀ B (BᵀB)⁻¹`.
pub fn als_weighted_low_rank(
    rng: &mut impl Rng,
    w: &Dense,
    g: &Dense,
    r: usize,
    restarts: usize,
    iterations: usize,
    tol: f64,
) -> f64 {
    let d_in = g.len();
    let wg = matmul(w, g);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut a = gaussian(rng, d_in, r);
        let mut prev = f64::INFINITY;
        let mut obj = f64::INFINITY;
        for _ in 0..iterations {
            let ga = matmul(g, &a);
            let atga = matmul(&transpose(&a), &ga);
            let b = transpose(&solve(&atga, &transpose(&matmul(&wg, &a))));
            let btb = matmul(&transpose(&b), &b);
            a = transpose(&solve(&btb, &transpose(&matmul(&transpose(w), &b))));
            let l = matmul(&b, &transpose(&a));
            obj = weighted_energy(w, &l, g);
            if (prev - obj).abs() <= tol * obj.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            prev = obj;
        }
        best = best.min(obj);
    }
    best
}

/// Exhaustive FP4 (E2M1) block quantizer: nearest of the 15 signed grid
/// values `g · absmax/6` (the top magnitude dequantizes to `absmax`), ties
/// to the larger magnitude.
pub fn fp4_block(block: &[f64]) -> Vec<f64> {
    const GRID: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let absmax = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if absmax == 0.0 {
        return vec![0.0; block.len()];
    }
    let scale = absmax / 6.0;
    let mut candidates = Vec::with_capacity(15);
    for g in GRID {
        let mag = if g == 6.0 { absmax } else { g * scale };
        candidates.push(mag);
        if g != 0.0 {
            candidates.push(-mag);
        }
    }
    block
        .iter()
        .map(|&v| {
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                let (dc, db) = ((v - c).abs(), (v - best).abs());
                if dc < db || (dc == db && c.abs() > best.abs()) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Exhaustive symmetric uniform quantizer over the `2^bits − 1` levels
/// `k · absmax / (2^(bits−1) − 1)`, ties to the larger magnitude.
pub fn uniform_group(vals: &[f64], bits: u32) -> Vec<f64> {
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let absmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if absmax == 0.0 {
        return vec![0.0; vals.len()];
    }
    let step = absmax / qmax;
    let levels: Vec<f64> = (-(qmax as i64)..=qmax as i64)
        .map(|k| {
            if k.unsigned_abs() as f64 == qmax {
                absmax * k.signum() as f64
            } else {
                k as f64 * step
            }
        })
        .collect();
    vals.iter()
        .map(|&v| {
            let mut best = levels[0];
            for &c in &levels[1..] {
                let (dc, db) = ((v - c).abs(), (v - best).abs());
                if dc < db || (dc == db && c.abs() > best.abs()) {
                    best = c;
                }
            }
            best
        })
        .collect()
}
