//! Sparse symmetric positive definite solvers: an envelope Cholesky
//! factorization for desk-scale systems and Jacobi-preconditioned conjugate
//! gradients beyond that.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::vecmath::dot;

/// Cholesky factor `L` of `A = L Lᵗ` stored by rows over each row's envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    /// First stored column of each row.
    first: Vec<usize>,
    /// Offset of row `i`'s first entry in `data`.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Number of stored entries a factorization of `a` would need.
    pub fn envelope_size(a: &CsrMatrix) -> usize {
        (0..a.nrows())
            .map(|i| {
                let f = a.row(i).0.first().copied().unwrap_or(i).min(i);
                i - f + 1
            })
            .sum()
    }

    /// Factors a symmetric positive definite matrix; only the lower triangle
    /// is read.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::LinearSolveFailure("matrix is not square".into()));
        }
        let mut first = vec![0usize; n];
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            let f = a.row(i).0.first().copied().unwrap_or(i).min(i);
            first[i] = f;
            start[i + 1] = start[i] + (i - f + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= i {
                    data[start[i] + c - first[i]] = v;
                }
            }
        }
        let mut scale = 0.0f64;
        for i in 0..n {
            scale = scale.max(data[start[i + 1] - 1].abs());
        }
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(start[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[start[j]..start[j + 1]];
                let s = dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..j - fj]);
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let d = row_i[i - fi] - dot(&row_i[..i - fi], &row_i[..i - fi]);
            if !(d > 1e-14 * scale) {
                return Err(Error::LinearSolveFailure(format!(
                    "matrix is not positive definite (pivot {d:e} at row {i})"
                )));
            }
            row_i[i - fi] = libm::sqrt(d);
        }
        Ok(EnvelopeCholesky {
            n,
            first,
            start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.start[i]..self.start[i + 1]]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let r = self.row(i);
            let fi = self.first[i];
            let s = dot(&r[..i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / r[i - fi];
        }
        for i in (0..self.n).rev() {
            let r = self.row(i);
            let fi = self.first[i];
            y[i] /= r[i - fi];
            let yi = y[i];
            for (k, &l) in r[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        y
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on a symmetric positive
/// definite matrix.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<IterativeSolution> {
    let n = b.len();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = libm::sqrt(dot(b, b));
    if bnorm == 0.0 {
        return Ok(IterativeSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailure("conjugate gradients broke down".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = libm::sqrt(dot(&r, &r)) / bnorm;
        if rel <= tol {
            return Ok(IterativeSolution {
                x,
                iterations: it + 1,
                relative_residual: rel,
            });
        }
        for i in 0..n {
            z[i] = r[i] * diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        residual: rel,
        tolerance: tol,
    })
}

/// Smallest eigenvalue of a symmetric positive definite matrix by inverse
/// iteration, together with its eigenvector.
pub fn smallest_eigenpair(
    a: &CsrMatrix,
    factor: &EnvelopeCholesky,
    iterations: usize,
) -> (f64, Vec<f64>) {
    let n = factor.dim();
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * libm::sin(1.0 + i as f64 * 0.618))
        .collect();
    let mut lambda = f64::INFINITY;
    for _ in 0..iterations {
        let nv = libm::sqrt(dot(&v, &v));
        v.iter_mut().for_each(|x| *x /= nv);
        let w = factor.solve(&v);
        let nw = libm::sqrt(dot(&w, &w));
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let av = a.matvec(&next);
        let rayleigh = dot(&next, &av);
        let converged = (rayleigh - lambda).abs() <= 1e-12 * rayleigh.abs();
        lambda = rayleigh;
        v = next;
        if converged {
            break;
        }
    }
    (lambda, v)
}
