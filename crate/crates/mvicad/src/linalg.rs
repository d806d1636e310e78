//! Dense helpers for the small square matrices used throughout the crate.
//!
//! The matrix order here is the source count, which stays tiny, so plain
//! LU and Jacobi sweeps are preferred over linking a LAPACK backend.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

fn square_order(a: &Array2<f64>, context: &'static str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::DimensionMismatch {
            what: context,
            expected: r,
            got: c,
        });
    }
    if r == 0 {
        return Err(Error::InvalidParameter {
            name: context,
            reason: "matrix must be at least 1x1".into(),
        });
    }
    Ok(r)
}

fn swap_rows(a: &mut Array2<f64>, i: usize, j: usize) {
    if i == j {
        return;
    }
    let cols = a.ncols();
    for c in 0..cols {
        a.swap([i, c], [j, c]);
    }
}

/// Returns `(log|det A|, sign of det A)` via LU with partial pivoting.
pub fn log_abs_det(a: &Array2<f64>) -> Result<(f64, f64)> {
    let p = square_order(a, "log_abs_det")?;
    let mut lu = a.clone();
    let mut sign = 1.0f64;
    let mut logdet = 0.0f64;
    for k in 0..p {
        let mut pivot_row = k;
        let mut pivot_abs = lu[[k, k]].abs();
        for r in k + 1..p {
            let v = lu[[r, k]].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs == 0.0 || !pivot_abs.is_finite() {
            return Err(Error::Singular {
                context: "degenerate pivot in LU factorization".into(),
            });
        }
        if pivot_row != k {
            swap_rows(&mut lu, k, pivot_row);
            sign = -sign;
        }
        let pivot = lu[[k, k]];
        sign *= pivot.signum();
        logdet += pivot_abs.ln();
        for r in k + 1..p {
            let factor = lu[[r, k]] / pivot;
            for c in k + 1..p {
                lu[[r, c]] -= factor * lu[[k, c]];
            }
        }
    }
    Ok((logdet, sign))
}

/// Matrix inverse via Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let p = square_order(a, "invert")?;
    let mut work = a.clone();
    let mut inv = Array2::<f64>::eye(p);
    for k in 0..p {
        let mut pivot_row = k;
        let mut pivot_abs = work[[k, k]].abs();
        for r in k + 1..p {
            let v = work[[r, k]].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs == 0.0 || !pivot_abs.is_finite() {
            return Err(Error::Singular {
                context: "degenerate pivot in Gauss-Jordan elimination".into(),
            });
        }
        swap_rows(&mut work, k, pivot_row);
        swap_rows(&mut inv, k, pivot_row);
        let pivot = work[[k, k]];
        for c in 0..p {
            work[[k, c]] /= pivot;
            inv[[k, c]] /= pivot;
        }
        for r in 0..p {
            if r == k {
                continue;
            }
            let factor = work[[r, k]];
            if factor == 0.0 {
                continue;
            }
            for c in 0..p {
                work[[r, c]] -= factor * work[[k, c]];
                inv[[r, c]] -= factor * inv[[k, c]];
            }
        }
    }
    Ok(inv)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(values, vectors)` with eigenvectors in the columns, so that
/// `A = V diag(values) V^T`. The input is symmetrized before iterating.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let p = square_order(a, "sym_eigen")?;
    let mut m = (a + &a.t()) * 0.5;
    let mut v = Array2::<f64>::eye(p);
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !frob.is_finite() {
        return Err(Error::NonFinite {
            what: "sym_eigen input".into(),
        });
    }
    if frob == 0.0 {
        return Ok((Array1::zeros(p), v));
    }
    let tol = 1e-14 * frob;
    for _ in 0..60 {
        let mut off_sq = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    off_sq += m[[i, j]] * m[[i, j]];
                }
            }
        }
        if off_sq.sqrt() <= tol {
            break;
        }
        for i in 0..p - 1 {
            for j in i + 1..p {
                let apq = m[[i, j]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[j, j]] - m[[i, i]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let vki = v[[k, i]];
                    let vkj = v[[k, j]];
                    v[[k, i]] = c * vki - s * vkj;
                    v[[k, j]] = s * vki + c * vkj;
                }
            }
        }
    }
    let values = Array1::from_iter((0..p).map(|i| m[[i, i]]));
    Ok((values, v))
}

/// 2-norm condition number, computed through the eigenvalues of `A^T A`.
/// Singular inputs report `f64::INFINITY` rather than an error.
pub fn condition_number(a: &Array2<f64>) -> Result<f64> {
    square_order(a, "condition_number")?;
    let gram = a.t().dot(a);
    let (values, _) = sym_eigen(&gram)?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &v in values.iter() {
        let v = v.max(0.0);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == 0.0 || lo <= hi * 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}
