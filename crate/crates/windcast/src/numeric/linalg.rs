//! Positive-definite linear algebra and derivative checking.
//!
//! Factorizations are deliberately plain: a symmetric triangular
//! factorization that fails loudly (naming the offending leading minor) on
//! non-positive-definite input, with no pivoting fallback, plus a cyclic
//! Jacobi eigendecomposition used where a full spectrum is needed.

use crate::error::{Error, Result};
use crate::numeric::Array;

/// Symmetry gate, scaled by max(1, max|M|). Callers promise symmetry to
/// 1e-10; the gate only needs to catch gross asymmetry (a wrong matrix),
/// while staying loose enough that finite-difference probes of single
/// entries (eps around 1e-7) still pass and hit the symmetrized derivative.
const SYMMETRY_TOL: f64 = 1e-6;

fn check_square(m: &Array, what: &str) -> Result<usize> {
    if !m.is_matrix() || m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("{}: expected square matrix, got {:?}", what, m.shape())));
    }
    Ok(m.nrows())
}

fn check_symmetric(m: &Array) -> Result<()> {
    let n = m.nrows();
    let tol = SYMMETRY_TOL * m.max_abs().max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m.at2(i, j) - m.at2(j, i)).abs());
        }
    }
    if max_asym > tol {
        return Err(Error::NotSymmetric { max_asym, tol });
    }
    Ok(())
}

/// (M + M^T) / 2. Factorization inputs are symmetrized after the symmetry
/// check so that derivative formulas treat both triangles evenly.
pub(crate) fn symmetrize(m: &Array) -> Array {
    let n = m.nrows();
    let mut out = Array::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set2(i, j, 0.5 * (m.at2(i, j) + m.at2(j, i)));
        }
    }
    out
}

/// Lower-triangular factor L with M = L L^T.
///
/// Fails with the 1-based order of the first non-positive leading minor; no
/// pivoting or perturbation is attempted.
pub fn cholesky(m: &Array) -> Result<Array> {
    let n = check_square(m, "cholesky")?;
    check_symmetric(m)?;
    let s = symmetrize(m);
    let mut l = Array::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = s.at2(i, j);
            for k in 0..j {
                sum -= l.at2(i, k) * l.at2(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::NotPositiveDefinite { minor: i + 1 });
                }
                l.set2(i, j, sum.sqrt());
            } else {
                l.set2(i, j, sum / l.at2(j, j));
            }
        }
    }
    Ok(l)
}

/// ln det M for symmetric positive-definite M, via the triangular factor.
pub fn log_det_pd(m: &Array) -> Result<f64> {
    let l = cholesky(m)?;
    let n = l.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        acc += l.at2(i, i).ln();
    }
    Ok(2.0 * acc)
}

/// Solves L z = b in place given lower-triangular L.
fn forward_subst(l: &Array, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l.at2(i, k) * b[k];
        }
        b[i] = v / l.at2(i, i);
    }
}

/// Solves L^T z = b in place given lower-triangular L.
fn backward_subst(l: &Array, b: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l.at2(k, i) * b[k];
        }
        b[i] = v / l.at2(i, i);
    }
}

/// Solves M X = B for symmetric positive-definite M using a precomputed
/// triangular factor of M.
pub(crate) fn solve_with_factor(l: &Array, b: &Array) -> Result<Array> {
    let n = l.nrows();
    if !b.is_matrix() || b.nrows() != n {
        return Err(Error::Shape(format!(
            "solve: factor order {} vs rhs {:?}",
            n,
            b.shape()
        )));
    }
    let k = b.ncols();
    let mut out = Array::zeros(vec![n, k]);
    let mut col = vec![0.0; n];
    for j in 0..k {
        for i in 0..n {
            col[i] = b.at2(i, j);
        }
        forward_subst(l, &mut col);
        backward_subst(l, &mut col);
        for i in 0..n {
            out.set2(i, j, col[i]);
        }
    }
    Ok(out)
}

/// Solves M X = B for symmetric positive-definite M.
pub fn solve_pd(m: &Array, b: &Array) -> Result<Array> {
    let l = cholesky(m)?;
    solve_with_factor(&l, b)
}

/// Inverse of a symmetric positive-definite matrix from its factor.
pub(crate) fn inverse_with_factor(l: &Array) -> Result<Array> {
    let n = l.nrows();
    solve_with_factor(l, &Array::eye(n))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// matrix columns. Independent of the triangular-factorization path, which
/// is what lets tests use it as an oracle for `log_det_pd`.
pub fn symmetric_eigen(m: &Array) -> Result<(Vec<f64>, Array)> {
    let n = check_square(m, "symmetric_eigen")?;
    check_symmetric(m)?;
    let mut a = symmetrize(m);
    let mut v = Array::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.at2(i, j).powi(2);
            }
        }
        if off.sqrt() <= 1e-14 * a.max_abs().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at2(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.at2(p, p);
                let aqq = a.at2(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at2(k, p);
                    let akq = a.at2(k, q);
                    a.set2(k, p, c * akp - s * akq);
                    a.set2(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at2(p, k);
                    let aqk = a.at2(q, k);
                    a.set2(p, k, c * apk - s * aqk);
                    a.set2(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at2(k, p);
                    let vkq = v.at2(k, q);
                    v.set2(k, p, c * vkp - s * vkq);
                    v.set2(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at2(j, j).partial_cmp(&a.at2(i, i)).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| a.at2(i, i)).collect();
    let mut vecs = Array::zeros(vec![n, n]);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vecs.set2(i, new_j, v.at2(i, old_j));
        }
    }
    Ok((vals, vecs))
}

/// Central-difference gradient of a scalar function of an array.
///
/// The step is applied per coordinate; `f` must be finite at every probe.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Array) -> Result<f64>,
    x: &Array,
    eps: f64,
) -> Result<Array> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite_diff_grad: eps = {}", eps)));
    }
    let mut probe = x.clone();
    let mut grad = Array::zeros(x.shape().to_vec());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        let d = (hi - lo) / (2.0 * eps);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_grad: coordinate {} gave {}",
                i, d
            )));
        }
        grad.data_mut()[i] = d;
    }
    Ok(grad)
}
