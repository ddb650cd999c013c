//! Empirical covariance blocks and the normal-theory objectives on them.
//!
//! For jointly Gaussian (Y, T) the mutual information depends only on the
//! block covariance: I = (ln det S_YY - ln det Schur) / 2, with
//! Schur = S_YY - S_YT S_TT^-1 S_TY. Minimizing ln det of the (jittered)
//! Schur complement is therefore the same as maximizing the normal-theory
//! information, which is the training objective for the reduction map.

use crate::error::{Error, Result};
use crate::numeric::{log_det_pd, solve_pd, Array};

#[derive(Debug, Clone)]
pub struct CovBlocks {
    /// p x p response covariance.
    pub yy: Array,
    /// p x m cross covariance.
    pub yt: Array,
    /// m x m reduced-predictor covariance.
    pub tt: Array,
}

/// Centered sample covariances with 1/(N-1) normalization.
pub fn empirical_cov(y: &Array, t: &Array) -> Result<CovBlocks> {
    if !y.is_matrix() || !t.is_matrix() {
        return Err(Error::Shape("empirical_cov expects two matrices".into()));
    }
    let n = y.nrows();
    if t.nrows() != n {
        return Err(Error::Shape(format!(
            "row mismatch: {} responses vs {} reduced predictors",
            n,
            t.nrows()
        )));
    }
    let (p, m) = (y.ncols(), t.ncols());
    if n < p + m + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot support a {}+{} dimensional covariance",
            n, p, m
        )));
    }
    let yc = center_columns(y);
    let tc = center_columns(t);
    let scale = 1.0 / (n as f64 - 1.0);
    let yy = yc.transpose()?.matmul(&yc)?.scale(scale);
    let yt = yc.transpose()?.matmul(&tc)?.scale(scale);
    let tt = tc.transpose()?.matmul(&tc)?.scale(scale);
    Ok(CovBlocks { yy, yt, tt })
}

fn center_columns(x: &Array) -> Array {
    let (n, d) = (x.nrows(), x.ncols());
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (j, mv) in means.iter_mut().enumerate() {
            *mv += x.at2(i, j);
        }
    }
    for mv in &mut means {
        *mv /= n as f64;
    }
    let mut out = x.clone();
    for i in 0..n {
        for j in 0..d {
            out.set2(i, j, x.at2(i, j) - means[j]);
        }
    }
    out
}

/// Schur complement S_YY - S_YT (S_TT + jitter I)^-1 S_TY.
fn schur_complement(cov: &CovBlocks, jitter: f64) -> Result<Array> {
    let m = cov.tt.nrows();
    let mut tt = cov.tt.clone();
    for i in 0..m {
        tt.set2(i, i, tt.at2(i, i) + jitter);
    }
    let ty = cov.yt.transpose()?;
    let solved = solve_pd(&tt, &ty)?;
    cov.yy.sub(&cov.yt.matmul(&solved)?)
}

/// Normal-theory mutual information in nats; requires S_TT and the Schur
/// complement to be positive definite (add jitter to `tt` beforehand if
/// needed).
pub fn gaussian_mi(cov: &CovBlocks) -> Result<f64> {
    let schur = schur_complement(cov, 0.0)?;
    let mi = 0.5 * (log_det_pd(&cov.yy)? - log_det_pd(&schur)?);
    if mi >= 0.0 {
        Ok(mi)
    } else if mi > -1e-12 {
        // Roundoff on nearly independent blocks; mathematically zero.
        Ok(0.0)
    } else {
        Err(Error::InvalidArgument(format!(
            "covariance blocks are not jointly PSD: information {:.3e} < 0",
            mi
        )))
    }
}

/// ln det of the jittered Schur complement, the quantity reducer training
/// minimizes. Equal to ln det S_YY - 2 I(Y; T) at zero jitter.
pub fn schur_objective(cov: &CovBlocks, jitter: f64) -> Result<f64> {
    log_det_pd(&schur_complement(cov, jitter)?)
}
