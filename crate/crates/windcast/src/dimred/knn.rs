//! Box-kernel k-nearest-neighbor joint density estimate.
//!
//! Volume convention: the k-th nearest neighbor is taken under the
//! Chebyshev metric, sample points exactly coinciding with the query are
//! excluded, and the box volume is the product over coordinates of twice
//! the absolute coordinate offset to that neighbor. The estimate is
//! (k / N) / volume with N the full sample size. This is a documented
//! convention choice; coordinate ties with the chosen neighbor make the
//! volume zero and are rejected.

use crate::error::{Error, Result};
use crate::numeric::Array;

pub fn knn_joint_density(point: &[f64], sample: &Array, k: usize) -> Result<f64> {
    if !sample.is_matrix() {
        return Err(Error::Shape("sample must be an N x dim matrix".into()));
    }
    let n = sample.nrows();
    let dim = sample.ncols();
    if point.len() != dim {
        return Err(Error::Shape(format!(
            "query has {} coordinates, sample rows have {}",
            point.len(),
            dim
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {} must satisfy 1 <= k < N = {}",
            k, n
        )));
    }

    // (Chebyshev distance, row) for every sample point distinct from the
    // query; ties resolved by row order so the choice is deterministic.
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let row = sample.row(i);
        let d = row
            .iter()
            .zip(point)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if d > 0.0 {
            dists.push((d, i));
        }
    }
    if dists.len() < k {
        return Err(Error::InvalidArgument(format!(
            "only {} sample points are distinct from the query, k = {}",
            dists.len(),
            k
        )));
    }
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let neighbor = sample.row(dists[k - 1].1);

    let mut volume = 1.0;
    for (a, b) in neighbor.iter().zip(point) {
        let side = 2.0 * (a - b).abs();
        if side == 0.0 {
            return Err(Error::InvalidArgument(
                "k-th neighbor shares a coordinate with the query; box volume is zero".into(),
            ));
        }
        volume *= side;
    }
    Ok((k as f64 / n as f64) / volume)
}
