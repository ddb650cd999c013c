//! Response-agnostic and correlation-picking baseline reducers.

use crate::data::ExampleSet;
use crate::dimred::reducer::{Reducer, ReducerMap};
use crate::error::{Error, Result};
use crate::numeric::{symmetric_eigen, Array};

/// Columns with sample standard deviation at or below this are treated as
/// constant: standardized to zero, skipped by correlation ranking.
pub(crate) const CONSTANT_SD: f64 = 1e-12;

pub(crate) fn column_stats(x: &Array) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.nrows(), x.ncols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x.at2(i, j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for (j, s) in sd.iter_mut().enumerate() {
            let dv = x.at2(i, j) - mean[j];
            *s += dv * dv;
        }
    }
    for s in &mut sd {
        *s = (*s / (n as f64 - 1.0)).sqrt();
    }
    (mean, sd)
}

/// Projection onto the top-m principal components of the standardized
/// predictors. Components are ordered by decreasing eigenvalue; each is
/// sign-fixed so its largest-magnitude loading is positive.
pub fn pca_reducer(predictors: &Array, m: usize) -> Result<Reducer> {
    if !predictors.is_matrix() {
        return Err(Error::Shape("predictors must be an N x d matrix".into()));
    }
    let (n, d) = (predictors.nrows(), predictors.ncols());
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("m = {} must lie in 1..={}", m, d)));
    }
    if n <= m {
        return Err(Error::InvalidArgument(format!(
            "need more than {} rows to extract {} components",
            m, m
        )));
    }
    let (mean, sd) = column_stats(predictors);
    // Constant columns standardize to zero with a unit placeholder scale.
    let scale: Vec<f64> = sd.iter().map(|&s| if s > CONSTANT_SD { s } else { 1.0 }).collect();

    let mut corr = Array::zeros(vec![d, d]);
    for i in 0..n {
        let row = predictors.row(i);
        let std_row: Vec<f64> =
            row.iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]).collect();
        for a in 0..d {
            for b in a..d {
                let v = corr.at2(a, b) + std_row[a] * std_row[b];
                corr.set2(a, b, v);
                corr.set2(b, a, v);
            }
        }
    }
    // The loop above double-writes the diagonal; rebuild it cleanly.
    for a in 0..d {
        let mut acc = 0.0;
        for i in 0..n {
            let v = (predictors.at2(i, a) - mean[a]) / scale[a];
            acc += v * v;
        }
        corr.set2(a, a, acc);
    }
    let corr = corr.scale(1.0 / (n as f64 - 1.0));

    let (eigs, vecs) = symmetric_eigen(&corr)?;
    let lead = eigs.first().copied().unwrap_or(0.0).max(0.0);
    let rank = eigs.iter().filter(|&&e| e > 1e-9 * lead.max(1e-300)).count();
    if rank < m {
        return Err(Error::InvalidArgument(format!(
            "predictor covariance has rank {} but {} components were requested",
            rank, m
        )));
    }

    let mut rows = Vec::with_capacity(m * d);
    for comp in 0..m {
        let mut v: Vec<f64> = (0..d).map(|i| vecs.at2(i, comp)).collect();
        let lead_idx = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[lead_idx] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        rows.extend(v);
    }
    Reducer::new(d, m, mean, scale, ReducerMap::Projection { rows: Array::matrix(m, d, rows)? })
}

/// Picks the m raw predictor coordinates whose best absolute Pearson
/// correlation with any response component is largest. Constant
/// coordinates are skipped; ties go to the lower index; the selection is
/// returned in rank order.
pub fn gridpoint_reducer(set: &ExampleSet, m: usize) -> Result<Reducer> {
    let x = &set.predictors;
    let y = &set.responses;
    let (n, d) = (x.nrows(), x.ncols());
    let p = y.ncols();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("m = {} must lie in 1..={}", m, d)));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 examples to rank correlations".into()));
    }
    let (x_mean, x_sd) = column_stats(x);
    let (y_mean, y_sd) = column_stats(y);

    let mut scored: Vec<(f64, usize)> = Vec::new();
    for j in 0..d {
        if x_sd[j] <= CONSTANT_SD {
            continue;
        }
        let mut best = 0.0f64;
        for c in 0..p {
            if y_sd[c] <= CONSTANT_SD {
                continue;
            }
            let mut cov = 0.0;
            for i in 0..n {
                cov += (x.at2(i, j) - x_mean[j]) * (y.at2(i, c) - y_mean[c]);
            }
            cov /= n as f64 - 1.0;
            best = best.max((cov / (x_sd[j] * y_sd[c])).abs());
        }
        scored.push((best, j));
    }
    if scored.len() < m {
        return Err(Error::InvalidArgument(format!(
            "only {} non-constant predictor coordinates, {} requested",
            scored.len(),
            m
        )));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let indices: Vec<usize> = scored[..m].iter().map(|&(_, j)| j).collect();
    Reducer::new(d, m, vec![], vec![], ReducerMap::Select { indices })
}
