//! Calibration scoring: empirical hit rates against nominal coverage and the
//! weighted absolute-deviation score used for early stopping.

use crate::data::ExampleSet;
use crate::dimred::Reducer;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::forecast::grid::{conditional_density, GridSpec};
use crate::forecast::hdr::{hit, standard_contours, NOMINAL_683, NOMINAL_954};
use serde::{Deserialize, Serialize};

/// Score weights for the two coverage deviations.
pub const SCORE_WEIGHT_683: f64 = 13.0 / 23.0;
pub const SCORE_WEIGHT_954: f64 = 10.0 / 23.0;

/// Fraction of a dataset allowed to be skipped as out of distribution before
/// evaluation fails outright.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

/// Empirical contour coverage of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub hit_rate_683: f64,
    pub hit_rate_954: f64,
    pub score: f64,
    /// Examples actually scored.
    pub evaluated: usize,
    /// Examples skipped for out-of-distribution conditioning.
    pub skipped: usize,
}

/// Weighted absolute deviation of the hit rates from nominal coverage.
/// Exact arithmetic: zero iff both rates are exactly nominal.
pub fn weighted_calibration_score(hr_683: f64, hr_954: f64, w_683: f64, w_954: f64) -> f64 {
    w_683 * (NOMINAL_683 - hr_683).abs() + w_954 * (NOMINAL_954 - hr_954).abs()
}

/// The default-weighted calibration score.
pub fn calibration_score(hr_683: f64, hr_954: f64) -> f64 {
    weighted_calibration_score(hr_683, hr_954, SCORE_WEIGHT_683, SCORE_WEIGHT_954)
}

/// Scores every example's observed response against the model's forecast
/// contours for that example's reduced predictors.
///
/// Out-of-distribution conditioning points are skipped and counted rather
/// than failing the run, as long as they stay within [`MAX_SKIP_FRACTION`]
/// of the dataset.
pub fn hit_rate(
    model: &FlowModel,
    reducer: &Reducer,
    dataset: &ExampleSet,
    spec: &GridSpec,
) -> Result<CalibrationReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("hit-rate evaluation needs examples".into()));
    }
    if dataset.responses.ncols() != model.response_dim() {
        return Err(Error::Shape(format!(
            "dataset responses have {} components, model expects {}",
            dataset.responses.ncols(),
            model.response_dim()
        )));
    }
    let reduced = reducer.apply_batch(&dataset.predictors)?;
    let n = dataset.len();
    let mut hits_683 = 0usize;
    let mut hits_954 = 0usize;
    let mut skipped = 0usize;
    for i in 0..n {
        let grid = match conditional_density(model, reduced.row(i), spec) {
            Ok(grid) => grid,
            Err(Error::OutOfDistribution { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let levels = standard_contours(&grid)?;
        let (h683, h954) = hit(&grid, &levels, dataset.responses.row(i));
        hits_683 += h683 as usize;
        hits_954 += h954 as usize;
    }
    if skipped as f64 > MAX_SKIP_FRACTION * n as f64 {
        return Err(Error::Data(format!(
            "{} of {} examples were out of distribution, above the {}% skip budget",
            skipped,
            n,
            MAX_SKIP_FRACTION * 100.0
        )));
    }
    let evaluated = n - skipped;
    let hr_683 = hits_683 as f64 / evaluated as f64;
    let hr_954 = hits_954 as f64 / evaluated as f64;
    Ok(CalibrationReport {
        hit_rate_683: hr_683,
        hit_rate_954: hr_954,
        score: calibration_score(hr_683, hr_954),
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Season;
    use crate::dimred::ReducerMap;
    use crate::forecast::grid::GridAxis;
    use crate::numeric::Array;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn nominal_rates_score_exactly_zero() {
        assert_eq!(calibration_score(NOMINAL_683, NOMINAL_954), 0.0);
    }

    #[test]
    fn pinned_scores_match_direct_arithmetic() {
        // Certain hits at both levels.
        let full = calibration_score(1.0, 1.0);
        assert_eq!(
            full,
            13.0 / 23.0 * (1.0f64 - 0.683).abs() + 10.0 / 23.0 * (1.0f64 - 0.954).abs()
        );
        assert_abs_diff_eq!(full, 0.19917, epsilon = 1e-5);
        // Only the wide contour deviates.
        let wide_only = calibration_score(0.683, 1.0);
        assert_eq!(wide_only, 10.0 / 23.0 * (1.0f64 - 0.954).abs());
        assert_abs_diff_eq!(wide_only, 0.02, epsilon = 1e-15);
    }

    /// Each term depends on its rate only through the absolute deviation, so
    /// reflecting a rate around its nominal value leaves the score unchanged.
    #[test]
    fn score_is_symmetric_in_the_deviations() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        for _ in 0..200 {
            let d1: f64 = rng.gen_range(-0.3..0.3);
            let d2: f64 = rng.gen_range(-0.04..0.04);
            let plus = calibration_score(NOMINAL_683 + d1, NOMINAL_954 + d2);
            let minus = calibration_score(NOMINAL_683 - d1, NOMINAL_954 - d2);
            // The reflected inputs round differently, so agreement is to a
            // few ulps, not bitwise.
            assert_abs_diff_eq!(plus, minus, epsilon = 1e-15);
        }
    }

    fn identity_reducer(m: usize) -> Reducer {
        Reducer::new(m, m, vec![], vec![], ReducerMap::Select { indices: (0..m).collect() })
            .unwrap()
    }

    fn shifted_normal_model(sd: f64) -> FlowModel {
        // Zeroed conditioning nets shift every coordinate by one; latent
        // means of one cancel the shift, leaving y | t isotropic normal.
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut model =
            FlowModel::init(2, 1, 1, 3, 4, 2, vec![0.0; 3], vec![1.0; 3], &mut rng).unwrap();
        let mut params = model.params();
        for p in params.iter_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let k = params.len();
        // Latent blocks sit at the tail: logits, then (mean, log-sd) pairs.
        for c in 0..2 {
            for v in params[k - 4 + 2 * c].data_mut() {
                *v = 1.0;
            }
            for v in params[k - 3 + 2 * c].data_mut() {
                *v = sd.ln();
            }
        }
        model.load_params(&params).unwrap();
        model
    }

    fn dataset_at(points: &[(f64, f64)]) -> ExampleSet {
        let n = points.len();
        let mut resp = Vec::with_capacity(2 * n);
        for (a, b) in points {
            resp.push(*a);
            resp.push(*b);
        }
        ExampleSet {
            predictors: Array::zeros(vec![n, 1]),
            responses: Array::matrix(n, 2, resp).unwrap(),
            provenance: vec![(2000, Season::Q1); n],
            lags: 0,
            center: (0, 0),
            lattice: (1, 1),
        }
    }

    fn square_spec(half: f64, cells: usize) -> GridSpec {
        GridSpec::new([
            GridAxis { lo: -half, hi: half, cells },
            GridAxis { lo: -half, hi: half, cells },
        ])
        .unwrap()
    }

    #[test]
    fn responses_at_the_conditional_mode_always_hit() {
        let model = shifted_normal_model(1.0);
        let reducer = identity_reducer(1);
        let spec = square_spec(5.0, 64);
        // Place each response at the argmax of its own forecast.
        let grid = conditional_density(&model, &[0.0], &spec).unwrap();
        let peak = grid.argmax_center();
        let set = dataset_at(&vec![peak; 20]);
        let report = hit_rate(&model, &reducer, &set, &spec).unwrap();
        assert_eq!((report.hit_rate_683, report.hit_rate_954), (1.0, 1.0));
        assert_eq!(report.evaluated, 20);
        assert_eq!(report.skipped, 0);
        assert_eq!(report.score, calibration_score(1.0, 1.0));
    }

    #[test]
    fn responses_far_off_grid_always_miss() {
        let model = shifted_normal_model(1.0);
        let reducer = identity_reducer(1);
        let spec = square_spec(5.0, 32);
        let set = dataset_at(&vec![(1e6, 1e6); 10]);
        let report = hit_rate(&model, &reducer, &set, &spec).unwrap();
        assert_eq!((report.hit_rate_683, report.hit_rate_954), (0.0, 0.0));
    }

    #[test]
    fn skip_budget_counts_and_enforces() {
        let model = shifted_normal_model(1.0);
        let reducer = identity_reducer(1);
        let spec = square_spec(5.0, 16);
        // One out-of-distribution predictor among a hundred stays inside the
        // one-percent budget.
        let mut set = dataset_at(&vec![(0.0, 0.0); 100]);
        set.predictors.set2(7, 0, 1e8);
        let report = hit_rate(&model, &reducer, &set, &spec).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.evaluated, 99);

        // One among twenty does not.
        let mut small = dataset_at(&vec![(0.0, 0.0); 20]);
        small.predictors.set2(3, 0, 1e8);
        let err = hit_rate(&model, &reducer, &small, &spec).unwrap_err();
        assert!(err.to_string().contains("out of distribution"), "got {}", err);
    }

    /// With responses drawn from the model's own conditional, hit rates land
    /// near nominal coverage.
    #[test]
    fn model_generated_responses_are_calibrated() {
        let model = shifted_normal_model(1.0);
        let reducer = identity_reducer(1);
        let spec = square_spec(6.0, 96);
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let n = 1000;
        let points: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let set = dataset_at(&points);
        let report = hit_rate(&model, &reducer, &set, &spec).unwrap();
        assert!(
            (report.hit_rate_683 - NOMINAL_683).abs() <= 0.05,
            "hit rate {} at .683",
            report.hit_rate_683
        );
        assert!(
            (report.hit_rate_954 - NOMINAL_954).abs() <= 0.03,
            "hit rate {} at .954",
            report.hit_rate_954
        );
    }
}
