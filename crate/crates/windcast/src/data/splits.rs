//! Seasonal train/validation/test splitting.
//!
//! The test set is one (year, season) slice held out whole. The training
//! pool is every example of the same season from a window of prior years;
//! the pool is shuffled once and floor-partitioned into the reducer stream,
//! the density stream and a validation remainder, so the three parts stay
//! disjoint and cover the pool exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::examples::ExampleSet;
use crate::data::grid::Season;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub test_year: i32,
    pub test_season: Season,
    /// Pool window: years in [test_year - prior_years, test_year).
    pub prior_years: usize,
    /// Fractions of the pool for (reducer train, density train); the
    /// remainder becomes validation.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_year: 0,
            test_season: Season::Q1,
            prior_years: 10,
            fractions: (0.4, 0.4, 0.2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub dr_train: ExampleSet,
    pub jm_train: ExampleSet,
    pub validation: ExampleSet,
    pub test: ExampleSet,
}

/// Smallest usable pool: a few examples per dimension of the joint
/// (response, reduced-predictor) vector, taking the reduced width at its
/// response-matching floor of 2.
const MIN_POOL_PER_DIM: usize = 3;
const JOINT_DIM_FLOOR: usize = 4;

pub fn make_splits(examples: &ExampleSet, spec: &SplitSpec) -> Result<Splits> {
    let (f_dr, f_jm, f_val) = spec.fractions;
    for (name, f) in [("reducer", f_dr), ("density", f_jm), ("validation", f_val)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{} fraction {} must lie strictly between 0 and 1",
                name, f
            )));
        }
    }
    if ((f_dr + f_jm + f_val) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions {:?} must sum to 1",
            spec.fractions
        )));
    }
    if spec.prior_years == 0 {
        return Err(Error::InvalidArgument("prior_years must be at least 1".into()));
    }

    let mut test_idx = Vec::new();
    let mut pool_idx = Vec::new();
    let lo_year = spec.test_year - spec.prior_years as i32;
    for (i, &(year, season)) in examples.provenance.iter().enumerate() {
        if season != spec.test_season {
            continue;
        }
        if year == spec.test_year {
            test_idx.push(i);
        } else if year >= lo_year && year < spec.test_year {
            pool_idx.push(i);
        }
    }
    if test_idx.is_empty() {
        return Err(Error::Data(format!(
            "no examples for test slice {} {:?}",
            spec.test_year, spec.test_season
        )));
    }
    let min_pool = MIN_POOL_PER_DIM * JOINT_DIM_FLOOR;
    if pool_idx.len() < min_pool {
        return Err(Error::Data(format!(
            "training pool for {:?} before {} holds {} examples, need at least {}",
            spec.test_season,
            spec.test_year,
            pool_idx.len(),
            min_pool
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    pool_idx.shuffle(&mut rng);

    let p = pool_idx.len();
    let n_dr = (f_dr * p as f64).floor() as usize;
    let n_jm = (f_jm * p as f64).floor() as usize;
    let n_val = p - n_dr - n_jm;
    if n_dr == 0 || n_jm == 0 || n_val == 0 {
        return Err(Error::Data(format!(
            "pool of {} splits into ({}, {}, {}); every part must be non-empty",
            p, n_dr, n_jm, n_val
        )));
    }

    let dr = &pool_idx[..n_dr];
    let jm = &pool_idx[n_dr..n_dr + n_jm];
    let val = &pool_idx[n_dr + n_jm..];
    Ok(Splits {
        dr_train: examples.subset(dr),
        jm_train: examples.subset(jm),
        validation: examples.subset(val),
        test: examples.subset(&test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Array;

    /// Eleven years of one season, `per_year` examples each; predictor is
    /// the example's global index so rows stay identifiable after shuffling.
    fn toy(per_year: usize) -> ExampleSet {
        let n = 11 * per_year;
        let preds: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let resps: Vec<f64> = (0..2 * n).map(|i| i as f64).collect();
        let mut prov = Vec::new();
        for year in 2010..2021 {
            for _ in 0..per_year {
                prov.push((year, Season::Q1));
            }
        }
        ExampleSet {
            predictors: Array::matrix(n, 1, preds).unwrap(),
            responses: Array::matrix(n, 2, resps).unwrap(),
            provenance: prov,
            lags: 0,
            center: (0, 0),
            lattice: (1, 1),
        }
    }

    fn spec() -> SplitSpec {
        SplitSpec { test_year: 2020, test_season: Season::Q1, ..SplitSpec::default() }
    }

    #[test]
    fn eleven_years_of_hundred_split_100_400_400_200() {
        let s = make_splits(&toy(100), &spec()).unwrap();
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.dr_train.len(), 400);
        assert_eq!(s.jm_train.len(), 400);
        assert_eq!(s.validation.len(), 200);
    }

    #[test]
    fn parts_are_disjoint_and_cover_the_pool() {
        let ex = toy(20);
        let s = make_splits(&ex, &spec()).unwrap();
        let mut seen: Vec<f64> = Vec::new();
        for part in [&s.dr_train, &s.jm_train, &s.validation] {
            for i in 0..part.len() {
                seen.push(part.predictors.row(i)[0]);
            }
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert_eq!(seen, expected, "pool rows lost or duplicated");
        for i in 0..s.test.len() {
            assert!(s.test.predictors.row(i)[0] >= 200.0, "pool row leaked into test");
        }
    }

    #[test]
    fn same_seed_same_split_different_seed_different() {
        let ex = toy(20);
        let a = make_splits(&ex, &spec()).unwrap();
        let b = make_splits(&ex, &spec()).unwrap();
        assert_eq!(a.dr_train.predictors, b.dr_train.predictors);
        let c = make_splits(&ex, &SplitSpec { seed: 7, ..spec() }).unwrap();
        assert_ne!(a.dr_train.predictors, c.dr_train.predictors);
    }

    #[test]
    fn window_excludes_years_before_the_pool() {
        let sp = SplitSpec { prior_years: 3, ..spec() };
        let s = make_splits(&toy(20), &sp).unwrap();
        let total = s.dr_train.len() + s.jm_train.len() + s.validation.len();
        assert_eq!(total, 60, "only three prior years belong to the pool");
    }

    #[test]
    fn missing_test_slice_errors() {
        let sp = SplitSpec { test_year: 2030, ..spec() };
        let err = make_splits(&toy(20), &sp).unwrap_err();
        assert!(err.to_string().contains("no examples"), "{}", err);
    }

    #[test]
    fn wrong_season_finds_no_test_examples() {
        let sp = SplitSpec { test_season: Season::Q3, ..spec() };
        assert!(make_splits(&toy(20), &sp).is_err());
    }

    #[test]
    fn undersized_pool_errors() {
        let sp = SplitSpec { prior_years: 1, ..spec() };
        // One prior year of 8 examples misses the floor of 12.
        let err = make_splits(&toy(8), &sp).unwrap_err();
        assert!(err.to_string().contains("need at least"), "{}", err);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let sp = SplitSpec { fractions: (0.5, 0.4, 0.2), ..spec() };
        assert!(make_splits(&toy(20), &sp).is_err());
    }
}
