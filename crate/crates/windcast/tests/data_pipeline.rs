//! End-to-end properties of the data layer: window extraction is exact,
//! splits partition the pool, and the CSV form round-trips through disk.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use windcast::data::{build_examples, gen_synthetic, make_splits, Season, SplitSpec, SynthConfig};
use windcast::data::{GaussianVarConfig, GridSeries};

fn random_series(rng: &mut ChaCha20Rng, rows: usize, cols: usize, t: usize) -> GridSeries {
    let times: Vec<i64> = (0..t as i64).collect();
    let labels = vec![(2005, Season::Q4); t];
    let values: Vec<f64> = (0..t * rows * cols * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
    GridSeries::new(rows, cols, times, labels, values).unwrap()
}

#[test]
fn hundred_random_probes_recover_source_windows_exactly() {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    for _ in 0..5 {
        let rows = rng.gen_range(1..5);
        let cols = rng.gen_range(1..5);
        let lags = rng.gen_range(0..4usize);
        let t = rng.gen_range(lags + 2..lags + 30);
        let series = random_series(&mut rng, rows, cols, t);
        let center = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let set = build_examples(&series, lags, center).unwrap();
        assert_eq!(set.len(), t - lags - 1);
        for _ in 0..100 {
            let ex = rng.gen_range(0..set.len());
            let lag = rng.gen_range(0..=lags);
            let row = rng.gen_range(0..rows);
            let col = rng.gen_range(0..cols);
            let comp = rng.gen_range(0..2);
            // One slice starting at step 0: example ex is anchored at step
            // lags + ex, so lag L reads step lags + ex - L.
            let step = lags + ex - lag;
            let got = set.predictors.row(ex)[set.predictor_index(lag, row, col, comp)];
            let want = series.value(step, row, col, comp);
            assert!(
                got == want,
                "probe (example {}, lag {}, cell ({}, {}), comp {}) read {} instead of {}",
                ex,
                lag,
                row,
                col,
                comp,
                got,
                want
            );
            let resp = set.responses.row(ex);
            assert_eq!(resp[0], series.value(lags + ex + 1, center.0, center.1, 0));
            assert_eq!(resp[1], series.value(lags + ex + 1, center.0, center.1, 1));
        }
    }
}

#[test]
fn synthetic_series_survives_a_csv_round_trip() {
    let cfg = SynthConfig::GaussianVar(GaussianVarConfig {
        rows: 3,
        cols: 4,
        years: 2,
        steps_per_year: 30,
        ..Default::default()
    });
    let series = gen_synthetic(&cfg, 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    series.save_csv(&path).unwrap();
    let back = GridSeries::load_csv(&path).unwrap();
    assert_eq!(series, back, "CSV round trip must be bit-exact");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Whatever the pool size and fractions, no example index is lost or
    /// duplicated across the four split outputs.
    #[test]
    fn splits_partition_the_pool(
        per_year in 3usize..25,
        f_dr in 0.2f64..0.45,
        f_jm in 0.2f64..0.45,
        seed in 0u64..1000,
    ) {
        let mut prov = Vec::new();
        for year in 2010..2021 {
            for _ in 0..per_year {
                prov.push((year, Season::Q1));
            }
        }
        let n = prov.len();
        let preds: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let resps: Vec<f64> = (0..2 * n).map(|i| i as f64).collect();
        let examples = windcast::data::ExampleSet {
            predictors: windcast::numeric::Array::matrix(n, 1, preds).unwrap(),
            responses: windcast::numeric::Array::matrix(n, 2, resps).unwrap(),
            provenance: prov,
            lags: 0,
            center: (0, 0),
            lattice: (1, 1),
        };
        let spec = SplitSpec {
            test_year: 2020,
            test_season: Season::Q1,
            prior_years: 10,
            fractions: (f_dr, f_jm, 1.0 - f_dr - f_jm),
            seed,
        };
        let s = make_splits(&examples, &spec).unwrap();
        let mut ids: Vec<i64> = Vec::new();
        for part in [&s.dr_train, &s.jm_train, &s.validation, &s.test] {
            for i in 0..part.len() {
                ids.push(part.predictors.row(i)[0] as i64);
            }
        }
        ids.sort_unstable();
        let expected: Vec<i64> = (0..n as i64).collect();
        prop_assert_eq!(ids, expected);
    }
}
