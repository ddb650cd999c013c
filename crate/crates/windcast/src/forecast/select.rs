//! Early stopping by calibration: pick the training snapshot whose forecast
//! contours cover validation observations closest to nominal rates.

use crate::data::ExampleSet;
use crate::dimred::Reducer;
use crate::error::{Error, Result};
use crate::flow::{FlowCheckpoint, FlowModel};
use crate::forecast::calibration::{hit_rate, CalibrationReport};
use crate::forecast::grid::GridSpec;

/// The winning snapshot plus the per-checkpoint audit trail.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub model: FlowModel,
    pub step: usize,
    /// (training step, validation calibration) for every candidate, in the
    /// order given.
    pub reports: Vec<(usize, CalibrationReport)>,
}

/// Returns the checkpoint with the lowest validation calibration score.
/// Likelihood plays no role; exact ties go to the later training step.
pub fn select_checkpoint(
    checkpoints: &[FlowCheckpoint],
    reducer: &Reducer,
    validation: &ExampleSet,
    spec: &GridSpec,
) -> Result<SelectionOutcome> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("checkpoint selection needs at least one".into()));
    }
    let mut reports: Vec<(usize, CalibrationReport)> = Vec::with_capacity(checkpoints.len());
    let mut best: Option<usize> = None;
    for (idx, cp) in checkpoints.iter().enumerate() {
        let report = hit_rate(&cp.model, reducer, validation, spec)?;
        let better = match best {
            None => true,
            Some(b) => {
                let (best_score, best_step) = (reports[b].1.score, checkpoints[b].step);
                report.score < best_score || (report.score == best_score && cp.step >= best_step)
            }
        };
        reports.push((cp.step, report));
        if better {
            best = Some(idx);
        }
    }
    let best = best.expect("nonempty checkpoint list");
    Ok(SelectionOutcome {
        model: checkpoints[best].model.clone(),
        step: checkpoints[best].step,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Season;
    use crate::dimred::ReducerMap;
    use crate::forecast::grid::{GridAxis, GridSpec};
    use crate::numeric::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn identity_reducer() -> Reducer {
        Reducer::new(1, 1, vec![], vec![], ReducerMap::Select { indices: vec![0] }).unwrap()
    }

    /// Zeroed nets with unit-mean latent: y | t isotropic normal with the
    /// given standard deviation.
    fn isotropic_model(sd: f64) -> FlowModel {
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

    /// 90 responses near the origin, 10 at radius 4.5.
    fn ring_heavy_validation() -> ExampleSet {
        let n = 100;
        let mut resp = Vec::with_capacity(2 * n);
        for i in 0..n {
            let phi = std::f64::consts::TAU * i as f64 / n as f64;
            let r = if i % 10 == 0 { 4.5 } else { 0.5 };
            resp.push(r * phi.cos());
            resp.push(r * phi.sin());
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

    fn spec() -> GridSpec {
        GridSpec::new([
            GridAxis { lo: -6.0, hi: 6.0, cells: 96 },
            GridAxis { lo: -6.0, hi: 6.0, cells: 96 },
        ])
        .unwrap()
    }

    #[test]
    fn single_checkpoint_comes_back_unchanged() {
        let model = isotropic_model(1.0);
        let cps = vec![FlowCheckpoint { step: 400, model: model.clone() }];
        let outcome =
            select_checkpoint(&cps, &identity_reducer(), &ring_heavy_validation(), &spec())
                .unwrap();
        assert_eq!(outcome.step, 400);
        assert_eq!(outcome.model, model);
        assert_eq!(outcome.reports.len(), 1);
    }

    /// The narrow model fits the bulk better (higher likelihood) but its
    /// contours miss the far tail; the wide model's .954 contour catches it,
    /// scoring better calibration. Selection must follow calibration.
    #[test]
    fn calibration_beats_likelihood() {
        let narrow = isotropic_model(1.0);
        let wide = isotropic_model(2.0);
        let val = ring_heavy_validation();
        let reducer = identity_reducer();
        let spec = spec();

        // Construction sanity: narrow wins on likelihood.
        let joint = {
            let n = val.len();
            let mut data = Vec::with_capacity(3 * n);
            for i in 0..n {
                data.extend_from_slice(val.responses.row(i));
                data.push(0.0);
            }
            Array::matrix(n, 3, data).unwrap()
        };
        let ll_narrow = narrow.nf_loglik(&joint).unwrap();
        let ll_wide = wide.nf_loglik(&joint).unwrap();
        assert!(
            ll_narrow > ll_wide,
            "setup broken: narrow {} should out-score wide {} on likelihood",
            ll_narrow,
            ll_wide
        );

        let cps = vec![
            FlowCheckpoint { step: 400, model: narrow },
            FlowCheckpoint { step: 500, model: wide },
        ];
        let outcome = select_checkpoint(&cps, &reducer, &val, &spec).unwrap();
        let (s_narrow, s_wide) = (outcome.reports[0].1.score, outcome.reports[1].1.score);
        assert!(
            s_wide < s_narrow,
            "setup broken: wide ({}) should be better calibrated than narrow ({})",
            s_wide,
            s_narrow
        );
        assert_eq!(outcome.step, 500, "the better-calibrated snapshot wins");
    }

    #[test]
    fn exact_ties_go_to_the_later_step() {
        let model = isotropic_model(1.0);
        let cps = vec![
            FlowCheckpoint { step: 400, model: model.clone() },
            FlowCheckpoint { step: 500, model },
        ];
        let outcome =
            select_checkpoint(&cps, &identity_reducer(), &ring_heavy_validation(), &spec())
                .unwrap();
        assert_eq!(outcome.step, 500);
    }
}
