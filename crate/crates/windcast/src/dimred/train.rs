//! Gradient training of the affine and shallow-net reduction maps.
//!
//! The loss is the log-determinant of the conditional response covariance
//! after regressing on the map output; driving it down raises the
//! normal-theory information carried by the reduced coordinates. The map
//! output is re-centered and re-scaled inside the graph on every batch, so
//! the loss is invariant to affine reparameterizations of the output and
//! needs no separate scale penalty. The returned reducer emits the raw
//! (unstandardized) map output; downstream consumers standardize jointly.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::ExampleSet;
use crate::dimred::baselines::{column_stats, CONSTANT_SD};
use crate::dimred::reducer::{Reducer, ReducerMap};
use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, AdamState, Array, Tape};

/// Map family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReducerArch {
    Affine,
    ShallowNet { hidden_width: usize },
}

/// How many examples enter each covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Full batch up to 20000 examples, minibatches of 2048 beyond that.
    Auto,
    Full,
    Minibatch(usize),
}

const AUTO_FULL_LIMIT: usize = 20000;
const AUTO_MINIBATCH: usize = 2048;

#[derive(Debug, Clone)]
pub struct ReducerTrainConfig {
    pub arch: ReducerArch,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Relative ridge: the solve sees tt + (jitter * tr(tt) / m) I, with the
    /// coefficient read off the current value and kept out of the gradient.
    pub jitter: f64,
    pub seed: u64,
    pub batch: BatchMode,
}

impl Default for ReducerTrainConfig {
    fn default() -> Self {
        Self {
            arch: ReducerArch::ShallowNet { hidden_width: 64 },
            iterations: 2000,
            learning_rate: 0.01,
            jitter: 1e-6,
            seed: 0,
            batch: BatchMode::Auto,
        }
    }
}

#[derive(Debug)]
pub struct TrainedReducer {
    pub reducer: Reducer,
    /// Loss before each update, plus one entry after the last update. Under
    /// minibatching each entry is that step's batch loss.
    pub history: Vec<f64>,
    pub initial_objective: f64,
    /// Best loss seen; the returned reducer is the iterate that scored it.
    pub final_objective: f64,
}

/// Loss and parameter gradients at one batch.
///
/// `x` is the standardized predictor batch, `yc` the centered response
/// batch, `syy` its covariance. Gradients are skipped when `want_grads` is
/// false or the loss comes out non-finite.
fn batch_loss(
    arch: ReducerArch,
    x: &Array,
    yc: &Array,
    syy: &Array,
    params: &[Array],
    jitter: f64,
    want_grads: bool,
) -> Result<(f64, Vec<Array>)> {
    let b = x.nrows();
    let m = match arch {
        ReducerArch::Affine => params[0].ncols(),
        ReducerArch::ShallowNet { .. } => params[2].ncols(),
    };
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let ycv = tape.constant(yc.clone());
    let syyv = tape.constant(syy.clone());
    let pv: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();

    let t_raw = match arch {
        ReducerArch::Affine => xv.matmul(&pv[0]).add_row(&pv[1]),
        ReducerArch::ShallowNet { .. } => {
            let hidden = xv.matmul(&pv[0]).add_row(&pv[1]).tanh();
            hidden.matmul(&pv[2]).add(&xv.matmul(&pv[3])).add_row(&pv[4])
        }
    };
    // Batch gauge: center and scale the map output before the covariances.
    let t_mean = t_raw.col_mean();
    let tc = t_raw.sub_row(&t_mean);
    let var = tc.mul(&tc).col_mean().mul_c(b as f64 / (b as f64 - 1.0)).add_c(1e-12);
    let t_std = tc.div_row(&var.sqrt());

    let norm = 1.0 / (b as f64 - 1.0);
    let syt = ycv.t().matmul(&t_std).mul_c(norm);
    let stt = t_std.t().matmul(&t_std).mul_c(norm);

    let trace: f64 = (0..m).map(|i| stt.value().at2(i, i)).sum();
    let lambda = jitter * trace / m as f64;
    let stt_j = stt.add(&tape.constant(Array::eye(m).scale(lambda)));

    let solved = stt_j.solve_pd(&syt.t())?;
    let schur = syyv.sub(&syt.matmul(&solved));
    let loss = schur.log_det_pd()?;
    let value = loss.scalar_value();

    let mut grads = Vec::new();
    if want_grads && value.is_finite() {
        let g = tape.gradients(&loss)?;
        for p in &pv {
            grads.push(match g.wrt(p) {
                Some(a) => a.clone(),
                None => Array::zeros(p.shape().to_vec()),
            });
        }
    }
    Ok((value, grads))
}

fn init_params(arch: ReducerArch, d: usize, m: usize, rng: &mut ChaCha20Rng) -> Vec<Array> {
    let mut draw = |rows: usize, cols: usize, sd: f64| {
        let data: Vec<f64> =
            (0..rows * cols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Array::matrix(rows, cols, data).expect("init shape")
    };
    match arch {
        ReducerArch::Affine => {
            vec![draw(d, m, 0.5 / (d as f64).sqrt()), Array::zeros(vec![m])]
        }
        ReducerArch::ShallowNet { hidden_width: h } => vec![
            draw(d, h, 1.0 / (d as f64).sqrt()),
            Array::zeros(vec![h]),
            draw(h, m, 0.5 / (h as f64).sqrt()),
            draw(d, m, 0.5 / (d as f64).sqrt()),
            Array::zeros(vec![m]),
        ],
    }
}

fn build_reducer(
    arch: ReducerArch,
    d: usize,
    m: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    params: Vec<Array>,
) -> Result<Reducer> {
    let map = match arch {
        ReducerArch::Affine => {
            let mut it = params.into_iter();
            ReducerMap::Affine { w: it.next().unwrap(), b: it.next().unwrap().into_data() }
        }
        ReducerArch::ShallowNet { .. } => {
            let mut it = params.into_iter();
            ReducerMap::ShallowNet {
                w1: it.next().unwrap(),
                b1: it.next().unwrap().into_data(),
                w2: it.next().unwrap(),
                skip: it.next().unwrap(),
                b: it.next().unwrap().into_data(),
            }
        }
    };
    Reducer::new(d, m, mean, scale, map)
}

fn rows_subset(a: &Array, rows: &[usize]) -> Array {
    let cols = a.ncols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(a.row(r));
    }
    Array::matrix(rows.len(), cols, data).expect("subset keeps the column count")
}

/// Center the rows and return (centered, covariance).
fn center_and_cov(y: &Array) -> (Array, Array) {
    let (n, p) = (y.nrows(), y.ncols());
    let (mean, _) = column_stats(y);
    let mut yc = y.clone();
    for i in 0..n {
        for j in 0..p {
            let v = yc.at2(i, j) - mean[j];
            yc.set2(i, j, v);
        }
    }
    let cov = yc
        .transpose()
        .expect("matrix")
        .matmul(&yc)
        .expect("square product")
        .scale(1.0 / (n as f64 - 1.0));
    (yc, cov)
}

/// Fits a reduction map of the configured family to the example set.
///
/// Errors if the loss ever turns non-finite or a covariance solve breaks
/// down; the message reports the best loss reached before the failure.
pub fn train_reducer(set: &ExampleSet, m: usize, cfg: &ReducerTrainConfig) -> Result<TrainedReducer> {
    let x_raw = &set.predictors;
    let y_raw = &set.responses;
    let (n, d) = (x_raw.nrows(), x_raw.ncols());
    let p = y_raw.ncols();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("m = {} must lie in 1..={}", m, d)));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("need at least one training iteration".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive and finite".into()));
    }
    if !(cfg.jitter >= 0.0 && cfg.jitter.is_finite()) {
        return Err(Error::InvalidArgument("jitter must be nonnegative and finite".into()));
    }
    if let ReducerArch::ShallowNet { hidden_width } = cfg.arch {
        if hidden_width == 0 || hidden_width > 1024 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} outside 1..=1024",
                hidden_width
            )));
        }
    }
    let batch_size = match cfg.batch {
        BatchMode::Full => n,
        BatchMode::Minibatch(b) => b.min(n),
        BatchMode::Auto => {
            if n <= AUTO_FULL_LIMIT {
                n
            } else {
                AUTO_MINIBATCH
            }
        }
    };
    if batch_size < p + m + 1 {
        return Err(Error::InvalidArgument(format!(
            "batch of {} cannot support a {}+{} joint covariance",
            batch_size,
            p,
            m
        )));
    }

    // Standardize inputs once with training statistics; constant columns
    // collapse to zero behind a unit placeholder scale.
    let (mean, sd) = column_stats(x_raw);
    let scale: Vec<f64> = sd.iter().map(|&s| if s > CONSTANT_SD { s } else { 1.0 }).collect();
    let mut x_std = x_raw.clone();
    for i in 0..n {
        for j in 0..d {
            let v = (x_std.at2(i, j) - mean[j]) / scale[j];
            x_std.set2(i, j, v);
        }
    }

    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut batch_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);

    let mut params = init_params(cfg.arch, d, m, &mut init_rng);
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };

    let full_batch = batch_size >= n;
    let (full_yc, full_syy) = if full_batch {
        center_and_cov(y_raw)
    } else {
        (Array::zeros(vec![1, 1]), Array::zeros(vec![1, 1]))
    };

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut best_obj = f64::INFINITY;
    let mut best_step = 0usize;
    let mut best_params = params.clone();

    for step in 0..=cfg.iterations {
        let last = step == cfg.iterations;
        let outcome = if full_batch {
            batch_loss(cfg.arch, &x_std, &full_yc, &full_syy, &params, cfg.jitter, !last)
        } else {
            let rows: Vec<usize> = sample(&mut batch_rng, n, batch_size).into_vec();
            let xb = rows_subset(&x_std, &rows);
            let (yc, syy) = center_and_cov(&rows_subset(y_raw, &rows));
            batch_loss(cfg.arch, &xb, &yc, &syy, &params, cfg.jitter, !last)
        };
        let (value, grads) = outcome.map_err(|e| diverged(step, best_obj, best_step, &e))?;
        if !value.is_finite() {
            return Err(diverged(step, best_obj, best_step, &Error::NonFinite("loss".into())));
        }
        history.push(value);
        if value < best_obj {
            best_obj = value;
            best_step = step;
            best_params = params.clone();
        }
        if last {
            break;
        }
        adam.update(&adam_cfg, &mut params, &grads);
    }

    let reducer = build_reducer(cfg.arch, d, m, mean, scale, best_params)?;
    Ok(TrainedReducer {
        reducer,
        initial_objective: history[0],
        final_objective: best_obj,
        history,
    })
}

fn diverged(step: usize, best: f64, best_step: usize, cause: &Error) -> Error {
    Error::Diverged(format!(
        "reduction training broke down at step {} (best loss {:.6} at step {}): {}",
        step, best, best_step, cause
    ))
}
