//! Likelihood training of the flow with periodic full-model checkpoints.
//!
//! The loss is the negative mean log-likelihood of a minibatch in
//! standardized joint coordinates. After a warmup phase the loop snapshots
//! the full model at a fixed cadence; the forecast stage later picks the
//! snapshot with the best calibration on held-out data. A non-finite loss
//! rolls the parameters back to the last snapshot and halves the learning
//! rate, at most twice, before giving up.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::ExampleSet;
use crate::dimred::Reducer;
use crate::error::{Error, Result};
use crate::flow::coupling::{C_BOUND, C_MARGIN};
use crate::flow::latent::LN_2PI;
use crate::flow::model::FlowModel;
use crate::numeric::{place_cols, stack_cols, AdamConfig, AdamState, Array, Tape, Var};

#[derive(Debug, Clone)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate decays geometrically to this fraction of its
    /// starting value by the final step; 1.0 keeps it constant. Values
    /// around 0.05 quiet the late-stage parameter noise that a fixed-rate
    /// Adam run never sheds.
    pub final_lr_fraction: f64,
    /// Steps before the first checkpoint window opens.
    pub warmup: usize,
    pub checkpoint_every: usize,
    /// Coupling pairs; each pair is two layers covering both halves.
    pub layer_pairs: usize,
    pub theta_depth: usize,
    pub theta_width: usize,
    pub mixture_components: usize,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1200,
            batch_size: 150,
            learning_rate: 0.01,
            final_lr_fraction: 1.0,
            warmup: 300,
            checkpoint_every: 100,
            layer_pairs: 1,
            theta_depth: 7,
            theta_width: 32,
            mixture_components: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowCheckpoint {
    pub step: usize,
    pub model: FlowModel,
}

#[derive(Debug)]
pub struct TrainedFlow {
    /// Parameters after the final step.
    pub model: FlowModel,
    /// Snapshots at the checkpoint cadence, oldest first.
    pub checkpoints: Vec<FlowCheckpoint>,
    /// Batch loss at the start of each completed step.
    pub loss_history: Vec<f64>,
}

/// Builds the negative mean log-likelihood graph for one standardized batch.
/// `params` must follow the order of `FlowModel::params`.
fn build_loss(model: &FlowModel, params: &[Var], tape: &Tape, batch: &Array) -> Var {
    let n = model.dim();
    let rows = batch.nrows();
    let mut cursor = 0;
    let mut w = tape.constant(batch.clone());
    let mut total_logdet: Option<Var> = None;

    for layer in model.layers() {
        let vb = w.select_cols(layer.conditioned());
        let depth = layer.net().depth();
        let mut hidden = vb.matmul(&params[cursor]).add_row(&params[cursor + 1]).relu();
        cursor += 2;
        for _ in 1..depth {
            hidden = hidden.matmul(&params[cursor]).add_row(&params[cursor + 1]).relu();
            cursor += 2;
        }
        let theta = hidden
            .matmul(&params[cursor])
            .add_row(&params[cursor + 1])
            .add(&vb.matmul(&params[cursor + 2]));
        cursor += 3;

        let mut parts: Vec<(Vec<usize>, Var)> = vec![(layer.conditioned().to_vec(), vb)];
        let mut logdet_parts: Vec<(Vec<usize>, Var)> = Vec::new();
        for (i, &coord) in layer.transformed().iter().enumerate() {
            let base = 5 * i;
            let a = theta.select_cols(&[base]).exp();
            let b = theta.select_cols(&[base + 1]).exp();
            let c_gate = theta.select_cols(&[base + 2]).tanh();
            let d = theta.select_cols(&[base + 3]).exp();
            let g = theta.select_cols(&[base + 4]);
            let c = a.div(&d).mul(&c_gate).mul_c(C_BOUND * (1.0 - C_MARGIN));
            let x = w.select_cols(&[coord]);
            let u = x.mul(&d).add(&g);
            let den = u.mul(&u).add_c(1.0);
            let hx = x.mul(&a).add(&b).add(&c.div(&den));
            let slope = a.sub(&c.mul(&d).mul(&u).mul_c(2.0).div(&den.mul(&den)));
            parts.push((vec![coord], hx));
            logdet_parts.push((vec![i], slope.ln()));
        }
        w = place_cols(n, &parts);
        let layer_logdet = place_cols(layer.transformed().len(), &logdet_parts).row_sum();
        total_logdet = Some(match total_logdet {
            Some(t) => t.add(&layer_logdet),
            None => layer_logdet,
        });
    }

    let logits = &params[cursor];
    cursor += 1;
    let lse = logits.logsumexp_all();
    let mut terms = Vec::with_capacity(model.latent().components());
    for k in 0..model.latent().components() {
        let mu = &params[cursor];
        let log_sd = &params[cursor + 1];
        cursor += 2;
        let z = w.sub_row(mu).div_row(&log_sd.exp());
        let quad = z.mul(&z).row_sum().mul_c(-0.5);
        let coeff = logits
            .get(k)
            .sub(&lse)
            .sub(&log_sd.sum())
            .add_c(-0.5 * n as f64 * LN_2PI);
        terms.push(quad.add_scalar(&coeff));
    }
    debug_assert_eq!(cursor, params.len(), "parameter walk must consume every block");
    let latent_ll = stack_cols(&terms).logsumexp_rows();
    let ll = latent_ll.add(&total_logdet.expect("at least one layer"));
    ll.sum().mul_c(-1.0 / rows as f64)
}

fn rows_subset(a: &Array, rows: &[usize]) -> Array {
    let cols = a.ncols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(a.row(r));
    }
    Array::matrix(rows.len(), cols, data).expect("subset keeps the column count")
}

/// Joins responses and reduced predictors and trains on the joint vectors.
pub fn train_flow(
    jm_train: &ExampleSet,
    validation: &ExampleSet,
    reducer: &Reducer,
    cfg: &FlowTrainConfig,
) -> Result<TrainedFlow> {
    if jm_train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument(
            "flow training needs nonempty train and validation sets".into(),
        ));
    }
    let reduced = reducer.apply_batch(&jm_train.predictors)?;
    let p = jm_train.responses.ncols();
    let m = reduced.ncols();
    let n_rows = jm_train.len();
    let mut data = Vec::with_capacity(n_rows * (p + m));
    for i in 0..n_rows {
        data.extend_from_slice(jm_train.responses.row(i));
        data.extend_from_slice(reduced.row(i));
    }
    let joint = Array::matrix(n_rows, p + m, data)?;
    train_flow_on_joint(&joint, p, cfg)
}

/// Trains on raw joint vectors whose first `p` columns are the response.
pub fn train_flow_on_joint(joint: &Array, p: usize, cfg: &FlowTrainConfig) -> Result<TrainedFlow> {
    if !joint.is_matrix() {
        return Err(Error::Shape("joint data must be a matrix".into()));
    }
    let (rows, n) = (joint.nrows(), joint.ncols());
    if p == 0 || p >= n {
        return Err(Error::InvalidArgument(format!(
            "response width {} must lie strictly inside the joint width {}",
            p, n
        )));
    }
    if rows < 3 {
        return Err(Error::InvalidArgument("need at least 3 joint vectors".into()));
    }
    if cfg.steps == 0 || cfg.checkpoint_every == 0 {
        return Err(Error::InvalidArgument("steps and checkpoint cadence must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive and finite".into()));
    }
    if !(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0) {
        return Err(Error::InvalidArgument(
            "final learning-rate fraction must lie in (0, 1]".into(),
        ));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidArgument("batch size must be at least 2".into()));
    }
    if !joint.all_finite() {
        return Err(Error::NonFinite("joint training data".into()));
    }

    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    for i in 0..rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += joint.at2(i, j);
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    for i in 0..rows {
        for (j, s) in sd.iter_mut().enumerate() {
            let d = joint.at2(i, j) - mean[j];
            *s += d * d;
        }
    }
    for (j, s) in sd.iter_mut().enumerate() {
        *s = (*s / (rows as f64 - 1.0)).sqrt();
        if !(*s > 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "joint coordinate {} is constant; its density is degenerate",
                j
            )));
        }
    }
    let mut standardized = joint.clone();
    for i in 0..rows {
        for j in 0..n {
            let v = (standardized.at2(i, j) - mean[j]) / sd[j];
            standardized.set2(i, j, v);
        }
    }

    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut batch_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(1);

    let mut model = FlowModel::init(
        p,
        n - p,
        cfg.layer_pairs,
        cfg.theta_depth,
        cfg.theta_width,
        cfg.mixture_components,
        mean,
        sd,
        &mut init_rng,
    )?;

    let mut params = model.params();
    let mut adam = AdamState::new(&params);
    let mut lr = cfg.learning_rate;
    let batch_size = cfg.batch_size.min(rows);

    let mut checkpoints: Vec<FlowCheckpoint> = Vec::new();
    let mut loss_history: Vec<f64> = Vec::new();
    // Rollback target: the latest checkpoint, or the initial state.
    let mut last_good: (Vec<Array>, usize) = (params.clone(), 0);
    let mut rollbacks = 0usize;

    let mut step = 1usize;
    while step <= cfg.steps {
        let batch = if batch_size == rows {
            standardized.clone()
        } else {
            let rows_pick: Vec<usize> = sample(&mut batch_rng, rows, batch_size).into_vec();
            rows_subset(&standardized, &rows_pick)
        };
        let tape = Tape::new();
        let pvars: Vec<Var> = params.iter().map(|a| tape.param(a.clone())).collect();
        let loss = build_loss(&model, &pvars, &tape, &batch);
        let value = loss.scalar_value();
        if !value.is_finite() {
            rollbacks += 1;
            if rollbacks > 2 {
                return Err(Error::Diverged(format!(
                    "flow loss went non-finite at step {} after {} rollbacks",
                    step, rollbacks - 1
                )));
            }
            lr *= 0.5;
            params = last_good.0.clone();
            adam = AdamState::new(&params);
            loss_history.truncate(last_good.1);
            checkpoints.retain(|c| c.step <= last_good.1);
            step = last_good.1 + 1;
            continue;
        }
        loss_history.push(value);
        let grads_all = tape.gradients(&loss)?;
        let grads: Vec<Array> = pvars
            .iter()
            .map(|v| match grads_all.wrt(v) {
                Some(g) => g.clone(),
                None => Array::zeros(v.shape().to_vec()),
            })
            .collect();
        // Geometric decay from lr to lr * final_lr_fraction across the run;
        // rollback halvings scale the whole schedule down with it.
        let progress = if cfg.steps > 1 { (step - 1) as f64 / (cfg.steps - 1) as f64 } else { 0.0 };
        let step_lr = lr * cfg.final_lr_fraction.powf(progress);
        adam.update(
            &AdamConfig { learning_rate: step_lr, ..AdamConfig::default() },
            &mut params,
            &grads,
        );

        if step > cfg.warmup && (step - cfg.warmup) % cfg.checkpoint_every == 0 {
            let mut snap = model.clone();
            snap.load_params(&params)?;
            snap.set_step(step);
            checkpoints.push(FlowCheckpoint { step, model: snap });
            last_good = (params.clone(), step);
        }
        step += 1;
    }

    model.load_params(&params)?;
    model.set_step(cfg.steps);
    Ok(TrainedFlow { model, checkpoints, loss_history })
}
