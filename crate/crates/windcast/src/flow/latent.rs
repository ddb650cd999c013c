//! Trainable Gaussian-mixture density at the latent end of the flow.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::Array;

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    /// Component weights as free logits; softmax normalizes them.
    logits: Vec<f64>,
    means: Vec<Array>,
    log_sds: Vec<Array>,
}

impl GaussianMixture {
    /// Equal weights, unit scales, means scattered as N(0, 0.5^2 I).
    pub fn init(dim: usize, components: usize, rng: &mut ChaCha20Rng) -> Result<Self> {
        if dim == 0 || components == 0 {
            return Err(Error::InvalidArgument("mixture needs positive dim and K".into()));
        }
        let means = (0..components)
            .map(|_| {
                let data: Vec<f64> =
                    (0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
                Array::vector(data).expect("mean shape")
            })
            .collect();
        Ok(Self {
            dim,
            logits: vec![0.0; components],
            means,
            log_sds: vec![Array::zeros(vec![dim]); components],
        })
    }

    pub fn from_parts(
        dim: usize,
        logits: Vec<f64>,
        means: Vec<Array>,
        log_sds: Vec<Array>,
    ) -> Result<Self> {
        let k = logits.len();
        if k == 0 || means.len() != k || log_sds.len() != k {
            return Err(Error::Shape("mixture component lists must align".into()));
        }
        for (mu, ls) in means.iter().zip(&log_sds) {
            if mu.shape() != [dim] || ls.shape() != [dim] {
                return Err(Error::Shape("mixture component dim mismatch".into()));
            }
        }
        Ok(Self { dim, logits, means, log_sds })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn means(&self) -> &[Array] {
        &self.means
    }

    pub fn log_sds(&self) -> &[Array] {
        &self.log_sds
    }

    /// Softmax of the logits.
    pub fn weights(&self) -> Vec<f64> {
        let top = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Log density at one point, via log-sum-exp over components.
    pub fn logpdf(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.dim, "latent point dim mismatch");
        let log_weights = self.log_weights();
        let mut terms = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let mu = self.means[k].data();
            let ls = self.log_sds[k].data();
            let mut quad = 0.0;
            let mut log_norm = 0.0;
            for j in 0..self.dim {
                let z = (w[j] - mu[j]) / ls[j].exp();
                quad += z * z;
                log_norm += ls[j];
            }
            terms.push(log_weights[k] - log_norm - 0.5 * (self.dim as f64) * LN_2PI - 0.5 * quad);
        }
        log_sum_exp(&terms)
    }

    pub fn logpdf_batch(&self, w: &Array) -> Vec<f64> {
        (0..w.nrows()).map(|i| self.logpdf(w.row(i))).collect()
    }

    fn log_weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| l - lse).collect()
    }

    /// Parameter order: logits, then mean/log-sd pairs per component.
    pub fn params(&self) -> Vec<Array> {
        let mut out = vec![Array::vector(self.logits.clone()).expect("logit shape")];
        for k in 0..self.components() {
            out.push(self.means[k].clone());
            out.push(self.log_sds[k].clone());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        1 + 2 * self.components()
    }

    pub fn load_params(&mut self, params: &[Array], cursor: &mut usize) -> Result<()> {
        if params.len() < *cursor + self.param_count() {
            return Err(Error::Shape("too few parameter blocks for the mixture".into()));
        }
        let logits = params[*cursor].clone();
        if logits.shape() != [self.components()] {
            return Err(Error::Shape("logit count changed".into()));
        }
        *cursor += 1;
        self.logits = logits.into_data();
        for k in 0..self.components() {
            let mu = params[*cursor].clone();
            let ls = params[*cursor + 1].clone();
            *cursor += 2;
            if mu.shape() != [self.dim] || ls.shape() != [self.dim] {
                return Err(Error::Shape(format!("component {} dim changed", k)));
            }
            self.means[k] = mu;
            self.log_sds[k] = ls;
        }
        Ok(())
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}
