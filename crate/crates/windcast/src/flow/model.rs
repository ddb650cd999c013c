//! The invertible joint density model over (response, reduced predictors).
//!
//! Coupling layers alternate which half of the coordinates is transformed:
//! odd layers push the response coordinates through elementwise monotone
//! maps whose parameters are produced from the reduced predictors, even
//! layers do the reverse. A trainable Gaussian mixture sits at the latent
//! end. The model stores the joint standardization used at training time;
//! densities reported in data coordinates include its constant Jacobian.

use serde::{Deserialize, Serialize};

use crate::dimred::reducer::ParamDoc;
use crate::error::{Error, Result};
use crate::flow::coupling::{constrain_theta, h_deriv, h_eval, h_invert};
use crate::flow::latent::GaussianMixture;
use crate::flow::theta::ThetaNet;
use crate::numeric::Array;
use rand_chacha::ChaCha20Rng;

pub const FLOW_VERSION: &str = "flow-v1";

/// Transformed coordinates past this magnitude count as numeric overflow.
/// No standardized data coordinate comes anywhere near it, and values beyond
/// it risk infinities inside the next conditioning net.
const OVERFLOW_LIMIT: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    /// Coordinates pushed through the elementwise maps.
    transformed: Vec<usize>,
    /// Coordinates passed through unchanged and fed to the net.
    conditioned: Vec<usize>,
    net: ThetaNet,
}

impl CouplingLayer {
    pub fn new(transformed: Vec<usize>, conditioned: Vec<usize>, net: ThetaNet) -> Result<Self> {
        let n = transformed.len() + conditioned.len();
        let mut seen = vec![false; n];
        for &c in transformed.iter().chain(&conditioned) {
            if c >= n || seen[c] {
                return Err(Error::InvalidArgument(
                    "coupling halves must partition the coordinates".into(),
                ));
            }
            seen[c] = true;
        }
        if transformed.is_empty() || conditioned.is_empty() {
            return Err(Error::InvalidArgument("both coupling halves must be nonempty".into()));
        }
        if net.input_dim() != conditioned.len() || net.output_dim() != 5 * transformed.len() {
            return Err(Error::Shape(format!(
                "conditioning net is {}->{}, layer needs {}->{}",
                net.input_dim(),
                net.output_dim(),
                conditioned.len(),
                5 * transformed.len()
            )));
        }
        Ok(Self { transformed, conditioned, net })
    }

    pub fn transformed(&self) -> &[usize] {
        &self.transformed
    }

    pub fn conditioned(&self) -> &[usize] {
        &self.conditioned
    }

    pub fn net(&self) -> &ThetaNet {
        &self.net
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    p: usize,
    m: usize,
    layers: Vec<CouplingLayer>,
    latent: GaussianMixture,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Training step this snapshot was taken at; 0 before any training.
    step: usize,
}

fn cols_subset(a: &Array, idx: &[usize]) -> Array {
    let mut data = Vec::with_capacity(a.nrows() * idx.len());
    for i in 0..a.nrows() {
        let row = a.row(i);
        for &j in idx {
            data.push(row[j]);
        }
    }
    Array::matrix(a.nrows(), idx.len(), data).expect("column subset shape")
}

impl FlowModel {
    pub fn new(
        p: usize,
        m: usize,
        layers: Vec<CouplingLayer>,
        latent: GaussianMixture,
        mean: Vec<f64>,
        scale: Vec<f64>,
        step: usize,
    ) -> Result<Self> {
        let n = p + m;
        if p == 0 || m == 0 {
            return Err(Error::InvalidArgument("joint dims must both be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("need at least one coupling layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.transformed.len() + layer.conditioned.len() != n {
                return Err(Error::Shape(format!("layer {} does not cover {} coordinates", i, n)));
            }
        }
        if latent.dim() != n {
            return Err(Error::Shape("latent dimension must match p + m".into()));
        }
        if mean.len() != n || scale.len() != n {
            return Err(Error::Shape("standardization vectors must have length p + m".into()));
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("standardization scales must be positive".into()));
        }
        Ok(Self { p, m, layers, latent, mean, scale, step })
    }

    /// Alternating coupling pairs: response transformed first, then the
    /// reduced predictors, repeated `pairs` times.
    pub fn init(
        p: usize,
        m: usize,
        pairs: usize,
        depth: usize,
        width: usize,
        components: usize,
        mean: Vec<f64>,
        scale: Vec<f64>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if pairs == 0 {
            return Err(Error::InvalidArgument("need at least one coupling pair".into()));
        }
        let response: Vec<usize> = (0..p).collect();
        let reduced: Vec<usize> = (p..p + m).collect();
        let mut layers = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            layers.push(CouplingLayer::new(
                response.clone(),
                reduced.clone(),
                ThetaNet::init(m, 5 * p, depth, width, rng)?,
            )?);
            layers.push(CouplingLayer::new(
                reduced.clone(),
                response.clone(),
                ThetaNet::init(p, 5 * m, depth, width, rng)?,
            )?);
        }
        let latent = GaussianMixture::init(p + m, components, rng)?;
        Self::new(p, m, layers, latent, mean, scale, 0)
    }

    pub fn response_dim(&self) -> usize {
        self.p
    }

    pub fn reduced_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.p + self.m
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn latent(&self) -> &GaussianMixture {
        &self.latent
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.scale)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn standardize_batch(&self, raw: &Array) -> Result<Array> {
        if !raw.is_matrix() || raw.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "joint vectors must be rows of length {}",
                self.dim()
            )));
        }
        let mut out = raw.clone();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                let v = (out.at2(i, j) - self.mean[j]) / self.scale[j];
                out.set2(i, j, v);
            }
        }
        Ok(out)
    }

    /// Pushes standardized points to the latent side. Returns the mapped
    /// batch and one log |det Jacobian| per row.
    pub fn forward_batch(&self, v: &Array) -> Result<(Array, Vec<f64>)> {
        if !v.is_matrix() || v.ncols() != self.dim() {
            return Err(Error::Shape(format!("points must be rows of length {}", self.dim())));
        }
        if !v.all_finite() {
            return Err(Error::NonFinite("flow input".into()));
        }
        let mut w = v.clone();
        let mut logdet = vec![0.0; v.nrows()];
        // Rows whose transform overflows are parked at zero with log density
        // stamped to -inf: a coordinate that far outside the trained range
        // has true density below the smallest positive float, and one such
        // row must not poison the rest of the batch.
        let mut dead = vec![false; v.nrows()];
        for layer in &self.layers {
            let vb = cols_subset(&w, &layer.conditioned);
            let theta_raw = layer.net.eval_batch(&vb);
            for row in 0..w.nrows() {
                if dead[row] {
                    continue;
                }
                let raw_row = theta_raw.row(row);
                let mut bad = false;
                for (i, &coord) in layer.transformed.iter().enumerate() {
                    let theta = constrain_theta(&raw_row[5 * i..5 * i + 5]);
                    let x = w.at2(row, coord);
                    let y = h_eval(&theta, x);
                    if !y.is_finite() || y.abs() > OVERFLOW_LIMIT {
                        bad = true;
                        break;
                    }
                    w.set2(row, coord, y);
                    logdet[row] += h_deriv(&theta, x).ln();
                }
                if bad || !logdet[row].is_finite() {
                    dead[row] = true;
                    for c in 0..w.ncols() {
                        w.set2(row, c, 0.0);
                    }
                    logdet[row] = f64::NEG_INFINITY;
                }
            }
        }
        Ok((w, logdet))
    }

    /// Pulls one latent-side point back, inverting the layers in reverse.
    pub fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.dim() {
            return Err(Error::Shape(format!("point must have length {}", self.dim())));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow inverse input".into()));
        }
        let mut v = w.to_vec();
        for layer in self.layers.iter().rev() {
            let vb: Vec<f64> = layer.conditioned.iter().map(|&j| v[j]).collect();
            let theta_raw =
                layer.net.eval_batch(&Array::matrix(1, vb.len(), vb).expect("row shape"));
            let raw_row = theta_raw.row(0);
            for (i, &coord) in layer.transformed.iter().enumerate() {
                let theta = constrain_theta(&raw_row[5 * i..5 * i + 5]);
                v[coord] = h_invert(&theta, v[coord], coord)?;
            }
        }
        Ok(v)
    }

    /// Per-row log-likelihood of standardized points.
    pub fn loglik_standardized(&self, v: &Array) -> Result<Vec<f64>> {
        let (w, logdet) = self.forward_batch(v)?;
        let latent = self.latent.logpdf_batch(&w);
        Ok(latent.iter().zip(&logdet).map(|(l, d)| l + d).collect())
    }

    /// Mean log-likelihood of raw joint vectors in standardized coordinates.
    pub fn nf_loglik(&self, raw: &Array) -> Result<f64> {
        if raw.nrows() == 0 {
            return Err(Error::InvalidArgument("likelihood of an empty batch".into()));
        }
        let ll = self.loglik_standardized(&self.standardize_batch(raw)?)?;
        Ok(ll.iter().sum::<f64>() / ll.len() as f64)
    }

    /// Log densities of raw joint vectors in data coordinates: the
    /// standardized log-likelihood plus the constant standardization logdet.
    pub fn log_density_batch(&self, raw: &Array) -> Result<Vec<f64>> {
        let shift: f64 = self.scale.iter().map(|s| s.ln()).sum();
        let ll = self.loglik_standardized(&self.standardize_batch(raw)?)?;
        Ok(ll.into_iter().map(|l| l - shift).collect())
    }

    /// Draws joint samples in data coordinates by inverting latent draws.
    pub fn sample(&self, count: usize, rng: &mut ChaCha20Rng) -> Result<Array> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let n = self.dim();
        let weights = self.latent.weights();
        let mut out = Vec::with_capacity(count * n);
        for _ in 0..count {
            let pick: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut k = weights.len() - 1;
            for (i, &wk) in weights.iter().enumerate() {
                acc += wk;
                if pick < acc {
                    k = i;
                    break;
                }
            }
            let mu = self.latent.means()[k].data();
            let ls = self.latent.log_sds()[k].data();
            let w: Vec<f64> = (0..n)
                .map(|j| mu[j] + ls[j].exp() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let v = self.inverse(&w)?;
            for (j, vj) in v.iter().enumerate() {
                out.push(vj * self.scale[j] + self.mean[j]);
            }
        }
        Array::matrix(count, n, out)
    }

    /// All trainable parameters in a fixed order: each layer's net, then
    /// the latent mixture.
    pub fn params(&self) -> Vec<Array> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.net.params());
        }
        out.extend(self.latent.params());
        out
    }

    pub fn load_params(&mut self, params: &[Array]) -> Result<()> {
        let mut cursor = 0;
        for layer in &mut self.layers {
            layer.net.load_params(params, &mut cursor)?;
        }
        self.latent.load_params(params, &mut cursor)?;
        if cursor != params.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks supplied, {} consumed",
                params.len(),
                cursor
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let mut params = Vec::new();
                let blocks = layer.net.params();
                let depth = layer.net.depth();
                for i in 0..depth {
                    params.push(ParamDoc::matrix(&format!("trunk_weights_{}", i), &blocks[2 * i]));
                    params.push(ParamDoc::vector(
                        &format!("trunk_bias_{}", i),
                        blocks[2 * i + 1].data(),
                    ));
                }
                params.push(ParamDoc::matrix("output_weights", &blocks[2 * depth]));
                params.push(ParamDoc::vector("output_bias", blocks[2 * depth + 1].data()));
                params.push(ParamDoc::matrix("skip_weights", &blocks[2 * depth + 2]));
                LayerDoc {
                    transformed: layer.transformed.clone(),
                    conditioned: layer.conditioned.clone(),
                    depth,
                    width: layer.net.width(),
                    params,
                }
            })
            .collect();
        let latent = LatentDoc {
            logits: self.latent.logits().to_vec(),
            components: (0..self.latent.components())
                .map(|k| ComponentDoc {
                    mean: self.latent.means()[k].data().to_vec(),
                    log_sd: self.latent.log_sds()[k].data().to_vec(),
                })
                .collect(),
        };
        let doc = FlowDoc {
            version: FLOW_VERSION.into(),
            step: self.step,
            response_dim: self.p,
            reduced_dim: self.m,
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            layers,
            latent,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FlowDoc = serde_json::from_str(text)?;
        if doc.version != FLOW_VERSION {
            return Err(Error::VersionMismatch {
                expected: FLOW_VERSION.into(),
                found: doc.version,
            });
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for layer in &doc.layers {
            let take = |name: &str| -> Result<&ParamDoc> {
                layer
                    .params
                    .iter()
                    .find(|p| p.name == name)
                    .ok_or_else(|| Error::Data(format!("missing parameter {:?}", name)))
            };
            let mut weights = Vec::with_capacity(layer.depth);
            let mut biases = Vec::with_capacity(layer.depth);
            for i in 0..layer.depth {
                weights.push(take(&format!("trunk_weights_{}", i))?.to_matrix()?);
                biases.push(Array::vector(take(&format!("trunk_bias_{}", i))?.to_vector()?)?);
            }
            let net = ThetaNet::from_parts(
                weights,
                biases,
                take("output_weights")?.to_matrix()?,
                Array::vector(take("output_bias")?.to_vector()?)?,
                take("skip_weights")?.to_matrix()?,
            )?;
            layers.push(CouplingLayer::new(
                layer.transformed.clone(),
                layer.conditioned.clone(),
                net,
            )?);
        }
        let n = doc.response_dim + doc.reduced_dim;
        let mut means = Vec::new();
        let mut log_sds = Vec::new();
        for comp in &doc.latent.components {
            means.push(Array::vector(comp.mean.clone())?);
            log_sds.push(Array::vector(comp.log_sd.clone())?);
        }
        let latent = GaussianMixture::from_parts(n, doc.latent.logits.clone(), means, log_sds)?;
        Self::new(
            doc.response_dim,
            doc.reduced_dim,
            layers,
            latent,
            doc.mean,
            doc.scale,
            doc.step,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct FlowDoc {
    version: String,
    step: usize,
    response_dim: usize,
    reduced_dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<LayerDoc>,
    latent: LatentDoc,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    transformed: Vec<usize>,
    conditioned: Vec<usize>,
    depth: usize,
    width: usize,
    params: Vec<ParamDoc>,
}

#[derive(Serialize, Deserialize)]
struct LatentDoc {
    logits: Vec<f64>,
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    mean: Vec<f64>,
    log_sd: Vec<f64>,
}
