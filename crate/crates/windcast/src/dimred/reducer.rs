//! The reduction map applied at forecast time, and its serialized form.
//!
//! Four kinds share one interface: trained affine and shallow-net maps
//! (which standardize their input with training-set statistics), a PCA
//! projection (standardized input), and raw coordinate selection. The
//! serialized form is a JSON document, version tag "reducer-v1", with flat
//! parameter arrays and declared shapes; floats survive the round trip
//! bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Array;

pub const REDUCER_VERSION: &str = "reducer-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducerKind {
    #[serde(rename = "affine")]
    Affine,
    #[serde(rename = "shallow-net")]
    ShallowNet,
    #[serde(rename = "pca")]
    Pca,
    #[serde(rename = "grid-pick")]
    GridPick,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReducerMap {
    /// x_std * w + b, w: d x m.
    Affine { w: Array, b: Vec<f64> },
    /// tanh(x_std * w1 + b1) * w2 + x_std * skip + b.
    ShallowNet { w1: Array, b1: Vec<f64>, w2: Array, skip: Array, b: Vec<f64> },
    /// rows * x_std, rows: m x d (principal directions).
    Projection { rows: Array },
    /// Raw coordinate selection, no standardization.
    Select { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reducer {
    input_dim: usize,
    output_dim: usize,
    /// Per-coordinate training mean/scale; empty for coordinate selection.
    mean: Vec<f64>,
    scale: Vec<f64>,
    map: ReducerMap,
}

impl Reducer {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        mean: Vec<f64>,
        scale: Vec<f64>,
        map: ReducerMap,
    ) -> Result<Self> {
        let r = Self { input_dim, output_dim, mean, scale, map };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        let (d, m) = (self.input_dim, self.output_dim);
        if m == 0 || d == 0 || m > d {
            return Err(Error::InvalidArgument(format!(
                "reduction must map a positive dimension down: d = {}, m = {}",
                d, m
            )));
        }
        let std_len = match &self.map {
            ReducerMap::Select { .. } => 0,
            _ => d,
        };
        if self.mean.len() != std_len || self.scale.len() != std_len {
            return Err(Error::Shape(format!(
                "standardization vectors must have length {}, got {}/{}",
                std_len,
                self.mean.len(),
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("standardization scales must be positive".into()));
        }
        match &self.map {
            ReducerMap::Affine { w, b } => {
                if w.shape() != [d, m] || b.len() != m {
                    return Err(Error::Shape("affine parameter shapes do not match dims".into()));
                }
            }
            ReducerMap::ShallowNet { w1, b1, w2, skip, b } => {
                let h = w1.ncols();
                if w1.shape() != [d, h]
                    || b1.len() != h
                    || w2.shape() != [h, m]
                    || skip.shape() != [d, m]
                    || b.len() != m
                {
                    return Err(Error::Shape("net parameter shapes do not match dims".into()));
                }
            }
            ReducerMap::Projection { rows } => {
                if rows.shape() != [m, d] {
                    return Err(Error::Shape("projection must be m x d".into()));
                }
            }
            ReducerMap::Select { indices } => {
                if indices.len() != m {
                    return Err(Error::Shape("selection must pick m coordinates".into()));
                }
                if indices.iter().any(|&i| i >= d) {
                    return Err(Error::InvalidArgument(
                        "selected coordinate outside the input dimension".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ReducerKind {
        match &self.map {
            ReducerMap::Affine { .. } => ReducerKind::Affine,
            ReducerMap::ShallowNet { .. } => ReducerKind::ShallowNet,
            ReducerMap::Projection { .. } => ReducerKind::Pca,
            ReducerMap::Select { .. } => ReducerKind::GridPick,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn map(&self) -> &ReducerMap {
        &self.map
    }

    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.scale)
    }

    /// Applies the map to one predictor vector. Panics if the length is
    /// wrong; callers validate data dimensions at the boundary.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "predictor length does not match the reducer");
        match &self.map {
            ReducerMap::Select { indices } => indices.iter().map(|&i| x[i]).collect(),
            ReducerMap::Affine { w, b } => {
                let xs = self.standardize(x);
                let mut out = b.clone();
                for (j, o) in out.iter_mut().enumerate() {
                    *o += xs.iter().enumerate().map(|(i, v)| v * w.at2(i, j)).sum::<f64>();
                }
                out
            }
            ReducerMap::ShallowNet { w1, b1, w2, skip, b } => {
                let xs = self.standardize(x);
                let h = b1.len();
                let mut hidden = b1.clone();
                for (k, hv) in hidden.iter_mut().enumerate() {
                    *hv += xs.iter().enumerate().map(|(i, v)| v * w1.at2(i, k)).sum::<f64>();
                    *hv = hv.tanh();
                }
                let mut out = b.clone();
                for (j, o) in out.iter_mut().enumerate() {
                    *o += (0..h).map(|k| hidden[k] * w2.at2(k, j)).sum::<f64>();
                    *o += xs.iter().enumerate().map(|(i, v)| v * skip.at2(i, j)).sum::<f64>();
                }
                out
            }
            ReducerMap::Projection { rows } => {
                let xs = self.standardize(x);
                (0..self.output_dim)
                    .map(|j| xs.iter().enumerate().map(|(i, v)| v * rows.at2(j, i)).sum())
                    .collect()
            }
        }
    }

    /// Applies the map to every row of an N x d matrix.
    pub fn apply_batch(&self, x: &Array) -> Result<Array> {
        if !x.is_matrix() || x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch must be N x {}, got {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        let n = x.nrows();
        let mut data = Vec::with_capacity(n * self.output_dim);
        for i in 0..n {
            data.extend(self.apply(x.row(i)));
        }
        Array::matrix(n, self.output_dim, data)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (mu, s))| (v - mu) / s)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let params = match &self.map {
            ReducerMap::Affine { w, b } => vec![
                ParamDoc::matrix("weights", w),
                ParamDoc::vector("bias", b),
            ],
            ReducerMap::ShallowNet { w1, b1, w2, skip, b } => vec![
                ParamDoc::matrix("hidden_weights", w1),
                ParamDoc::vector("hidden_bias", b1),
                ParamDoc::matrix("output_weights", w2),
                ParamDoc::matrix("skip_weights", skip),
                ParamDoc::vector("output_bias", b),
            ],
            ReducerMap::Projection { rows } => vec![ParamDoc::matrix("components", rows)],
            ReducerMap::Select { indices } => vec![ParamDoc {
                name: "indices".into(),
                shape: vec![indices.len()],
                data: indices.iter().map(|&i| i as f64).collect(),
            }],
        };
        let doc = ReducerDoc {
            version: REDUCER_VERSION.into(),
            kind: self.kind(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            params,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ReducerDoc = serde_json::from_str(text)?;
        if doc.version != REDUCER_VERSION {
            return Err(Error::VersionMismatch {
                expected: REDUCER_VERSION.into(),
                found: doc.version,
            });
        }
        let take = |name: &str| -> Result<&ParamDoc> {
            doc.params.iter().find(|p| p.name == name).ok_or_else(|| {
                Error::Data(format!("reducer document is missing parameter {:?}", name))
            })
        };
        let map = match doc.kind {
            ReducerKind::Affine => ReducerMap::Affine {
                w: take("weights")?.to_matrix()?,
                b: take("bias")?.data.clone(),
            },
            ReducerKind::ShallowNet => ReducerMap::ShallowNet {
                w1: take("hidden_weights")?.to_matrix()?,
                b1: take("hidden_bias")?.data.clone(),
                w2: take("output_weights")?.to_matrix()?,
                skip: take("skip_weights")?.to_matrix()?,
                b: take("output_bias")?.data.clone(),
            },
            ReducerKind::Pca => ReducerMap::Projection { rows: take("components")?.to_matrix()? },
            ReducerKind::GridPick => ReducerMap::Select {
                indices: take("indices")?
                    .data
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::Data(format!("coordinate index {} is not an integer", v)))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            },
        };
        Self::new(doc.input_dim, doc.output_dim, doc.mean, doc.scale, map)
    }
}

#[derive(Serialize, Deserialize)]
struct ReducerDoc {
    version: String,
    kind: ReducerKind,
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    params: Vec<ParamDoc>,
}

/// Named flat parameter block shared by the serialized model documents.
#[derive(Serialize, Deserialize)]
pub(crate) struct ParamDoc {
    pub(crate) name: String,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
}

impl ParamDoc {
    pub(crate) fn matrix(name: &str, m: &Array) -> Self {
        Self { name: name.into(), shape: m.shape().to_vec(), data: m.data().to_vec() }
    }

    pub(crate) fn vector(name: &str, v: &[f64]) -> Self {
        Self { name: name.into(), shape: vec![v.len()], data: v.to_vec() }
    }

    pub(crate) fn to_matrix(&self) -> Result<Array> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "parameter {:?} must declare a 2-dim shape",
                self.name
            )));
        }
        Array::matrix(self.shape[0], self.shape[1], self.data.clone())
    }

    pub(crate) fn to_vector(&self) -> Result<Vec<f64>> {
        if self.shape.len() != 1 || self.shape[0] != self.data.len() {
            return Err(Error::Shape(format!(
                "parameter {:?} must declare a flat shape",
                self.name
            )));
        }
        Ok(self.data.clone())
    }
}
