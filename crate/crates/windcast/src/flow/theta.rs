//! The conditioning network that produces raw coupling parameters.
//!
//! A stack of affine+rectifier blocks with a parallel affine skip path from
//! the input straight to the output. One shared trunk emits all five raw
//! parameters for every transformed coordinate, sliced in blocks of five.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::Array;

pub const MIN_DEPTH: usize = 3;
pub const MAX_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaNet {
    input_dim: usize,
    output_dim: usize,
    width: usize,
    /// weights[0] = input block, then depth-1 hidden blocks; all rectified.
    weights: Vec<Array>,
    biases: Vec<Array>,
    out_w: Array,
    out_b: Array,
    skip_w: Array,
}

impl ThetaNet {
    /// Near-identity start: trunk weights at rectifier scale, output and
    /// skip weights small so the raw coupling parameters begin close to 0.
    pub fn init(
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        width: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
            return Err(Error::InvalidArgument(format!(
                "conditioning depth {} outside {}..={}",
                depth, MIN_DEPTH, MAX_DEPTH
            )));
        }
        if input_dim == 0 || output_dim == 0 || width == 0 {
            return Err(Error::InvalidArgument("conditioning net dims must be positive".into()));
        }
        let mut draw = |rows: usize, cols: usize, sd: f64| -> Array {
            let data: Vec<f64> =
                (0..rows * cols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            Array::matrix(rows, cols, data).expect("net init shape")
        };
        let mut weights = vec![draw(input_dim, width, (2.0 / input_dim as f64).sqrt())];
        let mut biases = vec![Array::zeros(vec![width])];
        for _ in 1..depth {
            weights.push(draw(width, width, (2.0 / width as f64).sqrt()));
            biases.push(Array::zeros(vec![width]));
        }
        let out_w = draw(width, output_dim, 0.01 / (width as f64).sqrt());
        let skip_w = draw(input_dim, output_dim, 0.01 / (input_dim as f64).sqrt());
        Ok(Self {
            input_dim,
            output_dim,
            width,
            weights,
            biases,
            out_w,
            out_b: Array::zeros(vec![output_dim]),
            skip_w,
        })
    }

    /// Rebuilds a net from stored blocks, validating every shape.
    pub fn from_parts(
        weights: Vec<Array>,
        biases: Vec<Array>,
        out_w: Array,
        out_b: Array,
        skip_w: Array,
    ) -> Result<Self> {
        let depth = weights.len();
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) || biases.len() != depth {
            return Err(Error::Shape(format!(
                "trunk must hold {}..={} weight/bias blocks, got {}/{}",
                MIN_DEPTH,
                MAX_DEPTH,
                depth,
                biases.len()
            )));
        }
        let input_dim = weights[0].nrows();
        let width = weights[0].ncols();
        let output_dim = out_w.ncols();
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let expect_in = if i == 0 { input_dim } else { width };
            if w.shape() != [expect_in, width] || b.shape() != [width] {
                return Err(Error::Shape(format!("trunk block {} has the wrong shape", i)));
            }
        }
        if out_w.shape() != [width, output_dim]
            || out_b.shape() != [output_dim]
            || skip_w.shape() != [input_dim, output_dim]
        {
            return Err(Error::Shape("output and skip blocks must match the trunk".into()));
        }
        if input_dim == 0 || output_dim == 0 || width == 0 {
            return Err(Error::InvalidArgument("conditioning net dims must be positive".into()));
        }
        Ok(Self { input_dim, output_dim, width, weights, biases, out_w, out_b, skip_w })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Batch evaluation: rows of `x` are conditioning vectors.
    pub fn eval_batch(&self, x: &Array) -> Array {
        assert_eq!(x.ncols(), self.input_dim, "conditioning input width mismatch");
        let mut h = x.matmul(&self.weights[0]).expect("net shapes");
        add_row_relu(&mut h, &self.biases[0]);
        for (w, b) in self.weights.iter().zip(&self.biases).skip(1) {
            h = h.matmul(w).expect("net shapes");
            add_row_relu(&mut h, b);
        }
        let mut out = h.matmul(&self.out_w).expect("net shapes");
        let skip = x.matmul(&self.skip_w).expect("net shapes");
        let ob = self.out_b.data();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                let v = out.at2(i, j) + ob[j] + skip.at2(i, j);
                out.set2(i, j, v);
            }
        }
        out
    }

    /// Parameters in a fixed order for the optimizer and the serializer:
    /// trunk weight/bias pairs, output weight/bias, skip weight.
    pub fn params(&self) -> Vec<Array> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.clone());
            out.push(b.clone());
        }
        out.push(self.out_w.clone());
        out.push(self.out_b.clone());
        out.push(self.skip_w.clone());
        out
    }

    pub fn param_count(&self) -> usize {
        2 * self.depth() + 3
    }

    /// Replaces parameters from `params[*cursor..]`, advancing the cursor.
    pub fn load_params(&mut self, params: &[Array], cursor: &mut usize) -> Result<()> {
        let need = self.param_count();
        if params.len() < *cursor + need {
            return Err(Error::Shape("too few parameter blocks for the net".into()));
        }
        let mut take = || {
            let a = params[*cursor].clone();
            *cursor += 1;
            a
        };
        for i in 0..self.depth() {
            let w = take();
            let b = take();
            if w.shape() != self.weights[i].shape() || b.shape() != self.biases[i].shape() {
                return Err(Error::Shape(format!("trunk block {} shape mismatch", i)));
            }
            self.weights[i] = w;
            self.biases[i] = b;
        }
        let (ow, ob, sw) = (take(), take(), take());
        if ow.shape() != self.out_w.shape()
            || ob.shape() != self.out_b.shape()
            || sw.shape() != self.skip_w.shape()
        {
            return Err(Error::Shape("output block shape mismatch".into()));
        }
        self.out_w = ow;
        self.out_b = ob;
        self.skip_w = sw;
        Ok(())
    }
}

fn add_row_relu(m: &mut Array, row: &Array) {
    let r = row.data();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = (m.at2(i, j) + r[j]).max(0.0);
            m.set2(i, j, v);
        }
    }
}
