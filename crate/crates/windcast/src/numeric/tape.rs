//! Reverse-mode automatic differentiation on a tape of matrix operations.
//!
//! The tape records whole-array primitives (matrix product, elementwise
//! maps, reductions, broadcast ops, positive-definite solve and log-det), so
//! a training step is a few dozen nodes instead of millions of scalar ones.
//! Graphs are rebuilt every step: leaves are either trainable parameters or
//! constants, `Tape::gradients` runs one reverse sweep from a scalar output,
//! and the caller updates its parameter arrays outside the tape.
//!
//! Shape or tape mismatches panic: they are programming errors in graph
//! construction. Value-dependent failures (a covariance that is not positive
//! definite) surface as `Err` from the node constructor, which training
//! loops treat as divergence.
//!
//! ```
//! use windcast::numeric::{Array, Tape};
//!
//! let tape = Tape::new();
//! let w = tape.param(Array::matrix(2, 1, vec![0.5, -1.0]).unwrap());
//! let x = tape.constant(Array::matrix(1, 2, vec![3.0, 2.0]).unwrap());
//! let y = x.matmul(&w).sum(); // y = 3*0.5 + 2*(-1.0)
//! let grads = tape.gradients(&y).unwrap();
//! assert_eq!(grads.wrt(&w).unwrap().data(), &[3.0, 2.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numeric::array::Array;
use crate::numeric::linalg;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddConst(usize, f64),
    MulConst(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Relu(usize),
    Sqrt(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    RowSum(usize),
    ColMean(usize),
    AddRow(usize, usize),
    SubRow(usize, usize),
    MulRow(usize, usize),
    DivRow(usize, usize),
    AddScalar(usize, usize),
    LogSumExpRows(usize),
    LogSumExpAll(usize),
    StackCols(Vec<usize>),
    SelectCols(usize, Vec<usize>),
    PlaceCols { cols: usize, parts: Vec<(Vec<usize>, usize)> },
    GetElem(usize, usize),
    LogDetPd(usize),
    SolvePd(usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::SubRow(a, b)
            | Op::MulRow(a, b)
            | Op::DivRow(a, b)
            | Op::AddScalar(a, b)
            | Op::SolvePd(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::AddConst(a, _)
            | Op::MulConst(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::ColMean(a)
            | Op::LogSumExpRows(a)
            | Op::LogSumExpAll(a)
            | Op::SelectCols(a, _)
            | Op::GetElem(a, _)
            | Op::LogDetPd(a) => vec![*a],
            Op::StackCols(parts) => parts.clone(),
            Op::PlaceCols { parts, .. } => parts.iter().map(|(_, v)| *v).collect(),
        }
    }
}

/// Extra forward results kept for the backward sweep.
#[derive(Debug, Clone)]
enum Cache {
    CholFactor(Array),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    cache: Option<Cache>,
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Recording tape; cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
}

/// Per-node adjoints from a reverse sweep.
pub struct Gradients {
    adjoints: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `v`, if any flowed.
    pub fn wrt(&self, v: &Var) -> Option<&Array> {
        self.adjoints.get(v.idx).and_then(|o| o.as_ref())
    }
}

/// Evaluates one primitive given its input values. Shared by the initial
/// recording and by `replay`, so both produce bit-identical results.
fn eval_op(op: &Op, vals: &[&Array]) -> Result<(Array, Option<Cache>)> {
    let out = match op {
        Op::Leaf => unreachable!("leaf nodes carry their value"),
        Op::Add(..) => vals[0].zip_with(vals[1], |a, b| a + b),
        Op::Sub(..) => vals[0].zip_with(vals[1], |a, b| a - b),
        Op::Mul(..) => vals[0].zip_with(vals[1], |a, b| a * b),
        Op::Div(..) => vals[0].zip_with(vals[1], |a, b| a / b),
        Op::Neg(_) => vals[0].map(|v| -v),
        Op::AddConst(_, c) => vals[0].map(|v| v + c),
        Op::MulConst(_, c) => vals[0].map(|v| v * c),
        Op::Exp(_) => vals[0].map(f64::exp),
        Op::Ln(_) => vals[0].map(f64::ln),
        Op::Tanh(_) => vals[0].map(f64::tanh),
        Op::Relu(_) => vals[0].map(|v| if v > 0.0 { v } else { 0.0 }),
        Op::Sqrt(_) => vals[0].map(f64::sqrt),
        Op::MatMul(..) => vals[0].matmul(vals[1])?,
        Op::Transpose(_) => vals[0].transpose()?,
        Op::Sum(_) => Array::scalar(vals[0].sum()),
        Op::RowSum(_) => {
            let a = vals[0];
            let (m, n) = (a.nrows(), a.ncols());
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = a.row(i).iter().sum();
            }
            let _ = n;
            Array::from_parts(vec![m], out)
        }
        Op::ColMean(_) => {
            let a = vals[0];
            let (m, n) = (a.nrows(), a.ncols());
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += a.at2(i, j);
                }
            }
            let inv = 1.0 / m as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
            Array::from_parts(vec![n], out)
        }
        Op::AddRow(..) => broadcast_row(vals[0], vals[1], |a, r| a + r),
        Op::SubRow(..) => broadcast_row(vals[0], vals[1], |a, r| a - r),
        Op::MulRow(..) => broadcast_row(vals[0], vals[1], |a, r| a * r),
        Op::DivRow(..) => broadcast_row(vals[0], vals[1], |a, r| a / r),
        Op::AddScalar(..) => {
            let s = vals[1].data()[0];
            vals[0].map(|v| v + s)
        }
        Op::LogSumExpRows(_) => {
            let a = vals[0];
            let (m, n) = (a.nrows(), a.ncols());
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = logsumexp(&a.data()[i * n..(i + 1) * n]);
            }
            Array::from_parts(vec![m], out)
        }
        Op::LogSumExpAll(_) => Array::scalar(logsumexp(vals[0].data())),
        Op::StackCols(_) => {
            let m = vals[0].len();
            let k = vals.len();
            let mut out = vec![0.0; m * k];
            for (j, col) in vals.iter().enumerate() {
                for i in 0..m {
                    out[i * k + j] = col.data()[i];
                }
            }
            Array::from_parts(vec![m, k], out)
        }
        Op::SelectCols(_, idx) => {
            let a = vals[0];
            let m = a.nrows();
            let k = idx.len();
            let mut out = vec![0.0; m * k];
            for i in 0..m {
                let row = a.row(i);
                for (j, &c) in idx.iter().enumerate() {
                    out[i * k + j] = row[c];
                }
            }
            Array::from_parts(vec![m, k], out)
        }
        Op::PlaceCols { cols, parts } => {
            let m = vals[0].nrows();
            let mut out = vec![0.0; m * cols];
            for ((idx, _), part) in parts.iter().zip(vals) {
                for i in 0..m {
                    let row = part.row(i);
                    for (j, &c) in idx.iter().enumerate() {
                        out[i * cols + c] = row[j];
                    }
                }
            }
            Array::from_parts(vec![m, *cols], out)
        }
        Op::GetElem(_, i) => Array::scalar(vals[0].data()[*i]),
        Op::LogDetPd(_) => {
            let l = linalg::cholesky(vals[0])?;
            let n = l.nrows();
            let mut acc = 0.0;
            for i in 0..n {
                acc += l.at2(i, i).ln();
            }
            return Ok((Array::scalar(2.0 * acc), Some(Cache::CholFactor(l))));
        }
        Op::SolvePd(..) => {
            let l = linalg::cholesky(vals[0])?;
            let x = linalg::solve_with_factor(&l, vals[1])?;
            return Ok((x, Some(Cache::CholFactor(l))));
        }
    };
    Ok((out, None))
}

fn broadcast_row(a: &Array, r: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let (m, n) = (a.nrows(), a.ncols());
    let rd = r.data();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for (j, &v) in a.row(i).iter().enumerate() {
            out.push(f(v, rd[j]));
        }
    }
    let _ = m;
    Array::from_parts(vec![a.nrows(), n], out)
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, value: Array, op: Op, cache: Option<Cache>, is_param: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let needs_grad = is_param
            || op
                .inputs()
                .iter()
                .any(|&i| inner.nodes[i].needs_grad);
        inner.nodes.push(Node { value, op, cache, needs_grad });
        Var { tape: self.clone(), idx: inner.nodes.len() - 1 }
    }

    /// Leaf that gradients are reported for.
    pub fn param(&self, value: Array) -> Var {
        self.push(value, Op::Leaf, None, true)
    }

    /// Leaf treated as fixed data.
    pub fn constant(&self, value: Array) -> Var {
        self.push(value, Op::Leaf, None, false)
    }

    fn record(&self, op: Op) -> Result<Var> {
        let (value, cache) = {
            let inner = self.inner.borrow();
            let ins = op.inputs();
            let vals: Vec<&Array> = ins.iter().map(|&i| &inner.nodes[i].value).collect();
            eval_op(&op, &vals)?
        };
        Ok(self.push(value, op, cache, false))
    }

    fn record_ok(&self, op: Op) -> Var {
        self.record(op).expect("value-independent op cannot fail")
    }

    /// Re-executes every node from the leaves; true when all recorded values
    /// are reproduced bit for bit.
    pub fn replay_matches(&self) -> bool {
        let inner = self.inner.borrow();
        let mut values: Vec<Array> = Vec::with_capacity(inner.nodes.len());
        for node in &inner.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => {
                    let vals: Vec<&Array> = op.inputs().iter().map(|&i| &values[i]).collect();
                    match eval_op(op, &vals) {
                        Ok((v, _)) => v,
                        Err(_) => return false,
                    }
                }
            };
            if v != node.value {
                return false;
            }
            values.push(v);
        }
        true
    }

    /// Reverse sweep from a scalar output. Returns adjoints for every node
    /// the output depends on differentiably, keyed by `Var`.
    pub fn gradients(&self, output: &Var) -> Result<Gradients> {
        assert!(
            Rc::ptr_eq(&self.inner, &output.tape.inner),
            "output belongs to a different tape"
        );
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        if nodes[output.idx].value.len() != 1 {
            return Err(Error::Shape(format!(
                "gradients: output must be scalar, got shape {:?}",
                nodes[output.idx].value.shape()
            )));
        }
        let mut adj: Vec<Option<Array>> = vec![None; nodes.len()];
        adj[output.idx] = Some(Array::scalar(1.0).map(|_| 1.0));
        // Keep the seed's shape identical to the output's.
        adj[output.idx] = Some(Array::from_parts(
            nodes[output.idx].value.shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=output.idx).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                op => {
                    backward_op(op, node, nodes, &g, &mut adj);
                }
            }
            adj[idx] = Some(g);
        }

        // Drop adjoints of non-leaf internals to keep only what callers read;
        // params and constants keep theirs, as do intermediates (useful for
        // diagnostics), so just return everything.
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(slot: &mut Option<Array>, shape: &[usize], add: impl Fn(&mut [f64])) {
    if slot.is_none() {
        *slot = Some(Array::zeros(shape.to_vec()));
    }
    add(slot.as_mut().unwrap().data_mut());
}

fn backward_op(op: &Op, node: &Node, nodes: &[Node], g: &Array, adj: &mut [Option<Array>]) {
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].needs_grad;
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut adj[*b], val(*b).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut adj[*b], val(*b).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o -= gi;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let vb = val(*b);
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for ((o, gi), bi) in d.iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gi * bi;
                    }
                });
            }
            if needs(*b) {
                let va = val(*a);
                accumulate(&mut adj[*b], val(*b).shape(), |d| {
                    for ((o, gi), ai) in d.iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gi * ai;
                    }
                });
            }
        }
        Op::Div(a, b) => {
            let vb = val(*b);
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for ((o, gi), bi) in d.iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gi / bi;
                    }
                });
            }
            if needs(*b) {
                let out = &node.value;
                accumulate(&mut adj[*b], val(*b).shape(), |d| {
                    for (((o, gi), oi), bi) in
                        d.iter_mut().zip(g.data()).zip(out.data()).zip(vb.data())
                    {
                        *o -= gi * oi / bi;
                    }
                });
            }
        }
        Op::Neg(a) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o -= gi;
                    }
                });
            }
        }
        Op::AddConst(a, _) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
        }
        Op::MulConst(a, c) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += c * gi;
                    }
                });
            }
        }
        Op::Exp(a) => {
            if needs(*a) {
                let out = &node.value;
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for ((o, gi), oi) in d.iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gi * oi;
                    }
                });
            }
        }
        Op::Ln(a) => {
            if needs(*a) {
                let va = val(*a);
                accumulate(&mut adj[*a], va.shape(), |d| {
                    for ((o, gi), ai) in d.iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gi / ai;
                    }
                });
            }
        }
        Op::Tanh(a) => {
            if needs(*a) {
                let out = &node.value;
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for ((o, gi), oi) in d.iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gi * (1.0 - oi * oi);
                    }
                });
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let va = val(*a);
                accumulate(&mut adj[*a], va.shape(), |d| {
                    for ((o, gi), ai) in d.iter_mut().zip(g.data()).zip(va.data()) {
                        if *ai > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
        }
        Op::Sqrt(a) => {
            if needs(*a) {
                let out = &node.value;
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for ((o, gi), oi) in d.iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gi * 0.5 / oi;
                    }
                });
            }
        }
        Op::MatMul(a, b) => {
            if needs(*a) {
                let contrib = g.matmul(&val(*b).transpose().unwrap()).unwrap();
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, c) in d.iter_mut().zip(contrib.data()) {
                        *o += c;
                    }
                });
            }
            if needs(*b) {
                let contrib = val(*a).transpose().unwrap().matmul(g).unwrap();
                accumulate(&mut adj[*b], val(*b).shape(), |d| {
                    for (o, c) in d.iter_mut().zip(contrib.data()) {
                        *o += c;
                    }
                });
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                let contrib = g.transpose().unwrap();
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, c) in d.iter_mut().zip(contrib.data()) {
                        *o += c;
                    }
                });
            }
        }
        Op::Sum(a) => {
            if needs(*a) {
                let gi = g.data()[0];
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for o in d.iter_mut() {
                        *o += gi;
                    }
                });
            }
        }
        Op::RowSum(a) => {
            if needs(*a) {
                let (m, n) = (val(*a).nrows(), val(*a).ncols());
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for i in 0..m {
                        let gi = g.data()[i];
                        for o in d[i * n..(i + 1) * n].iter_mut() {
                            *o += gi;
                        }
                    }
                });
            }
        }
        Op::ColMean(a) => {
            if needs(*a) {
                let (m, n) = (val(*a).nrows(), val(*a).ncols());
                let inv = 1.0 / m as f64;
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g.data()[j] * inv;
                        }
                    }
                });
            }
        }
        Op::AddRow(a, r) | Op::SubRow(a, r) => {
            let sign = if matches!(op, Op::AddRow(..)) { 1.0 } else { -1.0 };
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
            if needs(*r) {
                let (m, n) = (val(*a).nrows(), val(*a).ncols());
                accumulate(&mut adj[*r], val(*r).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += sign * g.data()[i * n + j];
                        }
                    }
                });
            }
        }
        Op::MulRow(a, r) => {
            let (m, n) = (val(*a).nrows(), val(*a).ncols());
            if needs(*a) {
                let vr = val(*r);
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g.data()[i * n + j] * vr.data()[j];
                        }
                    }
                });
            }
            if needs(*r) {
                let va = val(*a);
                accumulate(&mut adj[*r], val(*r).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += g.data()[i * n + j] * va.data()[i * n + j];
                        }
                    }
                });
            }
        }
        Op::DivRow(a, r) => {
            let (m, n) = (val(*a).nrows(), val(*a).ncols());
            let vr = val(*r);
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g.data()[i * n + j] / vr.data()[j];
                        }
                    }
                });
            }
            if needs(*r) {
                let out = &node.value;
                accumulate(&mut adj[*r], val(*r).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] -= g.data()[i * n + j] * out.data()[i * n + j] / vr.data()[j];
                        }
                    }
                });
            }
        }
        Op::AddScalar(a, s) => {
            if needs(*a) {
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, gi) in d.iter_mut().zip(g.data()) {
                        *o += gi;
                    }
                });
            }
            if needs(*s) {
                let total: f64 = g.data().iter().sum();
                accumulate(&mut adj[*s], val(*s).shape(), |d| d[0] += total);
            }
        }
        Op::LogSumExpRows(a) => {
            if needs(*a) {
                let va = val(*a);
                let (m, n) = (va.nrows(), va.ncols());
                let out = &node.value;
                accumulate(&mut adj[*a], va.shape(), |d| {
                    for i in 0..m {
                        let gi = g.data()[i];
                        let oi = out.data()[i];
                        for j in 0..n {
                            d[i * n + j] += gi * (va.data()[i * n + j] - oi).exp();
                        }
                    }
                });
            }
        }
        Op::LogSumExpAll(a) => {
            if needs(*a) {
                let va = val(*a);
                let gi = g.data()[0];
                let oi = node.value.data()[0];
                accumulate(&mut adj[*a], va.shape(), |d| {
                    for (o, ai) in d.iter_mut().zip(va.data()) {
                        *o += gi * (ai - oi).exp();
                    }
                });
            }
        }
        Op::StackCols(parts) => {
            let k = parts.len();
            for (j, &p) in parts.iter().enumerate() {
                if needs(p) {
                    let m = val(p).len();
                    accumulate(&mut adj[p], val(p).shape(), |d| {
                        for i in 0..m {
                            d[i] += g.data()[i * k + j];
                        }
                    });
                }
            }
        }
        Op::SelectCols(a, idx) => {
            if needs(*a) {
                let (m, n) = (val(*a).nrows(), val(*a).ncols());
                let k = idx.len();
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for i in 0..m {
                        for (j, &c) in idx.iter().enumerate() {
                            d[i * n + c] += g.data()[i * k + j];
                        }
                    }
                });
            }
        }
        Op::PlaceCols { cols, parts } => {
            for (idx, p) in parts {
                if needs(*p) {
                    let m = val(*p).nrows();
                    let k = val(*p).ncols();
                    accumulate(&mut adj[*p], val(*p).shape(), |d| {
                        for i in 0..m {
                            for (j, &c) in idx.iter().enumerate() {
                                d[i * k + j] += g.data()[i * cols + c];
                            }
                        }
                    });
                }
            }
        }
        Op::GetElem(a, i) => {
            if needs(*a) {
                let gi = g.data()[0];
                let at = *i;
                accumulate(&mut adj[*a], val(*a).shape(), |d| d[at] += gi);
            }
        }
        Op::LogDetPd(a) => {
            if needs(*a) {
                let l = match &node.cache {
                    Some(Cache::CholFactor(l)) => l,
                    None => unreachable!("log_det_pd caches its factor"),
                };
                let minv = linalg::inverse_with_factor(l).unwrap();
                let gi = g.data()[0];
                accumulate(&mut adj[*a], val(*a).shape(), |d| {
                    for (o, mi) in d.iter_mut().zip(minv.data()) {
                        *o += gi * mi;
                    }
                });
            }
        }
        Op::SolvePd(m_idx, b_idx) => {
            let l = match &node.cache {
                Some(Cache::CholFactor(l)) => l,
                None => unreachable!("solve_pd caches its factor"),
            };
            // X = S^{-1} B with S the symmetrized input. With P = S^{-1} G:
            //   adj(B) += P,  adj(M) += -(P X^T + X P^T)/2.
            let p = linalg::solve_with_factor(l, g).unwrap();
            if needs(*b_idx) {
                accumulate(&mut adj[*b_idx], val(*b_idx).shape(), |d| {
                    for (o, c) in d.iter_mut().zip(p.data()) {
                        *o += c;
                    }
                });
            }
            if needs(*m_idx) {
                let x = &node.value;
                let pxt = p.matmul(&x.transpose().unwrap()).unwrap();
                accumulate(&mut adj[*m_idx], val(*m_idx).shape(), |d| {
                    let n = x.nrows();
                    for i in 0..n {
                        for j in 0..n {
                            d[i * n + j] -= 0.5 * (pxt.at2(i, j) + pxt.at2(j, i));
                        }
                    }
                });
            }
        }
    }
}

impl Var {
    pub fn value(&self) -> Array {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].value.shape().to_vec()
    }

    /// Scalar payload; panics when the node is not scalar.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.idx].value;
        assert_eq!(v.len(), 1, "scalar_value on shape {:?}", v.shape());
        v.data()[0]
    }

    fn same_tape(&self, other: &Var) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars belong to different tapes"
        );
    }

    fn assert_same_shape(&self, other: &Var, what: &str) {
        let a = self.shape();
        let b = other.shape();
        assert_eq!(a, b, "{}: shape {:?} vs {:?}", what, a, b);
    }

    pub fn add(&self, other: &Var) -> Var {
        self.same_tape(other);
        self.assert_same_shape(other, "add");
        self.tape.record_ok(Op::Add(self.idx, other.idx))
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.same_tape(other);
        self.assert_same_shape(other, "sub");
        self.tape.record_ok(Op::Sub(self.idx, other.idx))
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.same_tape(other);
        self.assert_same_shape(other, "mul");
        self.tape.record_ok(Op::Mul(self.idx, other.idx))
    }

    pub fn div(&self, other: &Var) -> Var {
        self.same_tape(other);
        self.assert_same_shape(other, "div");
        self.tape.record_ok(Op::Div(self.idx, other.idx))
    }

    pub fn neg(&self) -> Var {
        self.tape.record_ok(Op::Neg(self.idx))
    }

    pub fn add_c(&self, c: f64) -> Var {
        self.tape.record_ok(Op::AddConst(self.idx, c))
    }

    pub fn mul_c(&self, c: f64) -> Var {
        self.tape.record_ok(Op::MulConst(self.idx, c))
    }

    pub fn exp(&self) -> Var {
        self.tape.record_ok(Op::Exp(self.idx))
    }

    pub fn ln(&self) -> Var {
        self.tape.record_ok(Op::Ln(self.idx))
    }

    pub fn tanh(&self) -> Var {
        self.tape.record_ok(Op::Tanh(self.idx))
    }

    pub fn relu(&self) -> Var {
        self.tape.record_ok(Op::Relu(self.idx))
    }

    pub fn sqrt(&self) -> Var {
        self.tape.record_ok(Op::Sqrt(self.idx))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.same_tape(other);
        self.tape
            .record(Op::MatMul(self.idx, other.idx))
            .expect("matmul shapes")
    }

    pub fn t(&self) -> Var {
        self.tape.record(Op::Transpose(self.idx)).expect("transpose shape")
    }

    pub fn sum(&self) -> Var {
        self.tape.record_ok(Op::Sum(self.idx))
    }

    pub fn row_sum(&self) -> Var {
        assert_eq!(self.shape().len(), 2, "row_sum wants a matrix");
        self.tape.record_ok(Op::RowSum(self.idx))
    }

    pub fn col_mean(&self) -> Var {
        assert_eq!(self.shape().len(), 2, "col_mean wants a matrix");
        self.tape.record_ok(Op::ColMean(self.idx))
    }

    fn row_op(&self, row: &Var, what: &str) {
        self.same_tape(row);
        let a = self.shape();
        let r = row.shape();
        assert!(
            a.len() == 2 && r.len() == 1 && r[0] == a[1],
            "{}: matrix {:?} vs row {:?}",
            what,
            a,
            r
        );
    }

    pub fn add_row(&self, row: &Var) -> Var {
        self.row_op(row, "add_row");
        self.tape.record_ok(Op::AddRow(self.idx, row.idx))
    }

    pub fn sub_row(&self, row: &Var) -> Var {
        self.row_op(row, "sub_row");
        self.tape.record_ok(Op::SubRow(self.idx, row.idx))
    }

    pub fn mul_row(&self, row: &Var) -> Var {
        self.row_op(row, "mul_row");
        self.tape.record_ok(Op::MulRow(self.idx, row.idx))
    }

    pub fn div_row(&self, row: &Var) -> Var {
        self.row_op(row, "div_row");
        self.tape.record_ok(Op::DivRow(self.idx, row.idx))
    }

    /// Broadcast-add a scalar node to every element.
    pub fn add_scalar(&self, s: &Var) -> Var {
        self.same_tape(s);
        assert_eq!(
            s.shape().iter().product::<usize>(),
            1,
            "add_scalar wants a scalar node"
        );
        self.tape.record_ok(Op::AddScalar(self.idx, s.idx))
    }

    pub fn logsumexp_rows(&self) -> Var {
        assert_eq!(self.shape().len(), 2, "logsumexp_rows wants a matrix");
        self.tape.record_ok(Op::LogSumExpRows(self.idx))
    }

    pub fn logsumexp_all(&self) -> Var {
        self.tape.record_ok(Op::LogSumExpAll(self.idx))
    }

    pub fn select_cols(&self, idx: &[usize]) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 2, "select_cols wants a matrix");
        assert!(idx.iter().all(|&c| c < s[1]), "select_cols: index out of range");
        self.tape.record_ok(Op::SelectCols(self.idx, idx.to_vec()))
    }

    pub fn get(&self, i: usize) -> Var {
        assert!(i < self.value().len(), "get: index out of range");
        self.tape.record_ok(Op::GetElem(self.idx, i))
    }

    /// ln det of a symmetric positive-definite matrix node.
    pub fn log_det_pd(&self) -> Result<Var> {
        self.tape.record(Op::LogDetPd(self.idx))
    }

    /// Solves M X = B where `self` is symmetric positive definite.
    pub fn solve_pd(&self, b: &Var) -> Result<Var> {
        self.same_tape(b);
        self.tape.record(Op::SolvePd(self.idx, b.idx))
    }
}

/// Interleaves rank-1 columns into a matrix, one column per input.
pub fn stack_cols(cols: &[Var]) -> Var {
    assert!(!cols.is_empty(), "stack_cols needs at least one column");
    let tape = cols[0].tape.clone();
    let m = cols[0].value().len();
    for c in cols {
        c.same_tape(&cols[0]);
        assert_eq!(c.shape(), vec![m], "stack_cols: all columns must be length {}", m);
    }
    tape.record_ok(Op::StackCols(cols.iter().map(|c| c.idx).collect()))
}

/// Scatters parts into a (rows, cols) matrix; each part j provides the
/// output columns listed in its index set. Every column must be covered
/// exactly once.
pub fn place_cols(cols: usize, parts: &[(Vec<usize>, Var)]) -> Var {
    assert!(!parts.is_empty(), "place_cols needs at least one part");
    let tape = parts[0].1.tape.clone();
    let rows = parts[0].1.shape()[0];
    let mut seen = vec![false; cols];
    for (idx, v) in parts {
        v.same_tape(&parts[0].1);
        let s = v.shape();
        assert!(s.len() == 2 && s[0] == rows && s[1] == idx.len(), "place_cols: part shape {:?} vs {} indices", s, idx.len());
        for &c in idx {
            assert!(c < cols && !seen[c], "place_cols: column {} missing or duplicated", c);
            seen[c] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "place_cols: not all columns covered");
    tape.record_ok(Op::PlaceCols {
        cols,
        parts: parts.iter().map(|(i, v)| (i.clone(), v.idx)).collect(),
    })
}
