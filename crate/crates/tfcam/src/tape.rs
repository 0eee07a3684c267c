//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every differentiable operation appends a node to the tape during the
//! forward pass. [`Tape::backward`] walks the nodes in exact reverse
//! execution order, propagating vector-Jacobian products. Gradients
//! accumulate additively, so running two forwards through the same
//! parameters before reading gradients doubles them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// Adds a constant tensor, tiled over the leading axes of the input.
    AddConst(usize),
    /// x[..,k] · w[k,n]
    Linear(usize, usize),
    /// x[..,n] + b[n]
    AddBias(usize, usize),
    /// Batched matmul: a[..,m,k] · b[..,k,n] with equal leading dims.
    Bmm(usize, usize),
    TransposeLast2(usize),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    SoftmaxLast(usize),
    /// x[..,n] normalized per row, then gamma ⊙ x̂ + beta.
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    ConcatLast(usize, usize),
    Reshape(usize),
    /// x[B,T,..] → x[:,t,..]
    IndexTime(usize, usize),
    /// parts each [B,rest] stacked into [B,T,rest].
    StackTime(Vec<usize>),
    /// [B,T,D] → [B,D], summing over axis 1.
    SumTime(usize),
    /// x[..,d] scaled per row by s[..] (s shape == leading dims of x).
    ScaleRows { x: usize, s: usize },
    MeanAll(usize),
    SumAll(usize),
    /// Class-weighted binary cross-entropy on logits, mean over batch.
    WeightedBce {
        logits: usize,
        labels: Tensor,
        pos_weight: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records forward operations for later reverse replay.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x), overflow-safe.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input tensor as a leaf node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape("sub", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * c);
        self.push(out, Op::Scale(a.0, c))
    }

    /// Adds a non-differentiable constant, tiled over leading axes when
    /// the constant is smaller than the input.
    pub fn add_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.len() % c.len().max(1) != 0 || c.is_empty() {
            return Err(Error::shape("add_const", ta.shape(), c.shape()));
        }
        let cl = c.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + c.data()[i % cl])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(out, Op::AddConst(a.0)))
    }

    /// x[..,k] · w[k,n] → [..,n]
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        if tw.rank() != 2 || tx.last_dim() != tw.shape()[0] {
            return Err(Error::shape("linear", tx.shape(), tw.shape()));
        }
        let (k, n) = (tw.shape()[0], tw.shape()[1]);
        let rows = tx.leading();
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            for kk in 0..k {
                let xv = tx.data()[r * k + kk];
                if xv != 0.0 {
                    let wrow = &tw.data()[kk * n..(kk + 1) * n];
                    let orow = &mut data[r * n..(r + 1) * n];
                    for j in 0..n {
                        orow[j] += xv * wrow[j];
                    }
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Linear(x.0, w.0)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        if tb.rank() != 1 || tb.len() != tx.last_dim() {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let n = tb.len();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % n])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        Ok(self.push(out, Op::AddBias(x.0, b.0)))
    }

    /// Batched matmul over matching leading dims.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ra, rb) = (ta.rank(), tb.rank());
        if ra < 2 || rb < 2 || ra != rb {
            return Err(Error::shape("bmm", ta.shape(), tb.shape()));
        }
        let (m, ka) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
        let (kb, n) = (tb.shape()[rb - 2], tb.shape()[rb - 1]);
        if ka != kb || ta.shape()[..ra - 2] != tb.shape()[..rb - 2] {
            return Err(Error::shape("bmm", ta.shape(), tb.shape()));
        }
        let batches: usize = ta.shape()[..ra - 2].iter().product();
        let mut data = vec![0.0; batches * m * n];
        for bi in 0..batches {
            let abase = bi * m * ka;
            let bbase = bi * ka * n;
            let obase = bi * m * n;
            for i in 0..m {
                for kk in 0..ka {
                    let av = ta.data()[abase + i * ka + kk];
                    if av != 0.0 {
                        for j in 0..n {
                            data[obase + i * n + j] += av * tb.data()[bbase + kk * n + j];
                        }
                    }
                }
            }
        }
        let mut shape = ta.shape()[..ra - 2].to_vec();
        shape.push(m);
        shape.push(n);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::Bmm(a.0, b.0)))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let r = ta.rank();
        if r < 2 {
            return Err(Error::shape("transpose_last2", ta.shape(), &[]));
        }
        let (m, n) = (ta.shape()[r - 2], ta.shape()[r - 1]);
        let batches: usize = ta.shape()[..r - 2].iter().product();
        let mut data = vec![0.0; ta.len()];
        for bi in 0..batches {
            let base = bi * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[base + j * m + i] = ta.data()[base + i * n + j];
                }
            }
        }
        let mut shape = ta.shape().to_vec();
        shape[r - 2] = n;
        shape[r - 1] = m;
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::TransposeLast2(a.0)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(gelu);
        self.push(out, Op::Gelu(a.0))
    }

    /// Softmax over the last axis, max-shifted for overflow safety.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let n = ta.last_dim();
        let rows = ta.leading();
        let mut data = vec![0.0; ta.len()];
        for r in 0..rows {
            let row = &ta.data()[r * n..(r + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                data[r * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[r * n + j] /= sum;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(out, Op::SoftmaxLast(a.0))
    }

    /// Layer normalization over the last axis with learnable gain/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        let n = tx.last_dim();
        if tg.len() != n || tb.len() != n {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.leading();
        let mut data = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                let xh = (row[j] - mean) * inv;
                data[r * n + j] = tg.data()[j] * xh + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
        ))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != tb.rank()
            || ta.shape()[..ta.rank() - 1] != tb.shape()[..tb.rank() - 1]
        {
            return Err(Error::shape("concat_last", ta.shape(), tb.shape()));
        }
        let (na, nb) = (ta.last_dim(), tb.last_dim());
        let rows = ta.leading();
        let mut data = Vec::with_capacity(rows * (na + nb));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * na..(r + 1) * na]);
            data.extend_from_slice(&tb.data()[r * nb..(r + 1) * nb]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = na + nb;
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::ConcatLast(a.0, b.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.nodes[a.0].value.reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a.0)))
    }

    /// Selects time step `t` from a [B,T,..] tensor.
    pub fn index_time(&mut self, a: Var, t: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() < 2 || t >= ta.shape()[1] {
            return Err(Error::InvalidArgument(format!(
                "index_time: t={} out of range for shape {:?}",
                t,
                ta.shape()
            )));
        }
        let b = ta.shape()[0];
        let tt = ta.shape()[1];
        let rest: usize = ta.shape()[2..].iter().product();
        let mut data = Vec::with_capacity(b * rest);
        for bi in 0..b {
            let base = (bi * tt + t) * rest;
            data.extend_from_slice(&ta.data()[base..base + rest]);
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&ta.shape()[2..]);
        Ok(self.push(Tensor::new(shape, data).unwrap(), Op::IndexTime(a.0, t)))
    }

    /// Stacks per-step tensors [B,rest] into [B,T,rest].
    pub fn stack_time(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("stack_time: empty time axis".into()));
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        for p in parts {
            if self.nodes[p.0].value.shape() != first.as_slice() {
                return Err(Error::shape(
                    "stack_time",
                    &first,
                    self.nodes[p.0].value.shape(),
                ));
            }
        }
        let b = first[0];
        let rest: usize = first[1..].iter().product();
        let t = parts.len();
        let mut data = vec![0.0; b * t * rest];
        for (ti, p) in parts.iter().enumerate() {
            let tv = &self.nodes[p.0].value;
            for bi in 0..b {
                let dst = (bi * t + ti) * rest;
                data[dst..dst + rest].copy_from_slice(&tv.data()[bi * rest..(bi + 1) * rest]);
            }
        }
        let mut shape = vec![b, t];
        shape.extend_from_slice(&first[1..]);
        Ok(self.push(
            Tensor::new(shape, data).unwrap(),
            Op::StackTime(parts.iter().map(|p| p.0).collect()),
        ))
    }

    /// Sums a [B,T,D] tensor over its time axis.
    pub fn sum_time(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 3 {
            return Err(Error::shape("sum_time", ta.shape(), &[]));
        }
        let (b, t, d) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let mut data = vec![0.0; b * d];
        for bi in 0..b {
            for ti in 0..t {
                for di in 0..d {
                    data[bi * d + di] += ta.at3(bi, ti, di);
                }
            }
        }
        Ok(self.push(Tensor::new(vec![b, d], data).unwrap(), Op::SumTime(a.0)))
    }

    /// Multiplies each last-axis row of `x` by the matching scalar in `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (&self.nodes[x.0].value, &self.nodes[s.0].value);
        if ts.shape() != &tx.shape()[..tx.rank() - 1] {
            return Err(Error::shape("scale_rows", tx.shape(), ts.shape()));
        }
        let d = tx.last_dim();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * ts.data()[i / d])
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data).unwrap();
        Ok(self.push(out, Op::ScaleRows { x: x.0, s: s.0 }))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let v = ta.data().iter().sum::<f64>() / ta.len() as f64;
        self.push(Tensor::scalar(v), Op::MeanAll(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.data().iter().sum::<f64>();
        self.push(Tensor::scalar(v), Op::SumAll(a.0))
    }

    /// Mean over the batch of
    /// −[pos_weight·y·log σ(z) + (1−y)·log(1−σ(z))],
    /// evaluated through softplus so large |z| cannot overflow.
    pub fn weighted_bce(&mut self, logits: Var, labels: &Tensor, pos_weight: f64) -> Result<Var> {
        let tz = &self.nodes[logits.0].value;
        if tz.shape() != labels.shape() {
            return Err(Error::shape("weighted_bce", tz.shape(), labels.shape()));
        }
        if pos_weight <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pos_weight must be positive, got {pos_weight}"
            )));
        }
        for (i, &y) in labels.data().iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "label at index {i} is {y}, expected 0 or 1"
                )));
            }
        }
        let n = tz.len() as f64;
        let mut total = 0.0;
        for (&z, &y) in tz.data().iter().zip(labels.data()) {
            // -log σ(z) = softplus(-z); -log(1-σ(z)) = softplus(z)
            total += pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::WeightedBce {
                logits: logits.0,
                labels: labels.clone(),
                pos_weight,
            },
        ))
    }

    /// Propagates gradients from a scalar `loss` back to every node,
    /// returning the per-node gradient table.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![1.0],
        )
        .unwrap());

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor::zeros(self.nodes[i].value.shape())))
            .collect())
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
        match &mut grads[idx] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |idx: usize| &self.nodes[idx].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                let db = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                self.add_grad(grads, *a, da);
                self.add_grad(grads, *b, db);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.add_grad(grads, *a, g.map(|x| x * c));
            }
            Op::AddConst(a) => {
                self.add_grad(grads, *a, g.clone());
            }
            Op::Linear(x, w) => {
                let (tx, tw) = (val(*x), val(*w));
                let (k, n) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.leading();
                // dx = g · wᵀ
                let mut dx = vec![0.0; tx.len()];
                for r in 0..rows {
                    for j in 0..n {
                        let gv = g.data()[r * n + j];
                        if gv != 0.0 {
                            for kk in 0..k {
                                dx[r * k + kk] += gv * tw.data()[kk * n + j];
                            }
                        }
                    }
                }
                // dw = xᵀ · g
                let mut dw = vec![0.0; tw.len()];
                for r in 0..rows {
                    for kk in 0..k {
                        let xv = tx.data()[r * k + kk];
                        if xv != 0.0 {
                            for j in 0..n {
                                dw[kk * n + j] += xv * g.data()[r * n + j];
                            }
                        }
                    }
                }
                self.add_grad(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
                self.add_grad(grads, *w, Tensor::new(tw.shape().to_vec(), dw).unwrap());
            }
            Op::AddBias(x, b) => {
                let tb = val(*b);
                let n = tb.len();
                let mut db = vec![0.0; n];
                for (idx, gv) in g.data().iter().enumerate() {
                    db[idx % n] += gv;
                }
                self.add_grad(grads, *x, g.clone());
                self.add_grad(grads, *b, Tensor::new(vec![n], db).unwrap());
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ra = ta.rank();
                let (m, k) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
                let n = tb.shape()[ra - 1];
                let batches: usize = ta.shape()[..ra - 2].iter().product();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for bi in 0..batches {
                    let (ab, bb, gb) = (bi * m * k, bi * k * n, bi * m * n);
                    for i2 in 0..m {
                        for j in 0..n {
                            let gv = g.data()[gb + i2 * n + j];
                            if gv != 0.0 {
                                for kk in 0..k {
                                    da[ab + i2 * k + kk] += gv * tb.data()[bb + kk * n + j];
                                    db[bb + kk * n + j] += gv * ta.data()[ab + i2 * k + kk];
                                }
                            }
                        }
                    }
                }
                self.add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                self.add_grad(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
            }
            Op::TransposeLast2(a) => {
                let ta = val(*a);
                let r = ta.rank();
                let (m, n) = (ta.shape()[r - 2], ta.shape()[r - 1]);
                let batches: usize = ta.shape()[..r - 2].iter().product();
                let mut da = vec![0.0; ta.len()];
                for bi in 0..batches {
                    let base = bi * m * n;
                    for i2 in 0..m {
                        for j in 0..n {
                            da[base + i2 * n + j] = g.data()[base + j * m + i2];
                        }
                    }
                }
                self.add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect(),
                )
                .unwrap();
                self.add_grad(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect(),
                )
                .unwrap();
                self.add_grad(grads, *a, da);
            }
            Op::Gelu(a) => {
                let tx = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(tx.data())
                        .map(|(gv, xv)| gv * gelu_grad(*xv))
                        .collect(),
                )
                .unwrap();
                self.add_grad(grads, *a, da);
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let n = y.last_dim();
                let rows = y.leading();
                let mut da = vec![0.0; y.len()];
                for r in 0..rows {
                    let ys = &y.data()[r * n..(r + 1) * n];
                    let gs = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..n {
                        da[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                self.add_grad(grads, *a, Tensor::new(y.shape().to_vec(), da).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (tx, tg) = (val(*x), val(*gamma));
                let n = tx.last_dim();
                let rows = tx.leading();
                let mut dx = vec![0.0; tx.len()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..rows {
                    let row = &tx.data()[r * n..(r + 1) * n];
                    let gs = &g.data()[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xh: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let gg: Vec<f64> = gs
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| gv * tg.data()[j])
                        .collect();
                    let mean_gg = gg.iter().sum::<f64>() / n as f64;
                    let mean_ggxh = gg.iter().zip(&xh).map(|(a2, b2)| a2 * b2).sum::<f64>()
                        / n as f64;
                    for j in 0..n {
                        dx[r * n + j] = inv * (gg[j] - mean_gg - xh[j] * mean_ggxh);
                        dg[j] += gs[j] * xh[j];
                        db[j] += gs[j];
                    }
                }
                self.add_grad(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
                self.add_grad(grads, *gamma, Tensor::new(vec![n], dg).unwrap());
                self.add_grad(grads, *beta, Tensor::new(vec![n], db).unwrap());
            }
            Op::ConcatLast(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (na, nb) = (ta.last_dim(), tb.last_dim());
                let rows = ta.leading();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for r in 0..rows {
                    let base = r * (na + nb);
                    da[r * na..(r + 1) * na].copy_from_slice(&g.data()[base..base + na]);
                    db[r * nb..(r + 1) * nb]
                        .copy_from_slice(&g.data()[base + na..base + na + nb]);
                }
                self.add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                self.add_grad(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
            }
            Op::Reshape(a) => {
                let ta = val(*a);
                let da = Tensor::new(ta.shape().to_vec(), g.data().to_vec()).unwrap();
                self.add_grad(grads, *a, da);
            }
            Op::IndexTime(a, t) => {
                let ta = val(*a);
                let (b, tt) = (ta.shape()[0], ta.shape()[1]);
                let rest: usize = ta.shape()[2..].iter().product();
                let mut da = vec![0.0; ta.len()];
                for bi in 0..b {
                    let dst = (bi * tt + t) * rest;
                    da[dst..dst + rest].copy_from_slice(&g.data()[bi * rest..(bi + 1) * rest]);
                }
                self.add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
            }
            Op::StackTime(parts) => {
                let t = parts.len();
                let first = val(parts[0]);
                let b = first.shape()[0];
                let rest: usize = first.shape()[1..].iter().product();
                for (ti, p) in parts.iter().enumerate() {
                    let mut dp = vec![0.0; b * rest];
                    for bi in 0..b {
                        let src = (bi * t + ti) * rest;
                        dp[bi * rest..(bi + 1) * rest]
                            .copy_from_slice(&g.data()[src..src + rest]);
                    }
                    let shape = val(*p).shape().to_vec();
                    self.add_grad(grads, *p, Tensor::new(shape, dp).unwrap());
                }
            }
            Op::SumTime(a) => {
                let ta = val(*a);
                let (b, t, d) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let mut da = vec![0.0; ta.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for di in 0..d {
                            da[(bi * t + ti) * d + di] = g.data()[bi * d + di];
                        }
                    }
                }
                self.add_grad(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
            }
            Op::ScaleRows { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let d = tx.last_dim();
                let mut dx = vec![0.0; tx.len()];
                let mut ds = vec![0.0; ts.len()];
                for (idx, gv) in g.data().iter().enumerate() {
                    let r = idx / d;
                    dx[idx] = gv * ts.data()[r];
                    ds[r] += gv * tx.data()[idx];
                }
                self.add_grad(grads, *x, Tensor::new(tx.shape().to_vec(), dx).unwrap());
                self.add_grad(grads, *s, Tensor::new(ts.shape().to_vec(), ds).unwrap());
            }
            Op::MeanAll(a) => {
                let ta = val(*a);
                let gv = g.item() / ta.len() as f64;
                self.add_grad(grads, *a, Tensor::full(ta.shape(), gv));
            }
            Op::SumAll(a) => {
                let ta = val(*a);
                self.add_grad(grads, *a, Tensor::full(ta.shape(), g.item()));
            }
            Op::WeightedBce {
                logits,
                labels,
                pos_weight,
            } => {
                let tz = val(*logits);
                let n = tz.len() as f64;
                let gv = g.item();
                let dz: Vec<f64> = tz
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&z, &y)| {
                        let s = sigmoid(z);
                        gv * (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n
                    })
                    .collect();
                self.add_grad(grads, *logits, Tensor::new(tz.shape().to_vec(), dz).unwrap());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_selects_with_identity_like_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 0.0]));
        let w = tape.leaf(t(&[2, 2], &[2.0, 0.0, 0.0, 3.0]));
        let b = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.linear(x, w).unwrap();
        let y = tape.add_bias(y, b).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 0.0]);
    }

    #[test]
    fn linear_zero_input_passes_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[0.0, 0.0]));
        let w = tape.leaf(t(&[2, 2], &[9.0, 9.0, 9.0, 9.0]));
        let b = tape.leaf(t(&[2], &[5.0, 7.0]));
        let y = tape.linear(x, w).unwrap();
        let y = tape.add_bias(y, b).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
    }

    #[test]
    fn linear_hand_case() {
        // x=[1,2], W=[[1,1],[1,1]], b=[1,0] → [4,3]
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let b = tape.leaf(t(&[2], &[1.0, 0.0]));
        let y = tape.linear(x, w).unwrap();
        let y = tape.add_bias(y, b).unwrap();
        // independent oracle: plain loops
        let (xv, wv, bv) = ([1.0, 2.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0]);
        let mut expect = [0.0; 2];
        for j in 0..2 {
            expect[j] = bv[j];
            for i in 0..2 {
                expect[j] += xv[i] * wv[i][j];
            }
        }
        assert_eq!(tape.value(y).data(), &expect);
        assert_eq!(expect, [4.0, 3.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0; 3]));
        let w = tape.leaf(t(&[2, 2], &[0.0; 4]));
        let err = tape.linear(x, w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_overflow_safety() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.softmax_last(a);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let b = tape.leaf(t(&[2], &[1000.0, 1000.0]));
        let y = tape.softmax_last(b);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form_exponentials() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let y = tape.softmax_last(a);
        let got = tape.value(y).data();
        for (g, e) in got.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let xs = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 17.0).collect();
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[4], &xs));
        let b = tape.leaf(t(&[4], &shifted));
        let ya = tape.softmax_last(a);
        let yb = tape.softmax_last(b);
        for (u, v) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_tanh_fixed_points() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1], &[0.0]));
        let s = tape.sigmoid(z);
        let h = tape.tanh(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(h).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_complement_identity() {
        let xs = [-3.7, -0.5, 0.1, 2.9, 11.0];
        for x in xs {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::scalar(x));
            let b = tape.leaf(Tensor::scalar(-x));
            let sa = tape.sigmoid(a);
            let sb = tape.sigmoid(b);
            let sum = tape.value(sa).item() + tape.value(sb).item();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_trivial_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1], &[0.0]));
        let l1 = tape.weighted_bce(z, &t(&[1], &[1.0]), 1.0).unwrap();
        assert!((tape.value(l1).item() - 2f64.ln()).abs() < 1e-12);
        let l0 = tape.weighted_bce(z, &t(&[1], &[0.0]), 1.0).unwrap();
        assert!((tape.value(l0).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_closed_form_weighted_positive() {
        // logit=2, y=1, pos_weight=3 → 3·ln(1+e^(−2))
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1], &[2.0]));
        let l = tape.weighted_bce(z, &t(&[1], &[1.0]), 3.0).unwrap();
        let expect = 3.0 * (1.0 + (-2f64).exp()).ln();
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_bad_labels() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1], &[0.0]));
        assert!(tape.weighted_bce(z, &t(&[1], &[0.5]), 1.0).is_err());
    }

    #[test]
    fn backward_sum_gives_all_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.sum_all(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[w.0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_of_product() {
        // loss = (w·x)² at w=3, x=2 → dloss/dw = 2·(wx)·x = 24
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let x = tape.leaf(Tensor::scalar(2.0));
        let wx = tape.mul(w, x).unwrap();
        let sq = tape.mul(wx, wx).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert!((grads[w.0].item() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn gradients_accumulate_across_multiple_uses() {
        // loss = w + w → dloss/dw = 2
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(5.0));
        let s = tape.add(w, w).unwrap();
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[w.0].item(), 2.0);
    }
}
