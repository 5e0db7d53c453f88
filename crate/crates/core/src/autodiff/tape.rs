//! Reverse-mode tape. Every operation appends a node holding its output
//! value plus whatever the backward rule needs; `backward` walks the nodes
//! in exact reverse order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::param::{ParamId, Parameter};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

/// Train/eval switch for dropout and batch normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl RunningStats {
    pub const MOMENTUM: f32 = 0.99;
    pub const EPS: f32 = 1e-5;

    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Per-column mean and (biased) variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f32,
    },
    Sum {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<f32>,
        labels: Vec<usize>,
    },
    LeastSquares {
        pred: Var,
        target: f32,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    tracked: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Gradients produced by one backward pass, keyed by parameter identity.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: HashMap<ParamId, Vec<f32>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Adds the stored gradient (if any) into `param.grad`. Returns whether
    /// the parameter was reached by the backward pass.
    pub fn accumulate_into(&self, param: &mut Parameter) -> Result<bool> {
        match self.by_param.get(&param.id()) {
            Some(g) => {
                param.tensor_mut().accumulate_grad(g)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn accumulate_all<'a>(
        &self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
    ) -> Result<usize> {
        let mut reached = 0;
        for p in params {
            if self.accumulate_into(p)? {
                reached += 1;
            }
        }
        Ok(reached)
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(0)
    }
}

impl Tape {
    /// `seed` drives dropout masks drawn on this tape.
    pub fn new(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Constant input; gradients are not propagated into it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Records a parameter. With `trainable == false` it enters as a
    /// constant and no gradient is computed for it.
    pub fn param(&mut self, p: &Parameter, trainable: bool) -> Var {
        let op = if trainable {
            Op::Param(p.id())
        } else {
            Op::Leaf
        };
        self.push(p.shape().to_vec(), p.value().to_vec(), op, trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul of {:?} and {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut out,
            false,
        );
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, tracked))
    }

    /// Adds `bias[c]` to every element of channel `c` (dimension 1).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias);
        if sx.len() < 2 || sb.iter().product::<usize>() != sx[1] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match channel dimension of {:?}",
                sb, sx
            )));
        }
        let channels = sx[1];
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).to_vec();
        let mut out = self.value(x).to_vec();
        for (chunk_idx, chunk) in out.chunks_mut(inner.max(1)).enumerate() {
            let c = chunk_idx % channels;
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(sx, out, Op::AddBias { x, bias }, tracked))
    }

    /// Cross-correlation with zero padding over an `N×C×H×W` input.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::Dimension(format!(
                "conv2d input {:?} with kernel {:?}",
                sx, sk
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be at least 1".into()));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (f, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension(format!(
                "kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(self.value(x), &geom);
        let ck = c * kh * kw;
        let np = n * ho * wo;
        let mut tmp = vec![0.0; f * np];
        gemm(
            f,
            ck,
            np,
            self.value(kernel),
            false,
            &cols,
            false,
            &mut tmp,
            false,
        );
        // [F × N·P] -> [N × F × P]
        let p = ho * wo;
        let mut out = vec![0.0; n * f * p];
        for fi in 0..f {
            for ni in 0..n {
                out[(ni * f + fi) * p..(ni * f + fi + 1) * p]
                    .copy_from_slice(&tmp[fi * np + ni * p..fi * np + (ni + 1) * p]);
            }
        }
        let tracked = self.tracked(x) || self.tracked(kernel);
        let cols = if tracked { cols } else { Vec::new() };
        Ok(self.push(
            vec![n, f, ho, wo],
            out,
            Op::Conv2d {
                x,
                kernel,
                geom,
                cols,
            },
            tracked,
        ))
    }

    /// Max pooling; backward routes to the first row-major maximum.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(Error::Dimension(format!("maxpool2d on {:?}", sx)));
        }
        if window == 0 || stride == 0 {
            return Err(Error::Parameter(
                "pool window and stride must be ≥ 1".into(),
            ));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if window > h || window > w {
            return Err(Error::Dimension(format!(
                "pool window {} exceeds spatial size {}x{}",
                window, h, w
            )));
        }
        let ho = (h - window) / stride + 1;
        let wo = (w - window) / stride + 1;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(vec![n, c, ho, wo], out, Op::MaxPool { x, argmax }, tracked))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(a) = kind {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Parameter(format!(
                    "leaky_relu slope {a} outside (0, 1)"
                )));
            }
        }
        let out: Vec<f32> = self
            .value(x)
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::LeakyRelu(a) => {
                    if v > 0.0 {
                        v
                    } else {
                        a * v
                    }
                }
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => sigmoid(v),
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape, out, Op::Act { x, kind }, tracked))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Batch normalisation over an `N×D` input. In train mode the batch
    /// statistics are returned so the owner can fold them into its
    /// running statistics; eval mode normalises with `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        phase: Phase,
        stats: &RunningStats,
    ) -> Result<(Var, Option<BatchStats>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::Dimension(format!(
                "batchnorm expects N×D, got {:?}",
                sx
            )));
        }
        let (n, d) = (sx[0], sx[1]);
        if self.value(gamma).len() != d
            || self.value(beta).len() != d
            || stats.mean.len() != d
            || stats.var.len() != d
        {
            return Err(Error::Dimension(format!(
                "batchnorm width {} does not match gamma/beta/statistics",
                d
            )));
        }
        let eps = stats.eps;
        let (mean, var, batch) = match phase {
            Phase::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch normalisation in train mode needs N ≥ 2, got {n}"
                    )));
                }
                let xv = self.value(x);
                let mut mean = vec![0.0f64; d];
                for row in xv.chunks(d) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v as f64;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0f64; d];
                for row in xv.chunks(d) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let dv = v as f64 - m;
                        *s += dv * dv;
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let mean: Vec<f32> = mean.into_iter().map(|v| v as f32).collect();
                let var: Vec<f32> = var.into_iter().map(|v| v as f32).collect();
                let batch = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(batch))
            }
            Phase::Eval => (stats.mean.clone(), stats.var.clone(), None),
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let xv = self.value(x);
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xv[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let v = self.push(
            sx,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: phase == Phase::Train,
            },
            tracked,
        );
        Ok((v, batch))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 − rate)` in train
    /// mode; eval mode (and `rate == 0`) is the identity.
    pub fn dropout(&mut self, x: Var, rate: f32, phase: Phase) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if phase == Phase::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let len = self.value(x).len();
        let mask: Vec<f32> = (0..len)
            .map(|_| {
                if self.rng.random::<f32>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape, out, Op::Dropout { x, mask }, tracked))
    }

    /// Column-wise concatenation of two `N×_` matrices.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Batch(format!(
                "cannot concatenate {:?} and {:?} column-wise",
                sa, sb
            )));
        }
        let (n, wa, wb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (wa + wb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a)[i * wa..(i + 1) * wa]);
            out.extend_from_slice(&self.value(b)[i * wb..(i + 1) * wb]);
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![n, wa + wb], out, Op::Concat { a, b }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(x),
                shape
            )));
        }
        let out = self.value(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape, out, Op::Reshape { x }, tracked))
    }

    /// `N×...` to `N×rest`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product();
        self.reshape(x, vec![n, rest])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(shape, out, Op::Add { a, b }, tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(shape, out, Op::Mul { a, b }, tracked))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        self.push(shape, out, Op::Scale { x, factor }, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let tracked = self.tracked(x);
        self.push(vec![1], vec![s as f32], Op::Sum { x }, tracked)
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Batch(format!(
                "logits {:?} with {} labels",
                s,
                labels.len()
            )));
        }
        let (n, k) = (s[0], s[1]);
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Label {
                index,
                label,
                classes: k,
            });
        }
        if n == 0 {
            return Err(Error::Batch("cross-entropy over an empty batch".into()));
        }
        let probs = softmax_slice(self.value(logits), k);
        let mut loss = 0.0f64;
        for (i, &l) in labels.iter().enumerate() {
            let row = &self.value(logits)[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = row
                .iter()
                .map(|&v| ((v - max) as f64).exp())
                .sum::<f64>()
                .ln();
            loss += lse - (row[l] - max) as f64;
        }
        let loss = (loss / n as f64) as f32;
        let tracked = self.tracked(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            tracked,
        ))
    }

    /// Mean of `(pred − target)²` over all elements.
    pub fn least_squares(&mut self, pred: Var, target: f32) -> Result<Var> {
        let v = self.value(pred);
        if v.is_empty() {
            return Err(Error::Batch(
                "least-squares loss over an empty tensor".into(),
            ));
        }
        let s: f64 = v.iter().map(|&p| ((p - target) as f64).powi(2)).sum();
        let loss = (s / v.len() as f64) as f32;
        let tracked = self.tracked(pred);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::LeastSquares { pred, target },
            tracked,
        ))
    }

    /// Runs the reverse sweep from a scalar `loss` and returns the gradient
    /// of every trainable parameter reached. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes, .. } = self;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Rank(nodes[loss.0].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match out.by_param.get_mut(id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.by_param.insert(*id, g);
                    }
                },
                Op::MatMul { a, b } => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if nodes[a.0].tracked {
                        let ga = grad_slot(&mut grads, *a, m * k);
                        gemm(m, n, k, &g, false, &nodes[b.0].value, true, ga, true);
                    }
                    if nodes[b.0].tracked {
                        let gb = grad_slot(&mut grads, *b, k * n);
                        gemm(k, m, n, &nodes[a.0].value, true, &g, false, gb, true);
                    }
                }
                Op::AddBias { x, bias } => {
                    if nodes[x.0].tracked {
                        let gx = grad_slot(&mut grads, *x, g.len());
                        gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    if nodes[bias.0].tracked {
                        let channels = node.shape[1];
                        let inner: usize = node.shape[2..].iter().product::<usize>().max(1);
                        let gb = grad_slot(&mut grads, *bias, channels);
                        for (chunk_idx, chunk) in g.chunks(inner).enumerate() {
                            gb[chunk_idx % channels] += chunk.iter().sum::<f32>();
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    kernel,
                    geom,
                    cols,
                } => {
                    let p = geom.ho * geom.wo;
                    let np = geom.n * p;
                    let ck = geom.c * geom.kh * geom.kw;
                    // [N × F × P] -> [F × N·P]
                    let mut gr = vec![0.0; geom.f * np];
                    for ni in 0..geom.n {
                        for fi in 0..geom.f {
                            gr[fi * np + ni * p..fi * np + (ni + 1) * p].copy_from_slice(
                                &g[(ni * geom.f + fi) * p..(ni * geom.f + fi + 1) * p],
                            );
                        }
                    }
                    if nodes[kernel.0].tracked {
                        let gk = grad_slot(&mut grads, *kernel, geom.f * ck);
                        gemm(geom.f, np, ck, &gr, false, cols, true, gk, true);
                    }
                    if nodes[x.0].tracked {
                        let mut gcols = vec![0.0; ck * np];
                        gemm(
                            ck,
                            geom.f,
                            np,
                            &nodes[kernel.0].value,
                            true,
                            &gr,
                            false,
                            &mut gcols,
                            false,
                        );
                        let gx = grad_slot(&mut grads, *x, geom.n * geom.c * geom.h * geom.w);
                        col2im_add(&gcols, geom, gx);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let len = nodes[x.0].value.len();
                    let gx = grad_slot(&mut grads, *x, len);
                    for (&idx, &gv) in argmax.iter().zip(&g) {
                        gx[idx] += gv;
                    }
                }
                Op::Act { x, kind } => {
                    let xv = &nodes[x.0].value;
                    let yv = &node.value;
                    let gx = grad_slot(&mut grads, *x, xv.len());
                    for j in 0..g.len() {
                        let d = match kind {
                            Activation::Relu => {
                                if xv[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::LeakyRelu(a) => {
                                if xv[j] > 0.0 {
                                    1.0
                                } else {
                                    *a
                                }
                            }
                            Activation::Tanh => 1.0 - yv[j] * yv[j],
                            Activation::Sigmoid => yv[j] * (1.0 - yv[j]),
                        };
                        gx[j] += g[j] * d;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, d) = (node.shape[0], node.shape[1]);
                    let gam = nodes[gamma.0].value.clone();
                    if nodes[gamma.0].tracked {
                        let gg = grad_slot(&mut grads, *gamma, d);
                        for i in 0..n {
                            for j in 0..d {
                                gg[j] += g[i * d + j] * xhat[i * d + j];
                            }
                        }
                    }
                    if nodes[beta.0].tracked {
                        let gb = grad_slot(&mut grads, *beta, d);
                        for i in 0..n {
                            for j in 0..d {
                                gb[j] += g[i * d + j];
                            }
                        }
                    }
                    if nodes[x.0].tracked {
                        let gx = grad_slot(&mut grads, *x, n * d);
                        if *batch_stats {
                            let nf = n as f32;
                            for j in 0..d {
                                let mut s1 = 0.0f32;
                                let mut s2 = 0.0f32;
                                for i in 0..n {
                                    let dh = g[i * d + j] * gam[j];
                                    s1 += dh;
                                    s2 += dh * xhat[i * d + j];
                                }
                                for i in 0..n {
                                    let dh = g[i * d + j] * gam[j];
                                    gx[i * d + j] +=
                                        inv_std[j] / nf * (nf * dh - s1 - xhat[i * d + j] * s2);
                                }
                            }
                        } else {
                            for i in 0..n {
                                for j in 0..d {
                                    gx[i * d + j] += g[i * d + j] * gam[j] * inv_std[j];
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = grad_slot(&mut grads, *x, mask.len());
                    for j in 0..g.len() {
                        gx[j] += g[j] * mask[j];
                    }
                }
                Op::Concat { a, b } => {
                    let n = node.shape[0];
                    let wa = nodes[a.0].shape[1];
                    let wb = nodes[b.0].shape[1];
                    if nodes[a.0].tracked {
                        let ga = grad_slot(&mut grads, *a, n * wa);
                        for i in 0..n {
                            for j in 0..wa {
                                ga[i * wa + j] += g[i * (wa + wb) + j];
                            }
                        }
                    }
                    if nodes[b.0].tracked {
                        let gb = grad_slot(&mut grads, *b, n * wb);
                        for i in 0..n {
                            for j in 0..wb {
                                gb[i * wb + j] += g[i * (wa + wb) + wa + j];
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Add { a, b } => {
                    for v in [a, b] {
                        if nodes[v.0].tracked {
                            let gv = grad_slot(&mut grads, *v, g.len());
                            gv.iter_mut().zip(&g).for_each(|(s, t)| *s += t);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if nodes[a.0].tracked {
                        let bv = &nodes[b.0].value;
                        let ga = grad_slot(&mut grads, *a, g.len());
                        for j in 0..g.len() {
                            ga[j] += g[j] * bv[j];
                        }
                    }
                    if nodes[b.0].tracked {
                        let av = &nodes[a.0].value;
                        let gb = grad_slot(&mut grads, *b, g.len());
                        for j in 0..g.len() {
                            gb[j] += g[j] * av[j];
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    let gx = grad_slot(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b * factor);
                }
                Op::Sum { x } => {
                    let len = nodes[x.0].value.len();
                    let gx = grad_slot(&mut grads, *x, len);
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
                Op::SoftmaxCe {
                    logits,
                    probs,
                    labels,
                } => {
                    let k = nodes[logits.0].shape[1];
                    let n = labels.len();
                    let scale = g[0] / n as f32;
                    let gl = grad_slot(&mut grads, *logits, n * k);
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            gl[i * k + j] += (probs[i * k + j] - onehot) * scale;
                        }
                    }
                }
                Op::LeastSquares { pred, target } => {
                    let pv = &nodes[pred.0].value;
                    let scale = 2.0 * g[0] / pv.len() as f32;
                    let gp = grad_slot(&mut grads, *pred, pv.len());
                    for j in 0..pv.len() {
                        gp[j] += (pv[j] - target) * scale;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn grad_slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_slice(logits: &[f32], k: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    out
}

/// Row-wise softmax of an `N×K` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::Dimension(format!(
            "softmax expects N×K, got {:?}",
            logits.shape()
        )));
    }
    let k = logits.shape()[1];
    Tensor::new(logits.shape().to_vec(), softmax_slice(logits.data(), k))
}

/// `[C·kh·kw × N·Ho·Wo]` patch matrix.
fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let p = g.ho * g.wo;
    let np = g.n * p;
    let mut cols = vec![0.0; g.c * g.kh * g.kw * np];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            dst[ni * p + oy * g.wo + ox] = plane[iy * g.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f32], g: &ConvGeom, gx: &mut [f32]) {
    let p = g.ho * g.wo;
    let np = g.n * p;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let base = (ni * g.c + ci) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            gx[base + iy * g.w + ix as usize] += src[ni * p + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
