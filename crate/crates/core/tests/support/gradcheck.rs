//! Independent 64-bit reference implementations of every differentiable
//! operation plus a central finite-difference gradient checker. Nothing in
//! here calls into the engine's forward kernels: the engine is only used
//! to produce the analytic gradients being checked.

#![allow(dead_code)]

use difa::autodiff::{Activation, Parameter, Phase, RunningStats, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

// ---- reference forward passes (f64, naive loops) ----

pub fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }
}

pub fn ref_conv2d(x: &[f64], k: &[f64], d: &ConvDims) -> Vec<f64> {
    let (ho, wo) = d.out_hw();
    let mut out = vec![0.0; d.n * d.f * ho * wo];
    for n in 0..d.n {
        for f in 0..d.f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..d.c {
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                let xv = x[((n * d.c + c) * d.h + iy as usize) * d.w + ix as usize];
                                let kv = k[((f * d.c + c) * d.kh + ky) * d.kw + kx];
                                s += xv * kv;
                            }
                        }
                    }
                    out[((n * d.f + f) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    out
}

pub fn ref_maxpool(
    x: &[f64],
    nc: usize,
    h: usize,
    w: usize,
    win: usize,
    stride: usize,
) -> Vec<f64> {
    let ho = (h - win) / stride + 1;
    let wo = (w - win) / stride + 1;
    let mut out = Vec::new();
    for p in 0..nc {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        m = m.max(x[p * h * w + (oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn ref_activation(x: &[f64], kind: Activation) -> Vec<f64> {
    x.iter()
        .map(|&v| match kind {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(a) => {
                if v > 0.0 {
                    v
                } else {
                    a as f64 * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        })
        .collect()
}

pub fn ref_batchnorm_train(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i * d + j] = gamma[j] * (x[i * d + j] - mean) / (var + eps).sqrt() + beta[j];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn ref_batchnorm_eval(
    x: &[f64],
    n: usize,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = gamma[j] * (x[i * d + j] - mean[j]) / (var[j] + eps).sqrt() + beta[j];
        }
    }
    out
}

pub fn ref_softmax_ce(logits: &[f64], n: usize, k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[labels[i]].exp() / z).ln();
    }
    total / n as f64
}

pub fn ref_least_squares(pred: &[f64], target: f64) -> f64 {
    pred.iter().map(|p| (p - target).powi(2)).sum::<f64>() / pred.len() as f64
}

// ---- finite differences ----

/// Central differences of a scalar function of several flat inputs.
pub fn central_difference(
    f: &dyn Fn(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f64>],
    h: f64,
) -> Vec<Vec<f64>> {
    let mut grads = Vec::with_capacity(inputs.len());
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    for a in 0..inputs.len() {
        let mut g = vec![0.0; inputs[a].len()];
        for j in 0..inputs[a].len() {
            let orig = work[a][j];
            work[a][j] = orig + h;
            let up = f(&work);
            work[a][j] = orig - h;
            let down = f(&work);
            work[a][j] = orig;
            g[j] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Random values rounded to f32 and kept at least `gap` away from zero so
/// piecewise-linear kinks are never straddled by the finite difference.
fn sample(rng: &mut impl Rng, n: usize, scale: f32, gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(-scale..scale);
            if v.abs() < gap {
                gap * if v < 0.0 { -1.0 } else { 1.0 }
            } else {
                v
            }
        })
        .collect()
}

/// Distinct values, pairwise at least 0.01 apart, in random order.
fn distinct(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.01).collect();
    v.shuffle(rng);
    v
}

fn param(name: &str, shape: &[usize], data: Vec<f32>) -> Parameter {
    Parameter::new(name, Tensor::new(shape.to_vec(), data).unwrap())
}

/// Builds `sum(weights ⊙ out)` on the tape and returns the analytic
/// gradient of each parameter in order.
fn analytic(tape: Tape, out: Var, weights: &[f32], params: &[&Parameter]) -> Vec<Vec<f64>> {
    let mut tape = tape;
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(&Tensor::new(shape, weights.to_vec()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    params
        .iter()
        .map(|p| to_f64(grads.get(p.id()).unwrap_or(&vec![0.0; p.value().len()])))
        .collect()
}

fn max_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Outcome of one randomized gradient check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub op: &'static str,
    pub shape: String,
    pub max_abs_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_abs_err < FD_TOLERANCE
    }
}

pub fn check_matmul(rng: &mut impl Rng) -> CheckResult {
    let (m, k, n) = (
        rng.random_range(1..6),
        rng.random_range(1..6),
        rng.random_range(1..6),
    );
    check_matmul_dims(rng, m, k, n)
}

pub fn check_matmul_dims(rng: &mut impl Rng, m: usize, k: usize, n: usize) -> CheckResult {
    let a = param("a", &[m, k], sample(rng, m * k, 1.0, 0.0));
    let b = param("b", &[k, n], sample(rng, k * n, 1.0, 0.0));
    let w = sample(rng, m * n, 1.0, 0.0);
    let mut tape = Tape::new(0);
    let (va, vb) = (tape.param(&a, true), tape.param(&b, true));
    let out = tape.matmul(va, vb).unwrap();
    let got = analytic(tape, out, &w, &[&a, &b]);
    let wf = to_f64(&w);
    let f = |x: &[Vec<f64>]| dot(&ref_matmul(&x[0], &x[1], m, k, n), &wf);
    let want = central_difference(&f, &[to_f64(a.value()), to_f64(b.value())], FD_STEP);
    CheckResult {
        op: "matmul",
        shape: format!("{m}x{k} · {k}x{n}"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_conv2d(rng: &mut impl Rng) -> CheckResult {
    let kh = rng.random_range(1..4);
    let kw = rng.random_range(1..4);
    let d = ConvDims {
        n: rng.random_range(1..3),
        c: rng.random_range(1..3),
        h: rng.random_range(kh..kh + 4),
        w: rng.random_range(kw..kw + 4),
        f: rng.random_range(1..4),
        kh,
        kw,
        stride: rng.random_range(1..3),
        pad: rng.random_range(0..2),
    };
    check_conv2d_dims(rng, d)
}

pub fn check_conv2d_dims(rng: &mut impl Rng, d: ConvDims) -> CheckResult {
    let x = param(
        "x",
        &[d.n, d.c, d.h, d.w],
        sample(rng, d.n * d.c * d.h * d.w, 1.0, 0.0),
    );
    let k = param(
        "k",
        &[d.f, d.c, d.kh, d.kw],
        sample(rng, d.f * d.c * d.kh * d.kw, 0.5, 0.0),
    );
    let (ho, wo) = d.out_hw();
    let w = sample(rng, d.n * d.f * ho * wo, 1.0, 0.0);
    let mut tape = Tape::new(0);
    let (vx, vk) = (tape.param(&x, true), tape.param(&k, true));
    let out = tape.conv2d(vx, vk, d.stride, d.pad).unwrap();
    let got = analytic(tape, out, &w, &[&x, &k]);
    let wf = to_f64(&w);
    let f = |v: &[Vec<f64>]| dot(&ref_conv2d(&v[0], &v[1], &d), &wf);
    let want = central_difference(&f, &[to_f64(x.value()), to_f64(k.value())], FD_STEP);
    CheckResult {
        op: "conv2d",
        shape: format!("{:?}", d),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_maxpool(rng: &mut impl Rng) -> CheckResult {
    let win = rng.random_range(1..4);
    let stride = rng.random_range(1..3);
    let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
    let (h, w) = (
        rng.random_range(win..win + 5),
        rng.random_range(win..win + 5),
    );
    check_maxpool_dims(rng, n, c, h, w, win, stride)
}

pub fn check_maxpool_dims(
    rng: &mut impl Rng,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    win: usize,
    stride: usize,
) -> CheckResult {
    let x = param("x", &[n, c, h, w], distinct(rng, n * c * h * w));
    let ho = (h - win) / stride + 1;
    let wo = (w - win) / stride + 1;
    let wts = sample(rng, n * c * ho * wo, 1.0, 0.0);
    let mut tape = Tape::new(0);
    let vx = tape.param(&x, true);
    let out = tape.maxpool2d(vx, win, stride).unwrap();
    let got = analytic(tape, out, &wts, &[&x]);
    let wf = to_f64(&wts);
    let f = |v: &[Vec<f64>]| dot(&ref_maxpool(&v[0], n * c, h, w, win, stride), &wf);
    let want = central_difference(&f, &[to_f64(x.value())], FD_STEP);
    CheckResult {
        op: "maxpool2d",
        shape: format!("{n}x{c}x{h}x{w} win {win} stride {stride}"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_activation(rng: &mut impl Rng, kind: Activation) -> CheckResult {
    let len = rng.random_range(1..40);
    let x = param("x", &[len], sample(rng, len, 3.0, 0.01));
    let wts = sample(rng, len, 1.0, 0.0);
    let mut tape = Tape::new(0);
    let vx = tape.param(&x, true);
    let out = tape.activation(vx, kind).unwrap();
    let got = analytic(tape, out, &wts, &[&x]);
    let wf = to_f64(&wts);
    let f = |v: &[Vec<f64>]| dot(&ref_activation(&v[0], kind), &wf);
    let want = central_difference(&f, &[to_f64(x.value())], FD_STEP);
    CheckResult {
        op: match kind {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        },
        shape: format!("[{len}]"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_batchnorm_train(rng: &mut impl Rng) -> CheckResult {
    let (n, d) = (rng.random_range(2..9), rng.random_range(1..6));
    check_batchnorm_train_dims(rng, n, d)
}

pub fn check_batchnorm_train_dims(rng: &mut impl Rng, n: usize, d: usize) -> CheckResult {
    // A nearly constant column makes the normalisation so curved that the
    // finite difference itself is off; redraw until every column is spread.
    let values = loop {
        let v = sample(rng, n * d, 2.0, 0.0);
        let spread = (0..d).all(|j| {
            let col: Vec<f64> = (0..n).map(|i| v[i * d + j] as f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64 >= 0.25
        });
        if spread {
            break v;
        }
    };
    let x = param("x", &[n, d], values);
    let gamma = param("g", &[d], sample(rng, d, 1.5, 0.1));
    let beta = param("b", &[d], sample(rng, d, 1.0, 0.0));
    let wts = sample(rng, n * d, 1.0, 0.0);
    let stats = RunningStats::new(d);
    let mut tape = Tape::new(0);
    let (vx, vg, vb) = (
        tape.param(&x, true),
        tape.param(&gamma, true),
        tape.param(&beta, true),
    );
    let (out, _) = tape.batchnorm(vx, vg, vb, Phase::Train, &stats).unwrap();
    let got = analytic(tape, out, &wts, &[&x, &gamma, &beta]);
    let wf = to_f64(&wts);
    let eps = stats.eps as f64;
    let f = |v: &[Vec<f64>]| dot(&ref_batchnorm_train(&v[0], n, d, &v[1], &v[2], eps), &wf);
    let inputs = [
        to_f64(x.value()),
        to_f64(gamma.value()),
        to_f64(beta.value()),
    ];
    let want = central_difference(&f, &inputs, FD_STEP);
    CheckResult {
        op: "batchnorm(train)",
        shape: format!("{n}x{d}"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_batchnorm_eval(rng: &mut impl Rng) -> CheckResult {
    let (n, d) = (rng.random_range(1..9), rng.random_range(1..6));
    let x = param("x", &[n, d], sample(rng, n * d, 2.0, 0.0));
    let gamma = param("g", &[d], sample(rng, d, 1.5, 0.1));
    let beta = param("b", &[d], sample(rng, d, 1.0, 0.0));
    let mut stats = RunningStats::new(d);
    stats.mean = sample(rng, d, 1.0, 0.0);
    stats.var = (0..d).map(|_| rng.random_range(0.2f32..2.0)).collect();
    let wts = sample(rng, n * d, 1.0, 0.0);
    let mut tape = Tape::new(0);
    let (vx, vg, vb) = (
        tape.param(&x, true),
        tape.param(&gamma, true),
        tape.param(&beta, true),
    );
    let (out, _) = tape.batchnorm(vx, vg, vb, Phase::Eval, &stats).unwrap();
    let got = analytic(tape, out, &wts, &[&x, &gamma, &beta]);
    let wf = to_f64(&wts);
    let (mean, var, eps) = (to_f64(&stats.mean), to_f64(&stats.var), stats.eps as f64);
    let f = |v: &[Vec<f64>]| {
        dot(
            &ref_batchnorm_eval(&v[0], n, d, &v[1], &v[2], &mean, &var, eps),
            &wf,
        )
    };
    let inputs = [
        to_f64(x.value()),
        to_f64(gamma.value()),
        to_f64(beta.value()),
    ];
    let want = central_difference(&f, &inputs, FD_STEP);
    CheckResult {
        op: "batchnorm(eval)",
        shape: format!("{n}x{d}"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_softmax_ce(rng: &mut impl Rng) -> CheckResult {
    let (n, k) = (rng.random_range(1..7), rng.random_range(2..7));
    check_softmax_ce_dims(rng, n, k)
}

pub fn check_softmax_ce_dims(rng: &mut impl Rng, n: usize, k: usize) -> CheckResult {
    let logits = param("z", &[n, k], sample(rng, n * k, 3.0, 0.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut tape = Tape::new(0);
    let vz = tape.param(&logits, true);
    let loss = tape.softmax_cross_entropy(vz, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    let got = vec![to_f64(grads.get(logits.id()).unwrap())];
    let f = |v: &[Vec<f64>]| ref_softmax_ce(&v[0], n, k, &labels);
    let want = central_difference(&f, &[to_f64(logits.value())], FD_STEP);
    CheckResult {
        op: "softmax_cross_entropy",
        shape: format!("{n}x{k}"),
        max_abs_err: max_err(&got, &want),
    }
}

pub fn check_least_squares(rng: &mut impl Rng) -> CheckResult {
    let len = rng.random_range(1..30);
    let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
    let pred = param("p", &[len], sample(rng, len, 1.0, 0.0));
    let mut tape = Tape::new(0);
    let vp = tape.param(&pred, true);
    let loss = tape.least_squares(vp, target as f32).unwrap();
    let grads = tape.backward(loss).unwrap();
    let got = vec![to_f64(grads.get(pred.id()).unwrap())];
    let f = |v: &[Vec<f64>]| ref_least_squares(&v[0], target);
    let want = central_difference(&f, &[to_f64(pred.value())], FD_STEP);
    CheckResult {
        op: "least_squares",
        shape: format!("[{len}] target {target}"),
        max_abs_err: max_err(&got, &want),
    }
}

/// Fully connected layer `x·W + b` followed by column concatenation with
/// another input: covers `add_bias` and `concat_cols`.
pub fn check_affine_concat(rng: &mut impl Rng) -> CheckResult {
    let (n, i, o, e) = (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..4),
    );
    let x = param("x", &[n, i], sample(rng, n * i, 1.0, 0.0));
    let wm = param("w", &[i, o], sample(rng, i * o, 1.0, 0.0));
    let b = param("b", &[o], sample(rng, o, 1.0, 0.0));
    let extra = param("e", &[n, e], sample(rng, n * e, 1.0, 0.0));
    let wts = sample(rng, n * (o + e), 1.0, 0.0);
    let mut tape = Tape::new(0);
    let (vx, vw, vb, ve) = (
        tape.param(&x, true),
        tape.param(&wm, true),
        tape.param(&b, true),
        tape.param(&extra, true),
    );
    let h = tape.matmul(vx, vw).unwrap();
    let h = tape.add_bias(h, vb).unwrap();
    let out = tape.concat_cols(h, ve).unwrap();
    let got = analytic(tape, out, &wts, &[&x, &wm, &b, &extra]);
    let wf = to_f64(&wts);
    let f = |v: &[Vec<f64>]| {
        let mut h = ref_matmul(&v[0], &v[1], n, i, o);
        for r in 0..n {
            for c in 0..o {
                h[r * o + c] += v[2][c];
            }
        }
        let mut cat = Vec::new();
        for r in 0..n {
            cat.extend_from_slice(&h[r * o..(r + 1) * o]);
            cat.extend_from_slice(&v[3][r * e..(r + 1) * e]);
        }
        dot(&cat, &wf)
    };
    let inputs = [
        to_f64(x.value()),
        to_f64(wm.value()),
        to_f64(b.value()),
        to_f64(extra.value()),
    ];
    let want = central_difference(&f, &inputs, FD_STEP);
    CheckResult {
        op: "add_bias+concat",
        shape: format!("{n}x{i}->{o} ‖ {e}"),
        max_abs_err: max_err(&got, &want),
    }
}

/// Dropout in train mode is linear in its input given the drawn mask; the
/// mask is recovered from the forward output and replayed in the oracle.
pub fn check_dropout(rng: &mut impl Rng) -> CheckResult {
    let len = rng.random_range(1..50);
    let rate = rng.random_range(0.1f32..0.9);
    let x = param("x", &[len], sample(rng, len, 1.0, 0.05));
    let wts = sample(rng, len, 1.0, 0.0);
    let mut tape = Tape::new(rng.random());
    let vx = tape.param(&x, true);
    let out = tape.dropout(vx, rate, Phase::Train).unwrap();
    let mask: Vec<f64> = tape
        .value(out)
        .iter()
        .zip(x.value())
        .map(|(y, x)| (*y / *x) as f64)
        .collect();
    let got = analytic(tape, out, &wts, &[&x]);
    let wf = to_f64(&wts);
    let f = |v: &[Vec<f64>]| {
        v[0].iter()
            .zip(&mask)
            .zip(&wf)
            .map(|((a, m), w)| a * m * w)
            .sum()
    };
    let want = central_difference(&f, &[to_f64(x.value())], FD_STEP);
    CheckResult {
        op: "dropout(train)",
        shape: format!("[{len}] rate {rate:.2}"),
        max_abs_err: max_err(&got, &want),
    }
}

/// Every checker, each run once with the given generator.
pub fn all_checks(rng: &mut impl Rng) -> Vec<CheckResult> {
    vec![
        check_matmul(rng),
        check_conv2d(rng),
        check_maxpool(rng),
        check_activation(rng, Activation::Relu),
        check_activation(rng, Activation::LeakyRelu(0.2)),
        check_activation(rng, Activation::Tanh),
        check_activation(rng, Activation::Sigmoid),
        check_batchnorm_train(rng),
        check_batchnorm_eval(rng),
        check_softmax_ce(rng),
        check_least_squares(rng),
        check_affine_concat(rng),
        check_dropout(rng),
    ]
}
