//! Independent reference implementations used only to check the fast paths.
//!
//! Everything here is written in plain `f64` loops straight from the layer
//! definitions and never calls into [`crate::nn`] forward kernels. Enabled for
//! unit tests and, for downstream test suites, with the `oracle` feature.

use rand::seq::SliceRandom;
use indexmap::IndexMap;
use rand::Rng;

use crate::model::{conv_name, ArchSpec, HeadSpec, Model, IN_CHANNELS, KERNEL};
use crate::nn;
use crate::tensor::Tensor;

/// Largest guarded relative error between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        }
    }

    fn compare(&mut self, analytic: &[f32], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.iter().zip(numeric) {
            let a = a as f64;
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(REL_FLOOR);
            self.max_abs_error = self.max_abs_error.max(abs);
            self.max_rel_error = self.max_rel_error.max(rel);
            self.checked += 1;
        }
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            checked: self.checked + other.checked,
        }
    }
}

/// Denominator floor for the relative error, so components whose true
/// gradient is (near) zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-2;

/// Finite-difference step.
pub const FD_EPS: f64 = 1e-3;

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Direct sliding-window convolution, zero padding outside bounds.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_direct_f64(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    weights: &[f64],
    [o, _, kh, kw]: [usize; 4],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for f in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = bias[f];
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = (y * stride + i) as isize - pad as isize;
                                let sx = (xo * stride + j) as isize - pad as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + sy as usize) * w + sx as usize];
                                let wv = weights[((f * c + ch) * kh + i) * kw + j];
                                s += xv * wv;
                            }
                        }
                    }
                    out[((b * o + f) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn conv2d_direct(x: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let xs: [usize; 4] = x.shape().try_into().expect("NCHW input");
    let ws: [usize; 4] = weights.shape().try_into().expect("OIHW weights");
    conv2d_direct_f64(&to_f64(x), xs, &to_f64(weights), ws, &to_f64(bias), stride, pad).0
}

pub fn maxpool2x2_f64(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let at = |dy: usize, dx: usize| x[p * h * w + (2 * y + dy) * w + 2 * xo + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

pub fn gap_f64(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    x.chunks(h * w).take(n * c).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect()
}

pub fn dense_f64(x: &[f64], n: usize, k: usize, weights: &[f64], m: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        for j in 0..m {
            out[r * m + j] = bias[j] + (0..k).map(|p| x[r * k + p] * weights[p * m + j]).sum::<f64>();
        }
    }
    out
}

pub fn softmax_ce_f64(logits: &[f64], c: usize, targets: &[usize]) -> f64 {
    let n = targets.len();
    let mut loss = 0.0;
    for (row, &t) in logits.chunks(c).zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[t];
    }
    loss / n as f64
}

pub fn check_conv(
    rng: &mut impl Rng,
    xs: [usize; 4],
    filters: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> GradReport {
    let ws = [filters, xs[1], k, k];
    let x = Tensor::new(xs, random_vec(rng, xs.iter().product())).unwrap();
    let w = Tensor::new(ws, random_vec(rng, ws.iter().product())).unwrap();
    let b = Tensor::new([filters], random_vec(rng, filters)).unwrap();
    let y = nn::conv2d(&x, &w, &b, stride, pad).unwrap();
    let proj: Vec<f64> = random_vec(rng, y.len()).into_iter().map(f64::from).collect();
    let d_out = Tensor::new(y.shape().to_vec(), proj.iter().map(|&v| v as f32).collect()).unwrap();
    let g = nn::conv2d_grads(&x, &w, &b, stride, pad, &d_out, true).unwrap();

    let (x64, w64, b64) = (to_f64(&x), to_f64(&w), to_f64(&b));
    let loss = |xv: &[f64], wv: &[f64], bv: &[f64]| dot(&conv2d_direct_f64(xv, xs, wv, ws, bv, stride, pad).0, &proj);
    let mut report = GradReport::new();
    report.compare(g.d_input.unwrap().data(), &central_difference(|v| loss(v, &w64, &b64), &x64, FD_EPS));
    report.compare(g.d_weights.data(), &central_difference(|v| loss(&x64, v, &b64), &w64, FD_EPS));
    report.compare(g.d_bias.data(), &central_difference(|v| loss(&x64, &w64, v), &b64, FD_EPS));
    report
}

/// Inputs are a shuffled ladder of well-separated values so no window has a
/// near-tie that a finite-difference step could flip.
pub fn check_maxpool(rng: &mut impl Rng, xs: [usize; 4]) -> GradReport {
    let n: usize = xs.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 1.0 + rng.gen_range(0.0..0.01)).collect();
    vals.shuffle(rng);
    let x = Tensor::new(xs, vals).unwrap();
    let (y, mask) = nn::maxpool2d_forward(&x).unwrap();
    let proj: Vec<f64> = random_vec(rng, y.len()).into_iter().map(f64::from).collect();
    let d_out = Tensor::new(y.shape().to_vec(), proj.iter().map(|&v| v as f32).collect()).unwrap();
    let dx = nn::maxpool2d_backward(&mask, &d_out).unwrap();
    let mut report = GradReport::new();
    let numeric = central_difference(|v| dot(&maxpool2x2_f64(v, xs), &proj), &to_f64(&x), FD_EPS);
    report.compare(dx.data(), &numeric);
    report
}

pub fn check_gap(rng: &mut impl Rng, xs: [usize; 4]) -> GradReport {
    let x = Tensor::new(xs, random_vec(rng, xs.iter().product())).unwrap();
    let proj: Vec<f64> = random_vec(rng, xs[0] * xs[1]).into_iter().map(f64::from).collect();
    let d_out = Tensor::new([xs[0], xs[1]], proj.iter().map(|&v| v as f32).collect()).unwrap();
    let dx = nn::global_avg_pool_backward(crate::tensor::Shape4::of(&x).unwrap(), &d_out).unwrap();
    let mut report = GradReport::new();
    let numeric = central_difference(|v| dot(&gap_f64(v, xs), &proj), &to_f64(&x), FD_EPS);
    report.compare(dx.data(), &numeric);
    report
}

pub fn check_dense(rng: &mut impl Rng, n: usize, k: usize, m: usize) -> GradReport {
    let x = Tensor::new([n, k], random_vec(rng, n * k)).unwrap();
    let w = Tensor::new([k, m], random_vec(rng, k * m)).unwrap();
    let b = Tensor::new([m], random_vec(rng, m)).unwrap();
    let proj: Vec<f64> = random_vec(rng, n * m).into_iter().map(f64::from).collect();
    let d_out = Tensor::new([n, m], proj.iter().map(|&v| v as f32).collect()).unwrap();
    let g = nn::dense_backward(&x, &w, &b, &d_out).unwrap();
    let (x64, w64, b64) = (to_f64(&x), to_f64(&w), to_f64(&b));
    let loss = |xv: &[f64], wv: &[f64], bv: &[f64]| dot(&dense_f64(xv, n, k, wv, m, bv), &proj);
    let mut report = GradReport::new();
    report.compare(g.d_input.data(), &central_difference(|v| loss(v, &w64, &b64), &x64, FD_EPS));
    report.compare(g.d_params["weights"].data(), &central_difference(|v| loss(&x64, v, &b64), &w64, FD_EPS));
    report.compare(g.d_params["bias"].data(), &central_difference(|v| loss(&x64, &w64, v), &b64, FD_EPS));
    report
}

/// Inputs are kept at least 0.05 away from the kink at zero.
pub fn check_relu(rng: &mut impl Rng, n: usize) -> GradReport {
    let vals: Vec<f32> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05f32..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let x = Tensor::new([n], vals).unwrap();
    let proj: Vec<f64> = random_vec(rng, n).into_iter().map(f64::from).collect();
    let d_out = Tensor::new([n], proj.iter().map(|&v| v as f32).collect()).unwrap();
    let dx = nn::relu_backward(&x, &d_out).unwrap();
    let relu64 = |v: &[f64]| v.iter().map(|&a| a.max(0.0)).collect::<Vec<_>>();
    let mut report = GradReport::new();
    report.compare(dx.data(), &central_difference(|v| dot(&relu64(v), &proj), &to_f64(&x), FD_EPS));
    report
}

pub fn check_softmax_ce(rng: &mut impl Rng, n: usize, c: usize) -> GradReport {
    let logits = Tensor::new([n, c], random_vec(rng, n * c).into_iter().map(|v| 3.0 * v).collect()).unwrap();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let probs = nn::softmax(&logits).unwrap();
    let d = nn::softmax_cross_entropy_backward(&probs, &targets).unwrap();
    let mut report = GradReport::new();
    let numeric = central_difference(|v| softmax_ce_f64(v, c, &targets), &to_f64(&logits), FD_EPS);
    report.compare(d.data(), &numeric);
    report
}

/// Per-class `(precision, recall, f1, support)` and accuracy computed
/// directly from a list of `(true, predicted)` pairs.
pub fn metrics_from_pairs(pairs: &[(usize, usize)], classes: usize) -> (Vec<(f64, f64, f64, usize)>, f64) {
    let rows = (0..classes)
        .map(|k| {
            let tp = pairs.iter().filter(|&&(t, p)| t == k && p == k).count();
            let fp = pairs.iter().filter(|&&(t, p)| t != k && p == k).count();
            let fn_ = pairs.iter().filter(|&&(t, p)| t == k && p != k).count();
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (precision, recall, f1, tp + fn_)
        })
        .collect();
    let correct = pairs.iter().filter(|&&(t, p)| t == p).count();
    (rows, correct as f64 / pairs.len() as f64)
}

/// Mean cross-entropy of a whole model, recomputed in `f64` from the layer
/// definitions with `params` replacing the model's own values.
pub fn model_loss_f64(
    spec: &ArchSpec,
    params: &IndexMap<String, Vec<f64>>,
    x: &[f64],
    [n, _, h, w]: [usize; 4],
    targets: &[usize],
) -> f64 {
    let (mut act, mut c, mut side) = (x.to_vec(), IN_CHANNELS, (h, w));
    for (bi, block) in spec.blocks.iter().enumerate() {
        for ci in 0..block.convs {
            let wt = &params[&conv_name(bi + 1, ci + 1, "w")];
            let b = &params[&conv_name(bi + 1, ci + 1, "b")];
            let shape = [block.filters, c, KERNEL, KERNEL];
            act = conv2d_direct_f64(&act, [n, c, side.0, side.1], wt, shape, b, 1, 1).0;
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            c = block.filters;
        }
        act = maxpool2x2_f64(&act, [n, c, side.0, side.1]);
        side = (side.0 / 2, side.1 / 2);
    }
    let mut width = match spec.head {
        HeadSpec::Gap => {
            act = gap_f64(&act, [n, c, side.0, side.1]);
            c
        }
        HeadSpec::Fc(_) => c * side.0 * side.1,
    };
    if let HeadSpec::Fc(widths) = &spec.head {
        for (i, &m) in widths.iter().enumerate() {
            let (wt, b) = (&params[&format!("head.fc{}.w", i + 1)], &params[&format!("head.fc{}.b", i + 1)]);
            act = dense_f64(&act, n, width, wt, m, b);
            act.iter_mut().for_each(|v| *v = v.max(0.0));
            width = m;
        }
    }
    let logits = dense_f64(&act, n, width, &params["head.out.w"], spec.num_classes, &params["head.out.b"]);
    softmax_ce_f64(&logits, spec.num_classes, targets)
}

/// Compares [`Model::backward`] against central differences of
/// [`model_loss_f64`] for every trainable parameter. A whole network has many
/// ReLU and pooling kinks, so `eps` should be much smaller than [`FD_EPS`].
pub fn check_model(model: &Model, batch: &Tensor, targets: &[usize], eps: f64) -> GradReport {
    let xs: [usize; 4] = batch.shape().try_into().expect("NCHW batch");
    let (trace, acts) = model.forward_train(batch).unwrap();
    let d_logits = nn::softmax_cross_entropy_backward(&trace.probs, targets).unwrap();
    let grads = model.backward(acts, &d_logits).unwrap();
    let x64 = to_f64(batch);
    let base: IndexMap<String, Vec<f64>> = model.params().iter().map(|(k, t)| (k.clone(), to_f64(t))).collect();
    let mut report = GradReport::new();
    for name in model.trainable_names() {
        let numeric = central_difference(
            |v| {
                let mut p = base.clone();
                p[name] = v.to_vec();
                model_loss_f64(model.spec(), &p, &x64, xs, targets)
            },
            &base[name],
            eps,
        );
        report.compare(grads[name].data(), &numeric);
    }
    report
}
