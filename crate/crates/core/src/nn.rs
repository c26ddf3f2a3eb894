//! Layer kernels with exact backward passes.
//!
//! Convolution runs through im2col + [`gemm`](crate::tensor); the naive
//! sliding-window loop lives in [`crate::oracle`] and is only used by tests.

use indexmap::IndexMap;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, transpose, Shape4, Tensor};

/// Floor applied to probabilities before taking the log in cross-entropy.
pub const PROB_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[out_ch, in_ch, kh, kw]`
    pub weights: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let p = Self {
            weights,
            bias,
            stride,
            padding,
        };
        p.geometry()?;
        Ok(p)
    }

    /// Same-padding convolution with stride 1.
    pub fn same(weights: Tensor, bias: Tensor) -> Result<Self> {
        let k = weights.shape().get(2).copied().unwrap_or(1);
        Self::new(weights, bias, 1, k.saturating_sub(1) / 2)
    }

    fn geometry(&self) -> Result<ConvGeometry> {
        ConvGeometry::new(&self.weights, &self.bias, self.stride, self.padding)
    }
}

/// Shape facts shared by the forward and backward convolution kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(weights: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [out_ch, in_ch, kh, kw] = match *weights.shape() {
            [o, c, h, w] => [o, c, h, w],
            _ => {
                return Err(shape_err(format!(
                    "conv weights must be [out, in, kh, kw], got {:?}",
                    weights.shape()
                )))
            }
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv kernel must have odd size, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [out_ch] {
            return Err(shape_err(format!(
                "conv bias shape {:?} does not match {out_ch} filters",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        Ok(Self {
            out_ch,
            in_ch,
            kh,
            kw,
            stride,
            padding,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kh || pw < self.kw {
            return Err(shape_err(format!(
                "padded input {ph}x{pw} is smaller than the {}x{} kernel",
                self.kh, self.kw
            )));
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn check_input(&self, s: &Shape4) -> Result<(usize, usize)> {
        if s.c != self.in_ch {
            return Err(shape_err(format!(
                "input has {} channels, filters expect {}",
                s.c, self.in_ch
            )));
        }
        self.output_hw(s.h, s.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_input: Tensor,
    pub d_params: IndexMap<String, Tensor>,
}

/// Unfold one sample `[C, H, W]` into `[C·kh·kw, out_h·out_w]`.
fn im2col(x: &[f32], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<f32> {
    let l = oh * ow;
    let mut cols = vec![0.0; g.patch_len() * l];
    let pad = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * l..(row + 1) * l];
                for y in 0..oh {
                    let sy = (y * g.stride + i) as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..ow {
                        let sx = (xo * g.stride + j) as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            dst[y * ow + xo] = src_row[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the inverse of [`im2col`] into one sample's gradient plane.
fn col2im(cols: &[f32], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, dx: &mut [f32]) {
    let l = oh * ow;
    let pad = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * l..(row + 1) * l];
                for y in 0..oh {
                    let sy = (y * g.stride + i) as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..ow {
                        let sx = (xo * g.stride + j) as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += src[y * ow + xo];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d(input, &p.weights, &p.bias, p.stride, p.padding)
}

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(weights, bias, stride, padding)?;
    let s = Shape4::of(input)?;
    let (oh, ow) = g.check_input(&s)?;
    let l = oh * ow;
    let mut out = vec![0.0; s.n * g.out_ch * l];
    let sample = s.c * s.plane();
    for n in 0..s.n {
        let cols = im2col(&input.data()[n * sample..(n + 1) * sample], s.h, s.w, &g, oh, ow);
        let dst = &mut out[n * g.out_ch * l..(n + 1) * g.out_ch * l];
        gemm(weights.data(), &cols, g.out_ch, g.patch_len(), l, dst);
        for (o, &b) in bias.data().iter().enumerate() {
            dst[o * l..(o + 1) * l].iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::new([s.n, g.out_ch, oh, ow], out)
}

pub fn conv2d_backward(input: &Tensor, p: &ConvParams, d_out: &Tensor) -> Result<LayerGradients> {
    let grads = conv2d_grads(input, &p.weights, &p.bias, p.stride, p.padding, d_out, true)?;
    let mut d_params = IndexMap::new();
    d_params.insert("weights".to_string(), grads.d_weights);
    d_params.insert("bias".to_string(), grads.d_bias);
    Ok(LayerGradients {
        d_input: grads.d_input.expect("input gradient requested"),
        d_params,
    })
}

pub struct ConvGrads {
    pub d_input: Option<Tensor>,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

/// Convolution adjoint; `need_input` skips the (expensive) input gradient
/// when no upstream layer will consume it.
pub fn conv2d_grads(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    d_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(weights, bias, stride, padding)?;
    let s = Shape4::of(input)?;
    let (oh, ow) = g.check_input(&s)?;
    if d_out.shape() != [s.n, g.out_ch, oh, ow] {
        return Err(shape_err(format!(
            "conv d_out shape {:?} does not match forward output {:?}",
            d_out.shape(),
            [s.n, g.out_ch, oh, ow]
        )));
    }
    let l = oh * ow;
    let k = g.patch_len();
    let sample = s.c * s.plane();
    let w_t = if need_input {
        transpose(weights.data(), g.out_ch, k)
    } else {
        Vec::new()
    };
    let mut dw_acc = vec![0.0f64; g.out_ch * k];
    let mut db_acc = vec![0.0f64; g.out_ch];
    let mut dw_n = vec![0.0; g.out_ch * k];
    let mut d_input = need_input.then(|| vec![0.0; input.len()]);
    let mut dcols = vec![0.0; if need_input { k * l } else { 0 }];

    for n in 0..s.n {
        let dy = &d_out.data()[n * g.out_ch * l..(n + 1) * g.out_ch * l];
        for (o, acc) in db_acc.iter_mut().enumerate() {
            *acc += dy[o * l..(o + 1) * l].iter().map(|&v| v as f64).sum::<f64>();
        }
        let cols = im2col(&input.data()[n * sample..(n + 1) * sample], s.h, s.w, &g, oh, ow);
        let cols_t = transpose(&cols, k, l);
        gemm(dy, &cols_t, g.out_ch, l, k, &mut dw_n);
        for (acc, &v) in dw_acc.iter_mut().zip(&dw_n) {
            *acc += v as f64;
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(&w_t, dy, k, g.out_ch, l, &mut dcols);
            col2im(&dcols, s.h, s.w, &g, oh, ow, &mut dx[n * sample..(n + 1) * sample]);
        }
    }
    Ok(ConvGrads {
        d_input: d_input.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        d_weights: Tensor::new(weights.shape().to_vec(), dw_acc.into_iter().map(|v| v as f32).collect())?,
        d_bias: Tensor::new([g.out_ch], db_acc.into_iter().map(|v| v as f32).collect())?,
    })
}

/// Winner positions of a 2×2/stride-2 max-pool, as flat input offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolMask {
    pub input_shape: Shape4,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d_forward(input: &Tensor) -> Result<(Tensor, PoolMask)> {
    let s = Shape4::of(input)?;
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(shape_err(format!(
            "max-pool needs even spatial dims, got {}x{}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for y in 0..oh {
            for xo in 0..ow {
                let mut best_at = base + 2 * y * s.w + 2 * xo;
                let mut best = x[best_at];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let at = base + (2 * y + dy) * s.w + 2 * xo + dx;
                    if x[at] > best {
                        best = x[at];
                        best_at = at;
                    }
                }
                out.push(best);
                argmax.push(best_at);
            }
        }
    }
    Ok((
        Tensor::new([s.n, s.c, oh, ow], out)?,
        PoolMask {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(mask: &PoolMask, d_out: &Tensor) -> Result<Tensor> {
    let s = mask.input_shape;
    if d_out.shape() != [s.n, s.c, s.h / 2, s.w / 2] {
        return Err(shape_err(format!(
            "max-pool d_out shape {:?} does not match mask for input {:?}",
            d_out.shape(),
            s.dims()
        )));
    }
    let mut dx = vec![0.0; s.n * s.c * s.plane()];
    for (&at, &g) in mask.argmax.iter().zip(d_out.data()) {
        dx[at] += g;
    }
    Tensor::new(s.dims(), dx)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let s = Shape4::of(input)?;
    let hw = s.plane();
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    Tensor::new([s.n, s.c], out)
}

pub fn global_avg_pool_backward(input_shape: Shape4, d_out: &Tensor) -> Result<Tensor> {
    let s = input_shape;
    if d_out.shape() != [s.n, s.c] {
        return Err(shape_err(format!(
            "GAP d_out shape {:?} does not match [{}, {}]",
            d_out.shape(),
            s.n,
            s.c
        )));
    }
    let hw = s.plane();
    let inv = 1.0 / hw as f64;
    let mut dx = Vec::with_capacity(s.n * s.c * hw);
    for &g in d_out.data() {
        let v = (g as f64 * inv) as f32;
        dx.extend(std::iter::repeat(v).take(hw));
    }
    Tensor::new(s.dims(), dx)
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, k) = match *input.shape() {
        [n, k] => (n, k),
        _ => return Err(shape_err(format!("dense input must be [N, k], got {:?}", input.shape()))),
    };
    let (k2, m) = match *weights.shape() {
        [k2, m] => (k2, m),
        _ => return Err(shape_err(format!("dense weights must be [k, m], got {:?}", weights.shape()))),
    };
    if k != k2 || bias.shape() != [m] {
        return Err(shape_err(format!(
            "dense shapes disagree: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    Ok((n, k, m))
}

pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, k, m) = dense_dims(input, weights, bias)?;
    let mut out = vec![0.0; n * m];
    gemm(input.data(), weights.data(), n, k, m, &mut out);
    for row in out.chunks_exact_mut(m) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new([n, m], out)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, d_out: &Tensor) -> Result<LayerGradients> {
    let (n, k, m) = dense_dims(input, weights, bias)?;
    if d_out.shape() != [n, m] {
        return Err(shape_err(format!(
            "dense d_out shape {:?}, expected [{n}, {m}]",
            d_out.shape()
        )));
    }
    let x_t = transpose(input.data(), n, k);
    let mut dw = vec![0.0; k * m];
    gemm(&x_t, d_out.data(), k, n, m, &mut dw);
    let mut db = vec![0.0f64; m];
    for row in d_out.data().chunks_exact(m) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g as f64;
        }
    }
    let w_t = transpose(weights.data(), k, m);
    let mut dx = vec![0.0; n * k];
    gemm(d_out.data(), &w_t, n, m, k, &mut dx);
    let mut d_params = IndexMap::new();
    d_params.insert("weights".to_string(), Tensor::new([k, m], dw)?);
    d_params.insert(
        "bias".to_string(),
        Tensor::new([m], db.into_iter().map(|v| v as f32).collect())?,
    );
    Ok(LayerGradients {
        d_input: Tensor::new([n, k], dx)?,
        d_params,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes `d_out` where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(d_out) {
        return Err(shape_err(format!(
            "relu d_out shape {:?} differs from input {:?}",
            d_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = match *logits.shape() {
        [n, c] if c >= 2 => (n, c),
        _ => {
            return Err(shape_err(format!(
                "softmax needs [N, c] logits with c >= 2, got {:?}",
                logits.shape()
            )))
        }
    };
    let mut out = Vec::with_capacity(n * c);
    for row in logits.data().chunks_exact(c) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| (e / total) as f32));
    }
    Tensor::new([n, c], out)
}

fn check_targets(probs: &Tensor, targets: &[usize]) -> Result<(usize, usize)> {
    let (n, c) = match *probs.shape() {
        [n, c] => (n, c),
        _ => return Err(shape_err(format!("probabilities must be [N, c], got {:?}", probs.shape()))),
    };
    if targets.len() != n {
        return Err(shape_err(format!("{} targets for {n} rows", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::InvalidArgument(format!(
            "target class {t} out of range for {c} classes"
        )));
    }
    Ok((n, c))
}

/// Mean negative log-likelihood of the target classes.
pub fn cross_entropy(probs: &Tensor, targets: &[usize]) -> Result<f32> {
    let (n, c) = check_targets(probs, targets)?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -(probs.data()[i * c + t].max(PROB_FLOOR) as f64).ln())
        .sum();
    Ok((total / n as f64) as f32)
}

/// Fused softmax + cross-entropy gradient with respect to the logits:
/// `(probs - onehot) / N`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (n, c) = check_targets(probs, targets)?;
    let inv = 1.0 / n as f64;
    let mut d = probs.data().to_vec();
    for (i, &t) in targets.iter().enumerate() {
        d[i * c + t] -= 1.0;
    }
    d.iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
    Tensor::new([n, c], d)
}
