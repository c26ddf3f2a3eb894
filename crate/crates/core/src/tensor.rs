//! Dense row-major `f32` tensors and the kernels the layers are built on.
//!
//! Every reduction and product accumulates in `f64` in a fixed left-to-right
//! order and rounds once to `f32`, so identical inputs give bitwise-identical
//! outputs.

use std::fmt;

use crate::error::{shape_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(shape_err("shape must have at least one dimension"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(shape_err(format!("shape {shape:?} has a zero dimension")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; intended for shapes known statically.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = check_shape(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Self {
        let shape = shape.into();
        let n = check_shape(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major strides, last axis contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(shape_err(format!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(shape_err(format!(
                    "index {i} out of bounds for axis {axis} of size {d}"
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn unflatten(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return Err(shape_err(format!(
                "offset {offset} out of bounds for {} elements",
                self.data.len()
            )));
        }
        let mut index = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            index[axis] = offset % self.shape[axis];
            offset /= self.shape[axis];
        }
        Ok(index)
    }

    pub fn get(&self, index: &[usize]) -> Result<f32> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f32) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|x| x * factor)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Flat `f64` sum in storage order.
    pub fn sum_all(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, &x| acc + x as f64)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    pub fn reduce(&self, axis: usize, op: ReduceOp) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let value = match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut acc = 0.0f64;
                        for r in 0..len {
                            acc += self.data[base + r * inner] as f64;
                        }
                        if op == ReduceOp::Mean {
                            acc /= len as f64;
                        }
                        acc as f32
                    }
                    ReduceOp::Max => {
                        let mut best = self.data[base];
                        for r in 1..len {
                            let v = self.data[base + r * inner];
                            if v > best {
                                best = v;
                            }
                        }
                        best
                    }
                };
                out.push(value);
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::new(shape, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Mean,
}

/// Batch/channel/row/column view of a rank-4 image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const IMAGE_CHANNELS: usize = 3;
    pub const IMAGE_SIDE: usize = 224;

    pub fn of(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [n, c, h, w] => Ok(Self { n, c, h, w }),
            _ => Err(shape_err(format!(
                "expected an NCHW tensor, got shape {:?}",
                t.shape()
            ))),
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match *a.shape() {
        [m, k] => (m, k),
        _ => return Err(shape_err(format!("matmul lhs must be rank 2, got {:?}", a.shape()))),
    };
    let (k2, n) = match *b.shape() {
        [k2, n] => (k2, n),
        _ => return Err(shape_err(format!("matmul rhs must be rank 2, got {:?}", b.shape()))),
    };
    if k != k2 {
        return Err(shape_err(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(&a.data, &b.data, m, k, n, &mut out);
    Tensor::new([m, n], out)
}

/// `out[m×n] = a[m×k] · b[k×n]`, row-major, `f64` accumulation over `k` in
/// increasing order.
pub(crate) fn gemm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Column tiling keeps a slab of `b` cache-resident across rows of `a`;
    // per-element accumulation order is still p = 0..k.
    const TILE: usize = 512;
    let mut acc = vec![0.0f64; TILE.min(n)];
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        let acc = &mut acc[..j1 - j0];
        for i in 0..m {
            acc.iter_mut().for_each(|v| *v = 0.0);
            let a_row = &a[i * k..(i + 1) * k];
            for (p, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let av = av as f64;
                let b_row = &b[p * n + j0..p * n + j1];
                for (s, &bv) in acc.iter_mut().zip(b_row) {
                    *s += av * bv as f64;
                }
            }
            for (o, &s) in out[i * n + j0..i * n + j1].iter_mut().zip(acc.iter()) {
                *o = s as f32;
            }
        }
    }
}

pub(crate) fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
