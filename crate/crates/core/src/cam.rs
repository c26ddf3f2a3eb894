//! Class activation maps: project classifier weights back onto the final
//! convolutional feature maps, then upsample, colour and box the result.

use crate::error::{shape_err, Error, Result};
use crate::model::{ForwardTrace, Model};
use crate::tensor::{Shape4, Tensor};

pub const DEFAULT_THRESHOLD: f32 = 0.2;
pub const DEFAULT_ALPHA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[h, w]`, min-max normalised into `[0, 1]`.
    pub values: Tensor,
    pub class_index: usize,
    /// `(H, W)` of the image the map localises within.
    pub source_size: (usize, usize),
    /// Set when the raw map was flat; `values` is then all zero.
    pub degenerate: bool,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// `(row, col)` of the hottest cell, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::model::argmax(self.values.data());
        (i / self.width(), i % self.width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub threshold: f32,
}

impl BoundingRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// CAM for the first image of `trace`.
pub fn compute_cam(trace: &ForwardTrace, head_weights: &Tensor, class_index: usize) -> Result<Heatmap> {
    compute_cam_at(trace, head_weights, class_index, 0)
}

pub fn compute_cam_at(
    trace: &ForwardTrace,
    head_weights: &Tensor,
    class_index: usize,
    sample: usize,
) -> Result<Heatmap> {
    let s = Shape4::of(&trace.final_conv_maps)?;
    let (c, classes) = match *head_weights.shape() {
        [c, k] => (c, k),
        _ => return Err(shape_err(format!("head weights must be [C, classes], got {:?}", head_weights.shape()))),
    };
    if c != s.c {
        return Err(shape_err(format!(
            "head weights cover {c} channels, feature maps have {}",
            s.c
        )));
    }
    if class_index >= classes {
        return Err(Error::InvalidArgument(format!(
            "class index {class_index} out of range for {classes} classes"
        )));
    }
    if sample >= s.n {
        return Err(Error::InvalidArgument(format!("sample {sample} out of range for batch of {}", s.n)));
    }
    let hw = s.plane();
    let maps = &trace.final_conv_maps.data()[sample * s.c * hw..(sample + 1) * s.c * hw];
    let mut raw = vec![0.0f64; hw];
    for k in 0..s.c {
        let wk = head_weights.data()[k * classes + class_index] as f64;
        for (acc, &f) in raw.iter_mut().zip(&maps[k * hw..(k + 1) * hw]) {
            *acc += wk * f as f64;
        }
    }
    let (values, degenerate) = normalise(&raw);
    Ok(Heatmap {
        values: Tensor::new([s.h, s.w], values)?,
        class_index,
        source_size: trace.input_hw,
        degenerate,
    })
}

/// CAM straight from a model; FC-head models have no CAM.
pub fn model_cam(model: &Model, trace: &ForwardTrace, class_index: usize) -> Result<Heatmap> {
    compute_cam(trace, model.cam_weights()?, class_index)
}

fn normalise(raw: &[f64]) -> (Vec<f32>, bool) {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return (vec![0.0; raw.len()], true);
    }
    let range = max - min;
    (raw.iter().map(|&v| ((v - min) / range) as f32).collect(), false)
}

/// Corner-aligned bilinear upsampling to `(H, W)`.
pub fn upsample(h: &Heatmap, target: (usize, usize)) -> Result<Heatmap> {
    let (sh, sw) = (h.height(), h.width());
    let (th, tw) = target;
    if th < sh || tw < sw {
        return Err(shape_err(format!(
            "cannot upsample a {sh}x{sw} map to the smaller {th}x{tw}"
        )));
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let v = h.values.data();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = coord(y, sh, th);
        for x in 0..tw {
            let (x0, x1, fx) = coord(x, sw, tw);
            let at = |r: usize, c: usize| v[r * sw + c] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            let value = top * (1.0 - fy) + bottom * fy;
            out.push(value.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(Heatmap {
        values: Tensor::new([th, tw], out)?,
        class_index: h.class_index,
        source_size: h.source_size,
        degenerate: h.degenerate,
    })
}

/// Blue → green → red colour table with 256 entries.
pub fn colormap() -> [[f32; 3]; 256] {
    let mut table = [[0.0; 3]; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let t = i as f32 / 255.0;
        *entry = if t < 0.5 {
            [0.0, 2.0 * t, 1.0 - 2.0 * t]
        } else {
            [2.0 * t - 1.0, 2.0 - 2.0 * t, 0.0]
        };
    }
    table
}

pub fn colormap_lookup(value: f32) -> [f32; 3] {
    let idx = (value.clamp(0.0, 1.0) * 255.0).round() as usize;
    colormap()[idx]
}

/// `(1 - alpha) · image + alpha · colormap(heat)` on a `[3, H, W]` image.
pub fn overlay(h: &Heatmap, image: &Tensor, alpha: f32) -> Result<Tensor> {
    let (hh, hw) = (h.height(), h.width());
    if image.shape() != [3, hh, hw] {
        return Err(shape_err(format!(
            "overlay needs a [3, {hh}, {hw}] image, got {:?}",
            image.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    let table = colormap();
    let plane = hh * hw;
    let mut out = image.data().to_vec();
    for (i, &v) in h.values.data().iter().enumerate() {
        let rgb = table[(v.clamp(0.0, 1.0) * 255.0).round() as usize];
        for (c, &col) in rgb.iter().enumerate() {
            let px = &mut out[c * plane + i];
            *px = ((1.0 - alpha) * *px + alpha * col).clamp(0.0, 1.0);
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Tight box, in source pixels, around all cells at or above `threshold`.
pub fn bounding_region(h: &Heatmap, threshold: f32) -> Option<BoundingRegion> {
    if h.degenerate {
        return None;
    }
    let (rows, cols) = (h.height(), h.width());
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (i, &v) in h.values.data().iter().enumerate() {
        if v >= threshold {
            let (r, c) = (i / cols, i % cols);
            bounds = Some(match bounds {
                None => (r, r, c, c),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
            });
        }
    }
    let (r0, r1, c0, c1) = bounds?;
    let (sh, sw) = h.source_size;
    let y0 = r0 * sh / rows;
    let y1 = (r1 + 1) * sh / rows;
    let x0 = c0 * sw / cols;
    let x1 = (c1 + 1) * sw / cols;
    Some(BoundingRegion {
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
        threshold,
    })
}
