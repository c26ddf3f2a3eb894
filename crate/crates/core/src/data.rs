//! Raster I/O, thumbnail slicing, directory datasets, splitting and
//! label-preserving augmentation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use walkdir::WalkDir;

use crate::error::{shape_err, Error, Result};
use crate::model::LABELS;
use crate::rng::indexed_seed;
use crate::tensor::Tensor;

pub const TILE: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("PPM parse error at byte {offset}: {message}")]
pub struct PpmError {
    pub offset: usize,
    pub message: String,
}

impl PpmError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(shape_err(format!("image size {width}x{height} must be positive")));
        }
        if pixels.len() != 3 * width * height {
            return Err(shape_err(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(3 * width * height).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` tensor scaled into `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::new([3, self.height, self.width], data).expect("image dims are positive")
    }

    /// Inverse of [`RasterImage::to_tensor`], clamping and rounding.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [3, h, w] => (h, w),
            _ => return Err(shape_err(format!("expected a [3, H, W] image tensor, got {:?}", t.shape()))),
        };
        let plane = h * w;
        let mut pixels = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                pixels.push((t.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        Self::new(w, h, pixels)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> RasterImage {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in y0..y0 + height {
            let start = 3 * (y * self.width + x0);
            pixels.extend_from_slice(&self.pixels[start..start + 3 * width]);
        }
        RasterImage { width, height, pixels }
    }
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => pos += 1,
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => break,
        }
    }
    pos
}

fn header_number(bytes: &[u8], pos: usize, what: &str) -> std::result::Result<(usize, usize), PpmError> {
    let start = skip_ws_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(PpmError::new(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| PpmError::new(start, format!("{what} {text} does not fit")))?;
    Ok((value, end))
}

/// Decodes a binary `P6` stream with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RasterImage, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::new(0, "missing P6 magic"));
    }
    let (width, pos) = header_number(bytes, 2, "width")?;
    let (height, pos) = header_number(bytes, pos, "height")?;
    let (maxval, pos) = header_number(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::new(pos, format!("image size {width}x{height} must be positive")));
    }
    if maxval != 255 {
        return Err(PpmError::new(pos, format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(PpmError::new(pos, "expected one whitespace byte before the pixel data")),
    }
    let data_start = pos + 1;
    let expected = 3 * width * height;
    let actual = bytes.len() - data_start;
    if actual < expected {
        return Err(PpmError::new(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, got {actual}"),
        ));
    }
    if actual > expected {
        return Err(PpmError::new(
            data_start + expected,
            format!("{} trailing bytes after the pixel data", actual - expected),
        ));
    }
    Ok(RasterImage {
        width,
        height,
        pixels: bytes[data_start..].to_vec(),
    })
}

pub fn encode_ppm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_ppm(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path)?;
    decode_ppm(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_ppm(path: &Path, img: &RasterImage) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

/// Non-overlapping `tile`×`tile` crops from the top-left, row-major;
/// ragged right and bottom strips are dropped.
pub fn slice_image(img: &RasterImage, tile: usize) -> Vec<RasterImage> {
    if tile == 0 {
        return Vec::new();
    }
    let (cols, rows) = (img.width / tile, img.height / tile);
    let mut tiles = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            tiles.push(img.crop(c * tile, r * tile, tile, tile));
        }
    }
    tiles
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    /// Source file, when loaded from disk.
    pub path: Option<PathBuf>,
    pub image: RasterImage,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<DatasetItem>,
    pub label_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(label_names: &[&str]) -> Self {
        Self {
            items: Vec::new(),
            label_names: label_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn defects() -> Self {
        Self::new(&LABELS)
    }

    pub fn push(&mut self, image: RasterImage, label: usize) {
        assert!(label < self.label_names.len(), "label {label} out of range");
        self.items.push(DatasetItem {
            path: None,
            image,
            label,
        });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Keeps at most `cap` items per class, in original order.
    pub fn cap_per_class(&self, cap: usize) -> Self {
        let mut seen = vec![0; self.num_classes()];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.items[i].label;
                seen[l] += 1;
                seen[l] <= cap
            })
            .collect();
        self.subset(&keep)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: LabeledDataset,
    pub warnings: Vec<String>,
}

/// Loads `<root>/{deterioration,mould,normal,stain}/**/*.ppm`, ordered by
/// relative path bytes within each label.
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let missing: Vec<&str> = LABELS.iter().copied().filter(|l| !root.join(l).is_dir()).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{} is missing label directories {missing:?}; expected {LABELS:?}",
            root.display()
        )));
    }
    let mut dataset = LabeledDataset::defects();
    let mut warnings = Vec::new();
    for (label, name) in LABELS.iter().enumerate() {
        let dir = root.join(name);
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in WalkDir::new(&dir) {
            let entry = entry.map_err(|e| Error::Io(e.into()))?;
            let p = entry.path();
            if entry.file_type().is_file() && p.extension().is_some_and(|e| e == "ppm") {
                files.push(p.to_path_buf());
            }
        }
        files.sort_by(|a, b| {
            let ka = a.strip_prefix(root).unwrap_or(a).as_os_str().as_encoded_bytes().to_vec();
            let kb = b.strip_prefix(root).unwrap_or(b).as_os_str().as_encoded_bytes().to_vec();
            ka.cmp(&kb)
        });
        if files.is_empty() {
            warnings.push(format!("class {name:?} has no images"));
        }
        for path in files {
            let image = read_ppm(&path)?;
            dataset.items.push(DatasetItem {
                path: Some(path),
                image,
                label,
            });
        }
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LoadedDataset { dataset, warnings })
}

/// Seeded shuffle, then the first `floor(n · val_fraction)` items form the
/// validation set. Both parts keep the original relative order.
pub fn split(ds: &LabeledDataset, val_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let n = ds.len();
    let n_val = validation_count(n, val_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

pub fn validation_count(n: usize, val_fraction: f64) -> usize {
    // The epsilon absorbs representation error in products like 1890 · 0.2.
    (n as f64 * val_fraction + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub rotation_max_deg: f64,
    pub shift_max_frac: f64,
    pub allow_hflip: bool,
    pub allow_vflip: bool,
    pub rng_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_max_deg: 20.0,
            shift_max_frac: 0.1,
            allow_hflip: true,
            allow_vflip: true,
            rng_seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self {
            rotation_max_deg: 0.0,
            shift_max_frac: 0.0,
            allow_hflip: false,
            allow_vflip: false,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::InvalidArgument(format!(
                "rotation_max_deg {} outside [0, 180]",
                self.rotation_max_deg
            )));
        }
        if !(0.0..=0.5).contains(&self.shift_max_frac) {
            return Err(Error::InvalidArgument(format!(
                "shift_max_frac {} outside [0, 0.5]",
                self.shift_max_frac
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_max_deg == 0.0 && self.shift_max_frac == 0.0 && !self.allow_hflip && !self.allow_vflip
    }
}

pub fn hflip(img: &RasterImage) -> RasterImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(x, y, img.pixel(img.width - 1 - x, y));
        }
    }
    out
}

pub fn vflip(img: &RasterImage) -> RasterImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(x, y, img.pixel(x, img.height - 1 - y));
        }
    }
    out
}

/// Nearest-neighbour rotation about the image centre; samples that fall
/// outside the source replicate the nearest edge.
pub fn rotate(img: &RasterImage, degrees: f64) -> RasterImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let clamp = |v: f64, max: usize| (v.round().max(0.0) as usize).min(max - 1);
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            out.set_pixel(x, y, img.pixel(clamp(sx, img.width), clamp(sy, img.height)));
        }
    }
    out
}

/// Translates content by `(dx, dy)` pixels with edge replication.
pub fn shift(img: &RasterImage, dx: isize, dy: isize) -> RasterImage {
    if dx == 0 && dy == 0 {
        return img.clone();
    }
    let clamp = |v: isize, max: usize| v.clamp(0, max as isize - 1) as usize;
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let sx = clamp(x as isize - dx, img.width);
            let sy = clamp(y as isize - dy, img.height);
            out.set_pixel(x, y, img.pixel(sx, sy));
        }
    }
    out
}

/// Random flips, rotation and shift, in that order. Dimensions never change.
pub fn augment(img: &RasterImage, p: &AugmentParams, rng: &mut impl Rng) -> RasterImage {
    let mut out = img.clone();
    if p.allow_hflip && rng.gen_bool(0.5) {
        out = hflip(&out);
    }
    if p.allow_vflip && rng.gen_bool(0.5) {
        out = vflip(&out);
    }
    if p.rotation_max_deg > 0.0 {
        let angle = rng.gen_range(-p.rotation_max_deg..=p.rotation_max_deg);
        out = rotate(&out, angle);
    }
    if p.shift_max_frac > 0.0 {
        let fx = rng.gen_range(-p.shift_max_frac..=p.shift_max_frac);
        let fy = rng.gen_range(-p.shift_max_frac..=p.shift_max_frac);
        let dx = (fx * out.width as f64).round() as isize;
        let dy = (fy * out.height as f64).round() as isize;
        out = shift(&out, dx, dy);
    }
    out
}

/// Augmentation drawing from the stream for item `index` under
/// `p.rng_seed`, so results do not depend on processing order.
pub fn augment_indexed(img: &RasterImage, p: &AugmentParams, index: u64) -> RasterImage {
    if p.is_identity() {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(p.rng_seed, index));
    augment(img, p, &mut rng)
}
