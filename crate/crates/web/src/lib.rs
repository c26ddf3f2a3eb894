//! WebAssembly bindings behind `www/index.html`. Each export has a plain Rust
//! twin (`*_view`, `report_text`) so the logic is testable off the browser.

use defectnet::cam::{bounding_region, model_cam, overlay, upsample};
use defectnet::data::{augment_indexed, AugmentParams, RasterImage};
use defectnet::metrics::{report, ConfusionMatrix};
use defectnet::synth::{patch_detector_model, plant_patch, quadrant_of, texture_image, Palette, TEXTURE_CLASSES};
use defectnet::LABELS;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Side of the CAM scene and texture previews, in pixels.
pub const SIDE: usize = 64;

fn rgba(img: &RasterImage) -> Vec<u8> {
    img.pixels.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

#[wasm_bindgen]
pub struct CamView {
    rgba: Vec<u8>,
    region: Vec<u32>,
    patch_quadrant: u32,
    hot_quadrant: u32,
}

#[wasm_bindgen]
impl CamView {
    /// Overlay pixels, `SIDE × SIDE` RGBA.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// `[x, y, width, height]`, or empty when the map is flat.
    pub fn region(&self) -> Vec<u32> {
        self.region.clone()
    }

    pub fn patch_quadrant(&self) -> u32 {
        self.patch_quadrant
    }

    pub fn hot_quadrant(&self) -> u32 {
        self.hot_quadrant
    }
}

/// Plants a red patch centred near `(x, y)` in a noisy grey scene and runs
/// the hand-built patch detector's CAM over it.
pub fn cam_view(x: usize, y: usize, patch: usize, seed: u64, alpha: f32, threshold: f32) -> defectnet::Result<CamView> {
    let patch = patch.clamp(2, SIDE / 2);
    let x0 = x.saturating_sub(patch / 2).min(SIDE - patch);
    let y0 = y.saturating_sub(patch / 2).min(SIDE - patch);
    let scene = plant_patch(SIDE, patch, (x0, y0), &mut ChaCha8Rng::seed_from_u64(seed));
    let model = patch_detector_model(SIDE)?;
    let image = scene.image.to_tensor();
    let trace = model.forward(&image.clone().reshape([1, 3, SIDE, SIDE])?)?;
    let heat = model_cam(&model, &trace, 0)?;
    let full = upsample(&heat, (SIDE, SIDE))?;
    let blended = RasterImage::from_tensor(&overlay(&full, &image, alpha)?)?;
    let (r, c) = heat.argmax();
    let cell = SIDE / heat.width();
    let region = bounding_region(&heat, threshold)
        .map(|b| [b.x0, b.y0, b.width, b.height].map(|v| v as u32).to_vec())
        .unwrap_or_default();
    Ok(CamView {
        rgba: rgba(&blended),
        region,
        patch_quadrant: scene.quadrant as u32,
        hot_quadrant: quadrant_of(c * cell + cell / 2, r * cell + cell / 2, SIDE, SIDE) as u32,
    })
}

#[wasm_bindgen]
pub fn cam_scene(x: u32, y: u32, patch: u32, seed: u32, alpha: f32, threshold: f32) -> Result<CamView, JsError> {
    cam_view(x as usize, y as usize, patch as usize, seed as u64, alpha, threshold).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct AugmentView {
    original: Vec<u8>,
    augmented: Vec<u8>,
}

#[wasm_bindgen]
impl AugmentView {
    pub fn original(&self) -> Vec<u8> {
        self.original.clone()
    }

    pub fn augmented(&self) -> Vec<u8> {
        self.augmented.clone()
    }
}

pub fn augment_view(
    class: usize,
    seed: u64,
    draw: u64,
    rotation_max_deg: f64,
    shift_max_frac: f64,
    hflip: bool,
    vflip: bool,
) -> defectnet::Result<AugmentView> {
    let class = class.min(TEXTURE_CLASSES.len() - 1);
    let img = texture_image(class, SIDE, Palette::Source, &mut ChaCha8Rng::seed_from_u64(seed));
    let params = AugmentParams {
        rotation_max_deg,
        shift_max_frac,
        allow_hflip: hflip,
        allow_vflip: vflip,
        rng_seed: seed,
    };
    params.validate()?;
    Ok(AugmentView {
        original: rgba(&img),
        augmented: rgba(&augment_indexed(&img, &params, draw)),
    })
}

/// One texture sample and its `draw`-th augmentation.
#[wasm_bindgen]
pub fn augment_preview(
    class: u32,
    seed: u32,
    draw: u32,
    rotation_max_deg: f64,
    shift_max_frac: f64,
    hflip: bool,
    vflip: bool,
) -> Result<AugmentView, JsError> {
    augment_view(class as usize, seed as u64, draw as u64, rotation_max_deg, shift_max_frac, hflip, vflip)
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn texture_names() -> Vec<String> {
    TEXTURE_CLASSES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn label_names() -> Vec<String> {
    LABELS.iter().map(|s| s.to_string()).collect()
}

/// Classification report for a row-major 4×4 confusion matrix.
pub fn report_text(counts: &[u32]) -> defectnet::Result<String> {
    let k = LABELS.len();
    if counts.len() != k * k {
        return Err(defectnet::Error::InvalidArgument(format!(
            "expected {} counts, got {}",
            k * k,
            counts.len()
        )));
    }
    let rows = counts.chunks(k).map(|r| r.iter().map(|&v| v as u64).collect()).collect();
    let cm = ConfusionMatrix::from_counts(&LABELS, rows)?;
    Ok(report(&cm)?.render())
}

#[wasm_bindgen]
pub fn metrics_report(counts: Vec<u32>) -> Result<String, JsError> {
    report_text(&counts).map_err(|e| JsError::new(&e.to_string()))
}
