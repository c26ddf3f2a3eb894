//! Procedural datasets: solid colours, oriented textures and planted patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledDataset, RasterImage};
use crate::error::Result;
use crate::model::{ArchSpec, BlockSpec, HeadSpec, Model};

pub const TEXTURE_CLASSES: [&str; 4] = ["horizontal", "vertical", "checker", "diagonal"];

fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

fn jitter(rng: &mut impl Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|c| clamp_u8(c as i32 + rng.gen_range(-amount..=amount)))
}

/// `per_class` images of each colour in `colors`, each with a small random
/// offset. Items alternate between classes.
pub fn solid_dataset(names: &[&str], colors: &[[u8; 3]], per_class: usize, side: usize, seed: u64) -> LabeledDataset {
    assert_eq!(names.len(), colors.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new(names);
    for _ in 0..per_class {
        for (label, &c) in colors.iter().enumerate() {
            ds.push(RasterImage::filled(side, side, jitter(&mut rng, c, 12)), label);
        }
    }
    ds
}

/// Two-class dark/bright solid colours.
pub fn two_tone_dataset(per_class: usize, side: usize, seed: u64) -> LabeledDataset {
    solid_dataset(&["dark", "bright"], &[[40, 50, 30], [210, 200, 220]], per_class, side, seed)
}

/// Colour scheme for [`texture_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Bright stripes on a dark grey ground.
    Source,
    /// Orange stripes on a dark teal ground.
    Target,
}

impl Palette {
    fn colors(self) -> ([u8; 3], [u8; 3]) {
        match self {
            Palette::Source => ([200, 200, 200], [50, 50, 50]),
            Palette::Target => ([215, 130, 40], [20, 70, 90]),
        }
    }
}

/// Two-colour pattern whose geometry encodes `class` (an index into
/// [`TEXTURE_CLASSES`]). Period, phase and colours are randomised and every
/// pixel gets independent noise.
pub fn texture_image(class: usize, side: usize, palette: Palette, rng: &mut impl Rng) -> RasterImage {
    let half = rng.gen_range(3..=5);
    let (px, py) = (rng.gen_range(0..2 * half), rng.gen_range(0..2 * half));
    let (fg, bg) = palette.colors();
    let fg = jitter(rng, fg, 20);
    let bg = jitter(rng, bg, 20);
    let mut img = RasterImage::filled(side, side, bg);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = ((x + px) / half, (y + py) / half);
            let on = match class {
                0 => v % 2 == 0,
                1 => u % 2 == 0,
                2 => (u + v) % 2 == 0,
                3 => ((x + y + px) / half) % 2 == 0,
                _ => panic!("texture class {class} out of range"),
            };
            img.set_pixel(x, y, jitter(rng, if on { fg } else { bg }, 15));
        }
    }
    img
}

pub fn texture_dataset(per_class: usize, side: usize, palette: Palette, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new(&TEXTURE_CLASSES);
    for _ in 0..per_class {
        for class in 0..TEXTURE_CLASSES.len() {
            ds.push(texture_image(class, side, palette, &mut rng), class);
        }
    }
    ds
}

/// Architecture used for texture experiments: three single-conv blocks.
pub fn texture_arch(side: usize) -> ArchSpec {
    let blocks = [8, 16, 16].map(|filters| BlockSpec { convs: 1, filters }).to_vec();
    ArchSpec::new(blocks, HeadSpec::Gap, TEXTURE_CLASSES.len(), side).expect("texture architecture is valid")
}

pub const PATCH_COLOR: [u8; 3] = [230, 25, 25];

/// Grey noisy image with a red square lying entirely inside one quadrant.
#[derive(Debug, Clone)]
pub struct PatchScene {
    pub image: RasterImage,
    /// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub quadrant: usize,
    /// Pixel centre of the patch, `(x, y)`.
    pub center: (usize, usize),
    pub patch: usize,
}

/// Quadrant of pixel `(x, y)` in a `width × height` frame.
pub fn quadrant_of(x: usize, y: usize, width: usize, height: usize) -> usize {
    usize::from(x >= width / 2) + 2 * usize::from(y >= height / 2)
}

pub fn patch_scene(side: usize, patch: usize, rng: &mut impl Rng) -> PatchScene {
    let half = side / 2;
    assert!(patch >= 1 && patch <= half, "patch {patch} does not fit a quadrant of {side}");
    let quadrant = rng.gen_range(0..4);
    let x0 = (quadrant % 2) * half + rng.gen_range(0..=half - patch);
    let y0 = (quadrant / 2) * half + rng.gen_range(0..=half - patch);
    plant_patch(side, patch, (x0, y0), rng)
}

/// Like [`patch_scene`] with the patch's top-left corner fixed at `origin`.
/// The quadrant is the one holding the patch centre.
pub fn plant_patch(side: usize, patch: usize, origin: (usize, usize), rng: &mut impl Rng) -> PatchScene {
    let (x0, y0) = origin;
    assert!(patch >= 1 && x0 + patch <= side && y0 + patch <= side, "patch leaves the image");
    let mut img = RasterImage::filled(side, side, [0, 0, 0]);
    for y in 0..side {
        for x in 0..side {
            let g = rng.gen_range(70..=190);
            img.set_pixel(x, y, jitter(rng, [g, g, g], 8));
        }
    }
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            img.set_pixel(x, y, jitter(rng, PATCH_COLOR, 10));
        }
    }
    let center = (x0 + patch / 2, y0 + patch / 2);
    PatchScene {
        image: img,
        quadrant: quadrant_of(center.0, center.1, side, side),
        center,
        patch,
    }
}

/// Hand-set one-block model for [`patch_scene`] images. Filter 0 fires on
/// red (`R - G - B`), filter 1 on grey (`0.02·G`). Class 0 ("patch") weights
/// them +1 / -1, class 1 ("plain") the reverse.
pub fn patch_detector_model(side: usize) -> Result<Model> {
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Gap, 2, side)?;
    let mut model = Model::build(&spec, 0)?;
    let params = model.params_mut();
    params.values_mut().for_each(|t| t.data_mut().fill(0.0));
    let w = params.get_mut("block1.conv1.w").expect("conv weights exist");
    // [filters, channels, 3, 3]; centre tap is offset 4 within a kernel.
    let centre = |o: usize, c: usize| (o * 3 + c) * 9 + 4;
    let d = w.data_mut();
    d[centre(0, 0)] = 1.0;
    d[centre(0, 1)] = -1.0;
    d[centre(0, 2)] = -1.0;
    d[centre(1, 1)] = 0.02;
    let head = params.get_mut("head.out.w").expect("head weights exist");
    head.data_mut().copy_from_slice(&[1.0, -1.0, -1.0, 1.0]);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_dataset_is_balanced_and_seeded() {
        let a = texture_dataset(3, 16, Palette::Source, 4);
        assert_eq!(a.class_counts(), vec![3; 4]);
        assert_eq!(a, texture_dataset(3, 16, Palette::Source, 4));
        assert_ne!(a, texture_dataset(3, 16, Palette::Source, 5));
        assert_ne!(a, texture_dataset(3, 16, Palette::Target, 4));
    }

    #[test]
    fn patch_lies_in_its_quadrant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = patch_scene(32, 6, &mut rng);
            let (cx, cy) = s.center;
            assert_eq!(quadrant_of(cx, cy, 32, 32), s.quadrant);
            assert_eq!(s.image.pixel(cx, cy)[0] > 200, true);
        }
    }

    #[test]
    fn detector_prefers_patch_class() {
        let m = patch_detector_model(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = patch_scene(32, 8, &mut rng);
        let (label, _) = m.predict(&s.image.to_tensor()).unwrap();
        assert_eq!(label, 0);
        let plain = RasterImage::filled(32, 32, [120, 120, 120]);
        assert_eq!(m.predict(&plain.to_tensor()).unwrap().0, 1);
    }
}
