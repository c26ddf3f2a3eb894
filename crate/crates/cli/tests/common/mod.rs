#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use defectnet::data::{write_ppm, RasterImage};
use defectnet::weights_io::write_weights;
use defectnet::{ArchSpec, BlockSpec, HeadSpec, Model, LABELS};

/// One clean colour per class: red, green, blue, black.
pub const CLASS_COLORS: [[u8; 3]; 4] = [[200, 20, 20], [20, 200, 20], [20, 20, 200], [10, 10, 10]];

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defectnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// `<root>/<label>/img_<i>.ppm` solid-colour images with a small per-image
/// offset.
pub fn write_color_tree(root: &Path, per_class: usize, side: usize) {
    for (label, (name, rgb)) in LABELS.iter().zip(CLASS_COLORS).enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let shade = ((i * 5 + label) % 20) as u8;
            let img = RasterImage::filled(side, side, rgb.map(|c| c + shade));
            write_ppm(&dir.join(format!("img_{i:02}.ppm")), &img).unwrap();
        }
    }
}

pub fn save(model: &Model, path: &Path) -> PathBuf {
    let mut bytes = Vec::new();
    write_weights(model, &mut bytes).unwrap();
    fs::write(path, bytes).unwrap();
    path.to_path_buf()
}

/// One conv block whose three filters copy R, G and B through their centre
/// taps; the head scores each colour class from the mean colour and gives
/// the black class a small bias. Classifies [`CLASS_COLORS`] perfectly.
pub fn color_model(side: usize) -> Model {
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 3 }], HeadSpec::Gap, 4, side).unwrap();
    let mut m = Model::build(&spec, 0).unwrap();
    let p = m.params_mut();
    p.values_mut().for_each(|t| t.data_mut().fill(0.0));
    let w = p.get_mut("block1.conv1.w").unwrap().data_mut();
    for c in 0..3 {
        w[(c * 3 + c) * 9 + 4] = 1.0;
    }
    // head.out.w is [3, 4]: row = feature, column = class.
    let head = p.get_mut("head.out.w").unwrap().data_mut();
    for c in 0..3 {
        head[c * 4 + c] = 4.0;
    }
    p.get_mut("head.out.b").unwrap().data_mut()[3] = 0.5;
    m
}

/// Four-class version of the planted-patch detector: filter 0 fires on red,
/// filter 1 weakly on grey, and only class 0 uses them.
pub fn quadrant_model(side: usize) -> Model {
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Gap, 4, side).unwrap();
    let mut m = Model::build(&spec, 0).unwrap();
    let p = m.params_mut();
    p.values_mut().for_each(|t| t.data_mut().fill(0.0));
    let w = p.get_mut("block1.conv1.w").unwrap().data_mut();
    let centre = |o: usize, c: usize| (o * 3 + c) * 9 + 4;
    w[centre(0, 0)] = 1.0;
    w[centre(0, 1)] = -1.0;
    w[centre(0, 2)] = -1.0;
    w[centre(1, 1)] = 0.02;
    let head = p.get_mut("head.out.w").unwrap().data_mut();
    head[0] = 1.0;
    head[4] = -1.0;
    m
}

pub fn toy_config(dir: &Path, train_dir: &Path, out_dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "# toy run\narch = custom\nblocks = 1x4\ninput_size = 16\nepochs = 2\nbatch_size = 4\nsteps_per_epoch = 3\n\
         learning_rate = 0.05\nseed = 7\ntrain_dir = {}\noutput_dir = {}\n{extra}",
        train_dir.display(),
        out_dir.display()
    );
    let path = dir.join("toy.cfg");
    fs::write(&path, text).unwrap();
    path
}
