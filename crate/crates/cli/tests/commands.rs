mod common;

use std::fs;

use common::*;
use defectnet::cam::colormap_lookup;
use defectnet::data::{read_ppm, write_ppm, RasterImage};
use defectnet::synth::patch_scene;
use defectnet::{ArchSpec, HeadSpec, Model, BlockSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

#[test]
fn prepare_slices_and_names_tiles() {
    let tmp = tempdir().unwrap();
    let src = tmp.path().join("src");
    fs::create_dir_all(src.join("mould")).unwrap();
    let photo = RasterImage::new(672, 448, (0..672 * 448 * 3).map(|i| (i % 253) as u8).collect()).unwrap();
    write_ppm(&src.join("mould/wall.ppm"), &photo).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["prepare", path_str(&src), path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mould: 6 tiles"));
    assert!(stderr(&o).contains("warning: class stain has no tiles"));
    let mut names: Vec<String> = fs::read_dir(out.join("mould"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, (0..6).map(|i| format!("wall_{i:03}.ppm")).collect::<Vec<_>>());
    assert_eq!(read_ppm(&out.join("mould/wall_004.ppm")).unwrap(), photo.crop(224, 224, 224, 224));

    let before = fs::read(out.join("mould/wall_005.ppm")).unwrap();
    assert!(run(&["prepare", path_str(&src), path_str(&out)]).status.success());
    assert_eq!(fs::read_dir(out.join("mould")).unwrap().count(), 6);
    assert_eq!(fs::read(out.join("mould/wall_005.ppm")).unwrap(), before);
}

#[test]
fn prepare_empty_and_unreadable_sources() {
    let tmp = tempdir().unwrap();
    let src = tmp.path().join("empty");
    fs::create_dir_all(&src).unwrap();
    let o = run(&["prepare", path_str(&src), path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("normal: 0 tiles"));
    assert!(stderr(&o).contains("warning"));

    let o = run(&["prepare", path_str(&tmp.path().join("missing")), path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    fs::create_dir_all(src.join("stain")).unwrap();
    fs::write(src.join("stain/bad.ppm"), b"P3\n1 1\n255\n0 0 0\n").unwrap();
    let o = run(&["prepare", path_str(&src), path_str(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn toy_training_run_writes_outputs() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    write_color_tree(&data, 5, 16);
    let out = tmp.path().join("run");
    let cfg = toy_config(tmp.path(), &data, &out, "");
    let o = run(&["train", path_str(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
    let meta = fs::read_to_string(out.join("run.meta")).unwrap();
    for needle in ["format = DNW1 v1", "seed = 7", "blocks = 1x4", "val_items = 4", "train_items = 16"] {
        assert!(meta.contains(needle), "run.meta lacks {needle:?}:\n{meta}");
    }
    assert!(fs::metadata(out.join("model.dnw")).unwrap().len() > 8);
}

#[test]
fn freezing_four_vgg_blocks_is_recorded() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    write_color_tree(&data, 2, 224);
    let out = tmp.path().join("run");
    let path = tmp.path().join("vgg.cfg");
    fs::write(
        &path,
        format!(
            "arch = paper-vgg16\nfreeze_blocks = 4\nepochs = 0\ntrain_dir = {}\noutput_dir = {}\n",
            data.display(),
            out.display()
        ),
    )
    .unwrap();
    let o = run(&["train", path_str(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = fs::read_to_string(out.join("run.meta")).unwrap();
    let line = meta.lines().find(|l| l.starts_with("trainable = ")).unwrap();
    let names: Vec<&str> = line["trainable = ".len()..].split(',').collect();
    assert_eq!(
        names,
        ["block5.conv1.w", "block5.conv1.b", "block5.conv2.w", "block5.conv2.b", "block5.conv3.w", "block5.conv3.b", "head.out.w", "head.out.b"]
    );
}

#[test]
fn train_error_codes() {
    let tmp = tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "epochz = 3\n").unwrap();
    assert_eq!(run(&["train", path_str(&cfg)]).status.code(), Some(2));
    assert_eq!(run(&["train", path_str(&tmp.path().join("none.cfg"))]).status.code(), Some(2));
    let cfg = toy_config(tmp.path(), &tmp.path().join("nowhere"), &tmp.path().join("r"), "");
    let o = run(&["train", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn eval_on_perfect_model() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("test");
    write_color_tree(&data, 3, 16);
    let model = save(&color_model(16), &tmp.path().join("m.dnw"));
    let csv = tmp.path().join("confusion.csv");
    let o = run(&["eval", path_str(&model), path_str(&data), "--input-size", "16", "--out", path_str(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for label in ["deterioration", "mould", "normal", "stain"] {
        let row = text.lines().find(|l| l.starts_with(label)).unwrap();
        assert_eq!(row.matches("1.00").count(), 3, "{row}");
    }
    let body = fs::read_to_string(&csv).unwrap();
    let total: u64 = body
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total, 12);
}

#[test]
fn eval_rejects_wrong_class_count() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("test");
    write_color_tree(&data, 1, 16);
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Gap, 3, 16).unwrap();
    let model = save(&Model::build(&spec, 1).unwrap(), &tmp.path().join("m.dnw"));
    let o = run(&["eval", path_str(&model), path_str(&data), "--input-size", "16"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn counts_replay_prints_the_report() {
    let tmp = tempdir().unwrap();
    let counts = tmp.path().join("counts.csv");
    fs::write(&counts, "157,13,0,13\n4,167,0,12\n0,0,183,0\n31,6,1,145\n").unwrap();
    let o = run(&["eval", "--counts", path_str(&counts)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = |l: &str| text.lines().find(|x| x.starts_with(l)).unwrap().split_whitespace().skip(1).collect::<Vec<_>>().join(" ");
    assert_eq!(row("deterioration"), "0.82 0.86 0.84 183");
    assert_eq!(row("mould"), "0.90 0.91 0.91 183");
    assert_eq!(row("normal"), "0.99 1.00 1.00 183");
    assert_eq!(row("stain"), "0.85 0.79 0.82 183");
    assert_eq!(row("accuracy"), "0.89 732");
}

#[test]
fn predict_zero_model_and_size_errors() {
    let tmp = tempdir().unwrap();
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Gap, 4, 224).unwrap();
    let mut zero = Model::build(&spec, 0).unwrap();
    zero.params_mut().values_mut().for_each(|t| t.data_mut().fill(0.0));
    let model = save(&zero, &tmp.path().join("zero.dnw"));
    let img = tmp.path().join("x.ppm");
    write_ppm(&img, &RasterImage::filled(224, 224, [90, 30, 200])).unwrap();
    let o = run(&["predict", path_str(&model), path_str(&img)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "deterioration p_det=0.2500 p_mould=0.2500 p_normal=0.2500 p_stain=0.2500\n");

    let small = tmp.path().join("small.ppm");
    write_ppm(&small, &RasterImage::filled(100, 224, [0, 0, 0])).unwrap();
    let o = run(&["predict", path_str(&model), path_str(&small)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("expected 224×224"), "{}", stderr(&o));
    let o = run(&["predict", path_str(&tmp.path().join("nope.dnw")), path_str(&img)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn printed_probabilities_sum_to_one() {
    let tmp = tempdir().unwrap();
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 4 }], HeadSpec::Gap, 4, 224).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..4 {
        let model = save(&Model::build(&spec, seed).unwrap(), &tmp.path().join("m.dnw"));
        let img = tmp.path().join("s.ppm");
        write_ppm(&img, &patch_scene(224, 60, &mut rng).image).unwrap();
        let o = run(&["predict", path_str(&model), path_str(&img)]);
        let line = stdout(&o);
        let total: f64 = line.split_whitespace().skip(1).map(|kv| kv.split('=').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() <= 2e-4, "{line}");
    }
}

#[test]
fn cam_overlay_and_region() {
    let tmp = tempdir().unwrap();
    let model = save(&quadrant_model(224), &tmp.path().join("q.dnw"));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scene = patch_scene(224, 40, &mut rng);
    let img = tmp.path().join("scene.ppm");
    write_ppm(&img, &scene.image).unwrap();

    let out = tmp.path().join("o.ppm");
    let o = run(&["cam", path_str(&model), path_str(&img), path_str(&out), "--alpha", "0", "--class", "deterioration"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_ppm(&out).unwrap(), scene.image);

    let o = run(&["cam", path_str(&model), path_str(&img), path_str(&out), "--class", "deterioration"]);
    let line = stdout(&o);
    let nums: Vec<usize> = line
        .split_whitespace()
        .skip(2)
        .map(|kv| kv.split('=').nth(1).unwrap().parse().unwrap())
        .collect();
    let [x, y, w, h] = nums[..] else { panic!("{line}") };
    let (qx, qy) = ((scene.quadrant % 2) * 112, (scene.quadrant / 2) * 112);
    assert!(x >= qx && y >= qy && x + w <= qx + 112 && y + h <= qy + 112, "{line} vs quadrant {}", scene.quadrant);
}

#[test]
fn cam_flat_map_and_capability_errors() {
    let tmp = tempdir().unwrap();
    let spec = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Gap, 4, 224).unwrap();
    let mut zero = Model::build(&spec, 0).unwrap();
    zero.params_mut().values_mut().for_each(|t| t.data_mut().fill(0.0));
    let model = save(&zero, &tmp.path().join("z.dnw"));
    let src = RasterImage::filled(224, 224, [100, 150, 200]);
    let img = tmp.path().join("i.ppm");
    write_ppm(&img, &src).unwrap();
    let out = tmp.path().join("o.ppm");
    let o = run(&["cam", path_str(&model), path_str(&img), path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "class=deterioration region none\n");
    let cold = colormap_lookup(0.0);
    let got = read_ppm(&out).unwrap();
    for (c, (&v, &base)) in got.pixel(7, 9).iter().zip(&src.pixel(7, 9)).enumerate() {
        let want = 0.5 * base as f32 / 255.0 + 0.5 * cold[c];
        assert!((v as f32 / 255.0 - want).abs() <= 0.5 / 255.0 + 1e-6);
    }

    let fc = ArchSpec::new(vec![BlockSpec { convs: 1, filters: 2 }], HeadSpec::Fc(vec![3]), 4, 224).unwrap();
    let model = save(&Model::build(&fc, 0).unwrap(), &tmp.path().join("fc.dnw"));
    assert_eq!(run(&["cam", path_str(&model), path_str(&img), path_str(&out)]).status.code(), Some(5));
    let bad = tmp.path().join("bad.ppm");
    write_ppm(&bad, &RasterImage::filled(32, 32, [0, 0, 0])).unwrap();
    let model = save(&zero, &tmp.path().join("z.dnw"));
    assert_eq!(run(&["cam", path_str(&model), path_str(&bad), path_str(&out)]).status.code(), Some(4));
}
