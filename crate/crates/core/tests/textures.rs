use defectnet::data::AugmentParams;
use defectnet::synth::{texture_arch, texture_dataset, Palette};
use defectnet::train::{evaluate, train, TrainConfig};
use defectnet::{metrics, Model};

#[test]
fn held_out_textures_are_recognised() {
    let side = 64;
    let train_ds = texture_dataset(16, side, Palette::Source, 11);
    let held_out = texture_dataset(25, side, Palette::Source, 12);
    let mut model = Model::build(&texture_arch(side), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        steps_per_epoch: 50,
        learning_rate: 0.05,
        momentum: 0.9,
        seed: 3,
    };
    let h = train(&mut model, &train_ds, &held_out, &AugmentParams::disabled(), &cfg).unwrap();
    assert_eq!(h.records.len(), 2);
    let cm = evaluate(&model, &held_out).unwrap();
    let acc = metrics::accuracy(&cm).unwrap();
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}
