use defectnet::data::{AugmentParams, LabeledDataset, RasterImage};
use defectnet::synth::two_tone_dataset;
use defectnet::train::{train, TrainConfig};
use defectnet::weights_io::{load_into, LoadPolicy};
use defectnet::{ArchSpec, BlockSpec, HeadSpec, Model, TrainRule, LABELS};

#[test]
fn vgg_freeze_up_to_block_four_only_moves_block_five_and_head() {
    let spec = ArchSpec::preset("paper-vgg16", HeadSpec::Gap, 4).unwrap();
    let mut model = Model::build(&spec, 21).unwrap();
    model.set_trainable(TrainRule::FreezeUpToBlock(4)).unwrap();
    let start = model.clone();
    let mut ds = LabeledDataset::new(&LABELS);
    for (label, rgb) in [[120, 40, 40], [30, 90, 30], [200, 200, 200], [90, 60, 20]].into_iter().enumerate() {
        ds.push(RasterImage::filled(224, 224, rgb), label);
    }
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        steps_per_epoch: 1,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    train(&mut model, &ds, &ds, &AugmentParams::default(), &cfg).unwrap();
    let trainable: Vec<&str> = model.trainable_names();
    assert!(trainable.iter().all(|n| n.starts_with("block5.") || n.starts_with("head.")));
    for (name, before) in start.params() {
        let after = &model.params()[name];
        if name.starts_with("block5.conv") && name.ends_with(".w") || name == "head.out.w" {
            assert_ne!(after, before, "{name} should have moved");
        } else if !model.is_trainable(name) {
            assert_eq!(after, before, "{name} is frozen");
        }
    }
}

#[test]
fn pretrained_backbone_transfers_into_new_head() {
    let blocks = vec![BlockSpec { convs: 1, filters: 4 }, BlockSpec { convs: 1, filters: 8 }];
    let source_spec = ArchSpec::new(blocks.clone(), HeadSpec::Gap, 2, 16).unwrap();
    let mut source = Model::build(&source_spec, 1).unwrap();
    let ds = two_tone_dataset(6, 16, 2);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        steps_per_epoch: 5,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    train(&mut source, &ds, &ds, &AugmentParams::disabled(), &cfg).unwrap();

    let target_spec = ArchSpec::new(blocks, HeadSpec::Gap, 4, 16).unwrap();
    let mut target = Model::build(&target_spec, 9).unwrap();
    let copied = load_into(&mut target, source.params(), LoadPolicy::SkipMissing).unwrap();
    assert_eq!(copied, ["block1.conv1.w", "block1.conv1.b", "block2.conv1.w", "block2.conv1.b"]);
    for (name, t) in source.params().iter().filter(|(n, _)| n.starts_with("block")) {
        assert_eq!(&target.params()[name], t);
    }
    assert_eq!(target.params()["head.out.w"].shape(), [8, 4]);
}
