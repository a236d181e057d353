mod common;

use common::{surrogate, transfer_target};
use oncovit::autograd::Tape;
use oncovit::data::Dataset;
use oncovit::models::{Model, ModelConfig, ModelKind};
use oncovit::train::{evaluate, fine_tune, pretrain, train, Checkpoint, Phase, TrainConfig};
use oncovit::Error;

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 25,
        seed,
        ..Default::default()
    }
}

fn pretrained(epochs: usize) -> (Checkpoint, Dataset) {
    let src = surrogate(10, 11, 0.1);
    let config = ModelConfig::for_kind(ModelKind::Vit, 32, 3, 10);
    let (ck, history) = pretrain(config, &src, &src, &quick(epochs, 0)).unwrap();
    assert_eq!(history.len(), 2 * epochs);
    assert_eq!(ck.meta.source_dataset, "surrogate");
    (ck, src)
}

#[test]
fn frozen_backbone_is_bit_identical_and_head_is_resized() {
    let (ck, _) = pretrained(1);
    let target = transfer_target(5, 3, 0.1);
    let cfg = TrainConfig {
        freeze_backbone: true,
        ..quick(2, 1)
    };
    let (model, _) = fine_tune(&ck, &target, &target, &cfg).unwrap();
    let head = model.head_names();
    let mut changed = Vec::new();
    for (name, before) in &ck.params {
        let after = &model.params().by_name(name).unwrap().value;
        if after != before {
            changed.push(name.clone());
        }
    }
    changed.sort();
    let mut head = head;
    head.sort();
    assert_eq!(changed, head, "only the replaced head may differ");
    assert_eq!(model.params().by_name("head.weight").unwrap().value.shape(), &[64, 3]);
    assert_eq!(model.logits(&target.gather(&[0, 1], &[], &mut rand::SeedableRng::seed_from_u64(0)).unwrap().images).unwrap().shape(), &[2, 3]);
}

#[test]
fn unfrozen_fine_tune_moves_backbone() {
    let (ck, _) = pretrained(1);
    let target = transfer_target(5, 3, 0.1);
    let (model, _) = fine_tune(&ck, &target, &target, &quick(1, 1)).unwrap();
    let (name, before) = &ck.params[0];
    assert_ne!(&model.params().by_name(name).unwrap().value, before);
}

#[test]
fn checkpoint_file_round_trip() {
    let (ck, _) = pretrained(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ovck");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let model = loaded.to_model().unwrap();
    for (name, value) in &ck.params {
        assert_eq!(&model.params().by_name(name).unwrap().value, value);
    }
    let again = dir.path().join("b.ovck");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(loaded.meta.adam.beta2, 0.999);
}

#[test]
fn mismatched_config_lists_names() {
    let (ck, _) = pretrained(1);
    let mut other = Model::build(ModelConfig::for_kind(ModelKind::Vit, 32, 3, 10), 0).unwrap();
    if let ModelConfig::Vit(mut c) = other.config() {
        c.num_layers = 3;
        other = Model::build(ModelConfig::Vit(c), 0).unwrap();
    }
    match ck.load_into(&mut other) {
        Err(Error::Validation(msg)) => {
            assert!(msg.contains("encoder.2.attn.wq"), "{msg}");
            assert!(msg.contains("missing"), "{msg}");
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn pretrained_features_are_non_degenerate() {
    let (ck, _) = pretrained(4);
    let model = ck.to_model().unwrap();
    let probe = surrogate(10, 99, 0.1);
    let batch = probe
        .gather(&(0..100).collect::<Vec<_>>(), &[], &mut rand::SeedableRng::seed_from_u64(0))
        .unwrap();
    let tape = Tape::new();
    let p = model.params().bind_constant(&tape);
    let out = model.forward(&tape, &p, tape.constant(batch.images), None).unwrap();
    let feats = tape.value(out.features);
    let d = feats.shape()[1];
    let mut live = 0;
    for j in 0..d {
        let col: Vec<f64> = (0..100).map(|i| feats.data()[i * d + j]).collect();
        let mean = col.iter().sum::<f64>() / 100.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        if var > 0.0 {
            live += 1;
        }
    }
    assert!(live as f64 >= 0.9 * d as f64, "{live}/{d} dimensions vary");
}

#[test]
fn vit_training_is_deterministic() {
    let data = transfer_target(4, 5, 0.2);
    let run = || {
        let mut m = Model::build(ModelConfig::for_kind(ModelKind::Vit, 32, 3, 3), 2).unwrap();
        let h = train(&mut m, &data, &data, &quick(2, 2)).unwrap();
        (h, m.params().clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert!(a.iter().filter(|r| r.split == Phase::Val).count() == 2);
}

#[test]
fn evaluate_accuracy_is_trace_over_total() {
    let data = transfer_target(6, 1, 0.2);
    let model = Model::build(ModelConfig::for_kind(ModelKind::Vit, 32, 3, 3), 4).unwrap();
    let (record, cm) = evaluate(&model, &data).unwrap();
    assert_eq!(cm.total(), data.len() as u64);
    assert_eq!(record.accuracy, cm.correct() as f64 / data.len() as f64);
    assert!(record.loss.is_finite() && record.loss > 0.0);
    let empty = data.subset(&[]);
    assert!(matches!(evaluate(&model, &empty), Err(Error::Empty(_))));
}
