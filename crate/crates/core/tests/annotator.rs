use cnf_core::data::{make_synthetic, stratified_split, AugmentConfig, ImageDataset, SyntheticSpec};
use cnf_core::noise::{relabel_with_annotator, train_annotator, AnnotatorConfig};
use cnf_core::runner::{error_rate, prepare_eval_images};

fn splits() -> (ImageDataset<f32>, ImageDataset<f32>) {
    let d = make_synthetic::<f32>(&SyntheticSpec {
        classes: 3,
        per_class: 40,
        resolution: 8,
        seed: 2,
        difficulty: 0.3,
    })
    .unwrap();
    let mut parts = stratified_split(&d, &[0.5, 0.5], 1).unwrap();
    let held = parts.pop().unwrap();
    (parts.pop().unwrap(), held)
}

fn config(max_epochs: usize) -> AnnotatorConfig {
    AnnotatorConfig {
        layers: 2,
        channels: 2,
        batch_size: 16,
        max_epochs,
        ..AnnotatorConfig::default()
    }
}

#[test]
fn target_error_must_be_below_chance() {
    let (train, held) = splits();
    let aug = AugmentConfig::for_resolution(8);
    for eps in [0.0, -0.1, 0.7, 0.9] {
        assert!(train_annotator(&train, &held, eps, &config(1), &aug).is_err(), "{eps}");
    }
}

#[test]
fn exhausted_budget_returns_the_closest_checkpoint() {
    let (train, held) = splits();
    let aug = AugmentConfig::for_resolution(8);
    let mut cfg = config(3);
    cfg.tolerance = 1e-9;
    let a = train_annotator(&train, &held, 0.1234, &cfg, &aug).unwrap();
    assert!(!a.in_band);
    assert_eq!(a.curve.len(), 4);
    let closest = a
        .curve
        .iter()
        .enumerate()
        .min_by(|x, y| (x.1 - 0.1234).abs().total_cmp(&(y.1 - 0.1234).abs()))
        .unwrap();
    assert_eq!(a.heldout_error, *closest.1);
    assert_eq!(a.epoch, closest.0);
    // The returned checkpoint really has that error.
    let images = prepare_eval_images(&held, &aug).unwrap();
    let preds = a.fabric.predict(&images, 64).unwrap();
    assert_eq!(error_rate(&preds, &held.labels), a.heldout_error);
}

#[test]
fn in_band_stop_and_relabel_rate() {
    let (train, held) = splits();
    let aug = AugmentConfig::for_resolution(8);
    let mut cfg = config(40);
    cfg.tolerance = 0.1;
    let a = train_annotator(&train, &held, 0.3, &cfg, &aug).unwrap();
    if a.in_band {
        assert!((a.heldout_error - 0.3).abs() <= 0.1 + 1e-12);
        assert_eq!(a.curve.len(), a.epoch + 1);
        assert!(a.curve[..a.epoch].iter().all(|e| (e - 0.3).abs() > 0.1));
    }
    // Relabelling the held-out set reproduces the held-out error exactly.
    let set = relabel_with_annotator(&held, &a).unwrap();
    assert_eq!(set.clean_labels, held.labels);
    assert_eq!(set.mislabel_fraction(), a.heldout_error);
}
