use std::path::Path;

use cnf_core::data::{
    augment, dominant_object_label, load_binary_records, make_synthetic, parse_binary_records, prepare_eval,
    read_index_list, stratified_split, stratified_split_indices, write_binary_records, write_index_list,
    AnnotationRecord, AugmentConfig, Dominant, ImageDataset, RecordLayout, SyntheticSpec,
};
use cnf_core::{Error, Tensor};
use proptest::prelude::*;

fn synthetic(per_class: usize, difficulty: f64, seed: u64) -> ImageDataset<f32> {
    make_synthetic(&SyntheticSpec {
        classes: 3,
        per_class,
        resolution: 16,
        seed,
        difficulty,
    })
    .unwrap()
}

#[test]
fn synthetic_sizes_and_balance() {
    let d = synthetic(50, 0.3, 1);
    assert_eq!(d.len(), 150);
    assert_eq!(d.images.shape(), &[150, 3, 16, 16]);
    assert_eq!(d.class_counts(), vec![50, 50, 50]);
    assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn synthetic_is_bit_identical_per_seed() {
    let (a, b, c) = (synthetic(20, 0.3, 4), synthetic(20, 0.3, 4), synthetic(20, 0.3, 5));
    assert_eq!(a.images.data(), b.images.data());
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.images.data(), c.images.data());
}

/// Nearest-centroid accuracy on raw pixels: centroids from even items,
/// evaluated on odd items.
fn centroid_accuracy(d: &ImageDataset<f32>) -> f64 {
    let dim = d.images.len() / d.len();
    let mut centroids = vec![vec![0.0f64; dim]; d.classes()];
    let mut counts = vec![0usize; d.classes()];
    for i in (0..d.len()).step_by(2) {
        let y = d.labels[i];
        counts[y] += 1;
        for (c, &v) in centroids[y].iter_mut().zip(d.image(i).data()) {
            *c += v as f64;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let mut correct = 0;
    let mut total = 0;
    for i in (1..d.len()).step_by(2) {
        let img = d.image(i);
        let dist = |c: &Vec<f64>| {
            c.iter()
                .zip(img.data())
                .map(|(a, &b)| (a - b as f64).powi(2))
                .sum::<f64>()
        };
        let best = (0..d.classes())
            .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
            .unwrap();
        correct += usize::from(best == d.labels[i]);
        total += 1;
    }
    correct as f64 / total as f64
}

#[test]
fn easy_synthetic_data_is_learnable_by_nearest_centroid() {
    for seed in 0..3 {
        let acc = centroid_accuracy(&synthetic(100, 0.1, seed));
        assert!(acc > 0.9, "seed {seed}: nearest-centroid accuracy {acc}");
    }
}

#[test]
fn harder_synthetic_data_is_harder() {
    let easy = centroid_accuracy(&synthetic(100, 0.0, 7));
    let hard = centroid_accuracy(&synthetic(100, 1.0, 7));
    assert!(hard < easy, "easy {easy} hard {hard}");
}

#[test]
fn split_sidecars_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.txt");
    write_index_list(&path, &[3, 1, 4, 1, 5]).unwrap();
    assert_eq!(read_index_list(&path).unwrap(), vec![3, 1, 4, 1, 5]);
}

#[test]
fn split_rejects_bad_fractions() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    assert!(stratified_split_indices(&labels, 3, &[0.7, 0.5], 0).is_err());
    assert!(stratified_split_indices(&labels, 3, &[0.7, 0.0], 0).is_err());
    assert!(stratified_split_indices(&labels, 3, &[], 0).is_err());
}

#[test]
fn split_datasets_keep_their_images() {
    let d = synthetic(10, 0.3, 2);
    let parts = stratified_split(&d, &[0.6, 0.4], 9).unwrap();
    let idx = stratified_split_indices(&d.labels, 3, &[0.6, 0.4], 9).unwrap();
    for (part, idx) in parts.iter().zip(&idx) {
        for (j, &i) in idx.iter().enumerate() {
            assert_eq!(part.labels[j], d.labels[i]);
            assert_eq!(part.image(j).data(), d.image(i).data());
        }
    }
}

#[test]
fn binary_records_round_trip_through_a_file() {
    let d = synthetic(4, 0.3, 3);
    let bytes = write_binary_records(&d).unwrap();
    let layout = RecordLayout::new(16, 3);
    assert_eq!(bytes.len(), 12 * layout.record_bytes());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.bin");
    std::fs::write(&path, &bytes).unwrap();
    let back: ImageDataset<f32> = load_binary_records(&path, layout).unwrap();
    assert_eq!(back.labels, d.labels);
    for (a, b) in back.images.data().iter().zip(d.images.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
    // Quantised values survive a second round trip exactly.
    let again: ImageDataset<f32> =
        parse_binary_records(&write_binary_records(&back).unwrap(), layout, Path::new("again")).unwrap();
    assert_eq!(again.images.data(), back.images.data());
}

#[test]
fn two_label_bytes_read_the_second() {
    let d = synthetic(2, 0.3, 4);
    let one = write_binary_records(&d).unwrap();
    let layout = RecordLayout::new(16, 3);
    let mut two = Vec::new();
    for (i, rec) in one.chunks_exact(layout.record_bytes()).enumerate() {
        two.push(200 + i as u8);
        two.extend_from_slice(rec);
    }
    let wide = RecordLayout {
        label_bytes: 2,
        ..layout
    };
    let a: ImageDataset<f32> = parse_binary_records(&one, layout, Path::new("one")).unwrap();
    let b: ImageDataset<f32> = parse_binary_records(&two, wide, Path::new("two")).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.images.data(), b.images.data());
}

#[test]
fn malformed_records_are_format_errors() {
    let layout = RecordLayout::new(2, 10);
    let truncated = vec![0u8; layout.record_bytes() + 3];
    let r = parse_binary_records::<f32>(&truncated, layout, Path::new("t.bin"));
    assert!(matches!(r, Err(Error::Format { .. })), "{r:?}");
    let mut bad_label = vec![0u8; layout.record_bytes()];
    bad_label[0] = 10;
    let r = parse_binary_records::<f32>(&bad_label, layout, Path::new("t.bin"));
    assert!(matches!(r, Err(Error::Format { .. })), "{r:?}");
    assert!(parse_binary_records::<f32>(&[], layout, Path::new("t.bin")).is_err());
}

#[test]
fn eval_preparation_is_plain_normalisation_at_native_size() {
    let d = synthetic(2, 0.3, 3);
    let cfg = AugmentConfig::for_resolution(16);
    let img = d.image(0);
    let out = prepare_eval(&img, &cfg).unwrap();
    for (o, x) in out.data().iter().zip(img.data()) {
        assert!((o - (x - 0.5) / 0.25).abs() < 1e-6);
    }
}

#[test]
fn dominant_label_examples() {
    let one = AnnotationRecord::new(vec![(4, 10.0), (4, 30.0)]).unwrap();
    assert_eq!(dominant_object_label(&one), Dominant::Label(4));
    let twice = AnnotationRecord::new(vec![(1, 20.0), (2, 10.0)]).unwrap();
    assert_eq!(dominant_object_label(&twice), Dominant::Label(1));
    let close = AnnotationRecord::new(vec![(1, 19.0), (2, 10.0)]).unwrap();
    assert_eq!(dominant_object_label(&close), Dominant::Discard);
}

proptest! {
    #[test]
    fn splits_partition_the_items(
        labels in prop::collection::vec(0usize..4, 40..200),
        raw in prop::collection::vec(0.05f64..1.0, 1..5),
        seed in any::<u64>(),
    ) {
        let total: f64 = raw.iter().sum();
        let fractions: Vec<f64> = raw.iter().map(|f| f / total).collect();
        let mut counts = [0usize; 4];
        labels.iter().for_each(|&y| counts[y] += 1);
        prop_assume!(counts.iter().all(|&c| c == 0 || c >= fractions.len()));
        let splits = stratified_split_indices(&labels, 4, &fractions, seed).unwrap();
        let mut all: Vec<usize> = splits.concat();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n, "an index appears twice");
        prop_assert!(all.iter().all(|&i| i < labels.len()));
        // Fractions sum to one, so every item is used.
        prop_assert_eq!(n, labels.len());
        prop_assert_eq!(&splits, &stratified_split_indices(&labels, 4, &fractions, seed).unwrap());
        // Per class, split sizes are within one of the exact share.
        for k in 0..4 {
            for (s, f) in splits.iter().zip(&fractions) {
                let got = s.iter().filter(|&&i| labels[i] == k).count() as f64;
                prop_assert!((got - f * counts[k] as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn augmentation_depends_only_on_the_item_and_seed(seed in any::<u64>(), fill in 0.0f32..1.0) {
        let d = synthetic(2, 0.5, 11);
        let cfg = AugmentConfig::for_resolution(16);
        let img = d.image(3);
        let a = augment(&img, &cfg, seed).unwrap();
        // The same image inside a different dataset gives the same output.
        let mut other = Tensor::full(&[4, 3, 16, 16], fill);
        other.data_mut()[3 * 768..4 * 768].copy_from_slice(img.data());
        let other = ImageDataset::new(other, vec![0, 1, 2, 2], ImageDataset::<f32>::numbered_classes(3)).unwrap();
        let b = augment(&other.image(3), &cfg, seed).unwrap();
        prop_assert_eq!(a.data(), b.data());
        prop_assert_eq!(a.shape(), &[3, 16, 16]);
    }

    #[test]
    fn dominant_label_is_permutation_invariant(
        objects in prop::collection::vec((0usize..4, 0.1f64..100.0), 1..8),
        rot in 0usize..8,
    ) {
        let rec = AnnotationRecord::new(objects.clone()).unwrap();
        let mut shuffled = objects.clone();
        shuffled.rotate_left(rot % objects.len());
        shuffled.reverse();
        let other = AnnotationRecord::new(shuffled).unwrap();
        prop_assert_eq!(dominant_object_label(&rec), dominant_object_label(&other));
    }
}
