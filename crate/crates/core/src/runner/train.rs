use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, prepare_eval, AugmentConfig, ImageDataset};
use crate::error::{Error, Result};
use crate::fabric::{Fabric, Mode};
use crate::optim::Sgd;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Mixes several values into one seed (splitmix64 finalizer per part).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Consecutive `[start, end)` ranges of at most `batch_size` items. A
/// trailing batch of a single item is folded into the previous one, since
/// batch norm needs two samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let bs = batch_size.max(1);
    let mut out: Vec<(usize, usize)> = (0..n).step_by(bs).map(|s| (s, (s + bs).min(n))).collect();
    if out.len() >= 2 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = e;
    }
    out
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Scalar>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("cannot stack zero images".into()))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape("stack", "images differ in shape"));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(shape, data)
}

/// Evaluation-transformed copy of every image of a dataset.
pub fn prepare_eval_images<T: Scalar>(dataset: &ImageDataset<T>, config: &AugmentConfig) -> Result<Tensor<T>> {
    let imgs = (0..dataset.len())
        .map(|i| prepare_eval(&dataset.image(i), config))
        .collect::<Result<Vec<_>>>()?;
    stack(&imgs)
}

/// Fraction of `predictions` that differ from `labels`.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len() as f64
}

/// Mini-batches of eval-transformed images with their labels, in item
/// order. Used as the gradient source of sensitivity scoring.
pub fn eval_batches<T: Scalar>(
    images: &Tensor<T>,
    labels: &[usize],
    batch_size: usize,
    max_batches: Option<usize>,
) -> Vec<(Tensor<T>, Vec<usize>)> {
    batch_ranges(labels.len(), batch_size)
        .into_iter()
        .take(max_batches.unwrap_or(usize::MAX))
        .map(|(s, e)| (images.slice_outer(s, e), labels[s..e].to_vec()))
        .collect()
}

/// Settings shared by every training loop (main runs and the annotator).
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

/// One pass of mini-batch SGD over `data` with the given (possibly noisy)
/// `labels`, in a seeded shuffled order with seeded per-item augmentation.
/// Returns the mean training loss over items.
pub fn train_epoch<T: Scalar>(
    fabric: &mut Fabric<T>,
    sgd: &mut Sgd<T>,
    data: &ImageDataset<T>,
    labels: &[usize],
    settings: &TrainSettings,
    epoch: usize,
) -> Result<f64> {
    let n = data.len();
    if labels.len() != n {
        return Err(Error::shape("train", format!("{n} items but {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::Input("training needs at least two items".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[settings.seed, epoch as u64])));
    let mut total = 0.0;
    for (bi, (s, e)) in batch_ranges(n, settings.batch_size).into_iter().enumerate() {
        let idx = &order[s..e];
        let imgs = idx
            .iter()
            .map(|&i| {
                augment(
                    &data.image(i),
                    &settings.augment,
                    mix_seed(&[settings.seed, epoch as u64, i as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

        let mut tape = Tape::new();
        let x = tape.input(stack(&imgs)?);
        let fw = fabric.forward(&mut tape, x, Mode::Train)?;
        let loss = tape.softmax_cross_entropy(fw.logits, &targets)?;
        let lv = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        if !lv.is_finite() {
            return Err(Error::NonFinite { epoch, batch: bi });
        }
        let grads = tape.backward(loss)?;
        fabric.params.zero_grads();
        grads.accumulate_into(&tape, &mut fabric.params);
        sgd.step(&mut fabric.params);
        fabric.commit_moments(&fw.moments);
        total += lv * targets.len() as f64;
    }
    Ok(total / n as f64)
}

/// Eval-mode error of `fabric` on prepared images.
pub fn evaluate<T: Scalar>(fabric: &Fabric<T>, images: &Tensor<T>, labels: &[usize], batch_size: usize) -> Result<f64> {
    let pred = fabric.predict(images, batch_size)?;
    Ok(error_rate(&pred, labels))
}
