use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::data::{AugmentConfig, ImageDataset};
use crate::error::{Error, Result};
use crate::fabric::{Fabric, FabricDims};
use crate::optim::{Sgd, SgdConfig};
use crate::runner::{evaluate, mix_seed, prepare_eval_images, train_epoch, TrainSettings};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_sgd")]
    pub optimizer: SgdConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Half-width δ of the accepted band `[ε − δ, ε + δ]`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_layers() -> usize {
    3
}
fn default_channels() -> usize {
    4
}
fn default_sgd() -> SgdConfig {
    SgdConfig {
        learning_rate: 0.003,
        momentum: 0.9,
        weight_decay: 0.0,
    }
}
fn default_batch() -> usize {
    64
}
fn default_max_epochs() -> usize {
    100
}
fn default_tolerance() -> f64 {
    0.01
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            channels: default_channels(),
            optimizer: default_sgd(),
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            tolerance: default_tolerance(),
            seed: 0,
        }
    }
}

/// A classifier whose held-out error was driven to a target.
#[derive(Debug, Clone)]
pub struct Annotator<T> {
    pub fabric: Fabric<T>,
    pub augment: AugmentConfig,
    /// Epoch of the returned checkpoint (0 = untrained).
    pub epoch: usize,
    pub heldout_error: f64,
    /// Whether the returned checkpoint lies inside the band. False means the
    /// closest checkpoint was returned after the epoch cap.
    pub in_band: bool,
    /// Held-out error after each evaluated epoch, starting with epoch 0.
    pub curve: Vec<f64>,
}

/// Trains a small fabric on `train` (clean labels), evaluating on `heldout`
/// after every epoch, and stops at the first epoch whose held-out error lies
/// in `[ε − δ, ε + δ]`. If the cap is reached first, the checkpoint with
/// error closest to `ε` is returned with `in_band = false`.
pub fn train_annotator<T: Scalar>(
    train: &ImageDataset<T>,
    heldout: &ImageDataset<T>,
    epsilon: f64,
    config: &AnnotatorConfig,
    augment: &AugmentConfig,
) -> Result<Annotator<T>> {
    let k = train.classes();
    if !(epsilon > 0.0 && epsilon < 1.0 - 1.0 / k as f64) {
        return Err(Error::Input(format!(
            "annotator target error {epsilon} outside (0, {})",
            1.0 - 1.0 / k as f64
        )));
    }
    if heldout.classes() != k {
        return Err(Error::Input("train and held-out sets disagree on classes".into()));
    }
    let dims = FabricDims::for_resolution(config.layers, config.channels, augment.crop, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0xA77]));
    let mut fabric = Fabric::<T>::new(dims, &mut rng)?;
    let mut sgd = Sgd::new(config.optimizer)?;
    let settings = TrainSettings {
        batch_size: config.batch_size,
        augment: augment.clone(),
        seed: mix_seed(&[config.seed, 0xA78]),
    };
    let held_images = prepare_eval_images(heldout, augment)?;
    let band = |e: f64| (e - epsilon).abs() <= config.tolerance + 1e-12;

    let mut curve = vec![evaluate(&fabric, &held_images, &heldout.labels, config.batch_size)?];
    let mut best = (fabric.clone(), 0, curve[0]);
    if band(curve[0]) {
        return Ok(Annotator {
            fabric,
            augment: augment.clone(),
            epoch: 0,
            heldout_error: curve[0],
            in_band: true,
            curve,
        });
    }
    for epoch in 1..=config.max_epochs {
        train_epoch(&mut fabric, &mut sgd, train, &train.labels, &settings, epoch)?;
        let err = evaluate(&fabric, &held_images, &heldout.labels, config.batch_size)?;
        curve.push(err);
        if band(err) {
            return Ok(Annotator {
                fabric,
                augment: augment.clone(),
                epoch,
                heldout_error: err,
                in_band: true,
                curve,
            });
        }
        if (err - epsilon).abs() < (best.2 - epsilon).abs() {
            best = (fabric.clone(), epoch, err);
        }
    }
    let (fabric, epoch, heldout_error) = best;
    Ok(Annotator {
        fabric,
        augment: augment.clone(),
        epoch,
        heldout_error,
        in_band: false,
        curve,
    })
}

/// Type 3 noise: the annotator's predictions become the given labels.
pub fn relabel_with_annotator<T: Scalar>(dataset: &ImageDataset<T>, annotator: &Annotator<T>) -> Result<LabeledSet> {
    let images = prepare_eval_images(dataset, &annotator.augment)?;
    let predictions = annotator.fabric.predict(&images, 256)?;
    LabeledSet::new(dataset.labels.clone(), predictions, dataset.classes())
}
