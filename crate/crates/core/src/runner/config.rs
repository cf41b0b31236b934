//! Experiment configuration, read from TOML. See `docs/config.md` for the
//! schema with every default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::{REFERENCE_EPOCHS, REFERENCE_MILESTONES};
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::fabric::FabricDims;
use crate::noise::{AnnotatorConfig, TransitionMatrix};
use crate::optim::SgdConfig;
use crate::pruning::{ApplyOptions, Criterion, PlanOptions, Strategy, WeightBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    pub fabric: FabricConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub augment: AugmentOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruningConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn default_batch() -> usize {
    64
}
fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricConfig {
    pub layers: usize,
    pub channels: usize,
    /// Input side in pixels; the scale count follows as `log2(resolution) + 1`.
    pub resolution: usize,
    pub classes: usize,
}

impl FabricConfig {
    pub fn dims(&self) -> Result<FabricDims> {
        FabricDims::for_resolution(self.layers, self.channels, self.resolution, self.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        per_class: usize,
        #[serde(default)]
        difficulty: f64,
        /// Defaults to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Fixed-size binary records (1 label byte + 3·R·R pixel bytes).
    Binary {
        path: PathBuf,
        /// Side length stored in the file; defaults to the fabric resolution.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resolution: Option<usize>,
        /// Label bytes per record; the last one is the class (2 for CIFAR-100).
        #[serde(default = "one")]
        label_bytes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation, test, and optionally a fourth split reserved for
    /// the annotator.
    pub fractions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.7, 0.15, 0.15],
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Epoch budget that `milestones` and the prune epochs are expressed in;
    /// both are rescaled proportionally to `epochs`.
    #[serde(default = "default_reference")]
    pub reference_epochs: usize,
    #[serde(default = "default_milestones")]
    pub milestones: Vec<usize>,
}

fn default_reference() -> usize {
    REFERENCE_EPOCHS
}
fn default_milestones() -> Vec<usize> {
    REFERENCE_MILESTONES.to_vec()
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            reference_epochs: default_reference(),
            milestones: default_milestones(),
        }
    }
}

/// Augmentation fields left out fall back to
/// [`AugmentConfig::for_resolution`] at the fabric resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_prob: Option<f64>,
}

impl AugmentOverrides {
    pub fn resolve(&self, resolution: usize) -> AugmentConfig {
        let d = AugmentConfig::for_resolution(resolution);
        AugmentConfig {
            mean: self.mean.unwrap_or(d.mean),
            std: self.std.unwrap_or(d.std),
            resize: self.resize.unwrap_or(d.resize),
            crop: resolution,
            padding: self.padding.unwrap_or(d.padding),
            flip_prob: self.flip_prob.unwrap_or(d.flip_prob),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    #[default]
    Validation,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningConfig {
    pub strategy: Strategy,
    pub sparsity: f64,
    pub criterion: Criterion,
    /// Split whose batches feed sensitivity scoring.
    #[serde(default)]
    pub gradient_source: GradientSource,
    /// Cap on the number of batches used for sensitivity scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_batches: Option<usize>,
    #[serde(default = "yes")]
    pub cascade_counts_toward_quota: bool,
    #[serde(default)]
    pub weight_base: WeightBase,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl PruningConfig {
    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            weight_base: self.weight_base,
        }
    }

    pub fn apply_options(&self) -> ApplyOptions {
        ApplyOptions {
            cascade_counts_toward_quota: self.cascade_counts_toward_quota,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPattern {
    Symmetric,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorSplit {
    /// The annotator learns from the training split it will relabel.
    #[default]
    Train,
    /// The annotator learns from a fourth split of its own.
    Dedicated,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    Uniform {
        rate: f64,
    },
    Class {
        /// Explicit transition matrix; overrides `pattern` and `rate`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<TransitionMatrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<ClassPattern>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    Annotator {
        epsilon: f64,
        #[serde(default)]
        split: AnnotatorSplit,
        #[serde(default)]
        annotator: AnnotatorConfig,
    },
}

impl NoiseConfig {
    pub fn is_none(&self) -> bool {
        matches!(self, NoiseConfig::None)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseConfig::None => "none",
            NoiseConfig::Uniform { .. } => "uniform",
            NoiseConfig::Class { .. } => "class",
            NoiseConfig::Annotator { .. } => "annotator",
        }
    }

    /// Transition matrix of a class-noise spec.
    pub fn transition(&self, classes: usize) -> Result<Option<TransitionMatrix>> {
        let NoiseConfig::Class { matrix, pattern, rate } = self else {
            return Ok(None);
        };
        if let Some(m) = matrix {
            return Ok(Some(m.clone()));
        }
        let rate = rate.ok_or_else(|| Error::Config("class noise needs `matrix` or `rate`".into()))?;
        Ok(Some(match pattern.unwrap_or(ClassPattern::Symmetric) {
            ClassPattern::Symmetric => TransitionMatrix::symmetric(classes, rate)?,
            ClassPattern::Pair => TransitionMatrix::pair_flip(classes, rate)?,
        }))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative dataset paths are relative to the config file.
        if let DatasetConfig::Binary { path: p, .. } = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn dims(&self) -> Result<FabricDims> {
        self.fabric.dims()
    }

    pub fn augment(&self) -> AugmentConfig {
        self.augment.resolve(self.fabric.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size < 2 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augment().validate()?;
        let nsplits = self.split.fractions.len();
        if !(3..=4).contains(&nsplits) {
            return Err(Error::Config(format!(
                "split.fractions needs 3 or 4 entries (train, validation, test[, annotator]), got {nsplits}"
            )));
        }
        if self.schedule.reference_epochs == 0 || self.schedule.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(
                "schedule milestones must be sorted over a positive reference".into(),
            ));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                per_class, difficulty, ..
            } => {
                if *per_class == 0 || !(0.0..=1.0).contains(difficulty) {
                    return Err(Error::Config(
                        "synthetic dataset: per_class > 0, difficulty in [0, 1]".into(),
                    ));
                }
            }
            DatasetConfig::Binary {
                resolution,
                label_bytes,
                ..
            } => {
                if resolution == &Some(0) || *label_bytes == 0 {
                    return Err(Error::Config(
                        "binary dataset resolution and label_bytes must be positive".into(),
                    ));
                }
            }
        }
        if let Some(p) = &self.pruning {
            if !(p.sparsity > 0.0 && p.sparsity < 1.0) {
                return Err(Error::Config(format!("pruning.sparsity {} outside (0, 1)", p.sparsity)));
            }
        }
        match &self.noise {
            NoiseConfig::None => {}
            NoiseConfig::Uniform { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Config(format!("noise.rate {rate} outside [0, 1]")));
                }
            }
            NoiseConfig::Class { .. } => {
                let t = self
                    .noise
                    .transition(self.fabric.classes)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if t.is_some_and(|t| t.classes() != self.fabric.classes) {
                    return Err(Error::Config("noise.matrix size differs from fabric.classes".into()));
                }
            }
            NoiseConfig::Annotator { epsilon, split, .. } => {
                let k = self.fabric.classes as f64;
                if !(*epsilon > 0.0 && *epsilon < 1.0 - 1.0 / k) {
                    return Err(Error::Config(format!("noise.epsilon {epsilon} outside (0, 1 - 1/K)")));
                }
                if *split == AnnotatorSplit::Dedicated && nsplits != 4 {
                    return Err(Error::Config(
                        "a dedicated annotator split needs four split fractions".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
