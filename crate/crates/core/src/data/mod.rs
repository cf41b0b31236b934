//! Image datasets: containers, binary record files, stratified splits,
//! augmentation, a synthetic generator and the dominant-object rule.

mod annotation;
mod augment;
mod records;
mod split;
mod synthetic;

pub use annotation::{dominant_object_label, AnnotationRecord, Dominant};
pub use augment::{
    augment, center_crop, crop_padded, denormalize, flip_horizontal, normalize, prepare_eval, resize_bilinear,
    AugmentConfig,
};
pub use records::{load_binary_records, parse_binary_records, write_binary_records, RecordLayout};
pub use split::{read_index_list, stratified_split, stratified_split_indices, write_index_list};
pub use synthetic::{make_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::fabric::IMAGE_CHANNELS;
use crate::tensor::{Scalar, Tensor};

/// Images `[N, 3, R, R]` with values in `[0, 1]` and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> ImageDataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let (n, c, h, w) = images.dims4("dataset")?;
        if c != IMAGE_CHANNELS || h != w {
            return Err(Error::shape(
                "dataset",
                format!("images must be [N, {IMAGE_CHANNELS}, R, R], got [{n}, {c}, {h}, {w}]"),
            ));
        }
        if n == 0 {
            return Err(Error::Input("dataset has no items".into()));
        }
        if labels.len() != n {
            return Err(Error::shape(
                "dataset",
                format!("{n} images but {} labels", labels.len()),
            ));
        }
        if class_names.is_empty() {
            return Err(Error::Input("dataset has no classes".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_names.len()) {
            return Err(Error::Input(format!(
                "label {y} of item {i} is outside {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            class_names,
        })
    }

    /// Classes named `"0"`, `"1"`, ...
    pub fn numbered_classes(classes: usize) -> Vec<String> {
        (0..classes).map(|k| k.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolution(&self) -> usize {
        self.images.shape()[2]
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Input(format!("index {i} out of range for {} items", self.len())));
        }
        Self::new(
            self.images.gather_outer(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// One image as `[3, R, R]`.
    pub fn image(&self, i: usize) -> Tensor<T> {
        let r = self.resolution();
        self.images
            .slice_outer(i, i + 1)
            .reshape(&[IMAGE_CHANNELS, r, r])
            .expect("same element count")
    }
}
