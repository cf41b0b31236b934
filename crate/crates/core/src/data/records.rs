//! Fixed-size binary records: label bytes followed by `C·R·R` pixel bytes,
//! channel-major (all of red, then green, then blue), row-major within a
//! channel. One label byte is the CIFAR-10 layout; CIFAR-100 stores a coarse
//! and a fine label, and the last label byte is the one read.

use std::fs;
use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::fabric::IMAGE_CHANNELS;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLayout {
    pub resolution: usize,
    pub classes: usize,
    pub label_bytes: usize,
}

impl RecordLayout {
    pub fn new(resolution: usize, classes: usize) -> Self {
        Self {
            resolution,
            classes,
            label_bytes: 1,
        }
    }

    pub fn record_bytes(&self) -> usize {
        self.label_bytes + IMAGE_CHANNELS * self.resolution * self.resolution
    }
}

pub fn parse_binary_records<T: Scalar>(bytes: &[u8], layout: RecordLayout, path: &Path) -> Result<ImageDataset<T>> {
    let rec = layout.record_bytes();
    let lb = layout.label_bytes;
    let format_err = |offset: usize, detail: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail,
    };
    if lb == 0 {
        return Err(Error::Input("records need at least one label byte".into()));
    }
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(format_err(
            bytes.len() - bytes.len() % rec,
            format!(
                "file size {} is not a positive multiple of the {rec}-byte record size",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (rec - lb));
    for (i, chunk) in bytes.chunks_exact(rec).enumerate() {
        let y = chunk[lb - 1] as usize;
        if y >= layout.classes {
            return Err(format_err(
                i * rec + lb - 1,
                format!("label {y} with {} classes", layout.classes),
            ));
        }
        labels.push(y);
        pixels.extend(chunk[lb..].iter().map(|&b| T::of(b as f64 / 255.0)));
    }
    let r = layout.resolution;
    ImageDataset::new(
        Tensor::new(vec![n, IMAGE_CHANNELS, r, r], pixels)?,
        labels,
        ImageDataset::<T>::numbered_classes(layout.classes),
    )
}

pub fn load_binary_records<T: Scalar>(path: &Path, layout: RecordLayout) -> Result<ImageDataset<T>> {
    let bytes = fs::read(path)?;
    parse_binary_records(&bytes, layout, path)
}

/// Encodes a dataset with one label byte per record; pixels are clamped to `[0, 1]`
/// and rounded to the nearest of 256 levels.
pub fn write_binary_records<T: Scalar>(dataset: &ImageDataset<T>) -> Result<Vec<u8>> {
    if dataset.classes() > 256 {
        return Err(Error::Input("record labels are one byte; more than 256 classes".into()));
    }
    let per = dataset.images.len() / dataset.len();
    let mut out = Vec::with_capacity(dataset.len() * (per + 1));
    for (i, &y) in dataset.labels.iter().enumerate() {
        out.push(y as u8);
        out.extend(
            dataset.images.data()[i * per..(i + 1) * per]
                .iter()
                .map(|v| (v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}
