use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::IMAGE_CHANNELS;
use crate::tensor::{Scalar, Tensor};

/// Training-time transform: resize, random crop from a zero-padded image,
/// random horizontal flip, per-channel normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Side length after resizing.
    pub resize: usize,
    /// Side length of the crop; also the model input resolution.
    pub crop: usize,
    /// Zero padding added on every side before cropping.
    pub padding: usize,
    pub flip_prob: f64,
}

impl AugmentConfig {
    /// Resize and crop to `resolution`, 4 px padding, flip with p = 0.5.
    pub fn for_resolution(resolution: usize) -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.25; 3],
            resize: resolution,
            crop: resolution,
            padding: 4,
            flip_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize == 0 || self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "augment: crop {} must be positive and no larger than resize {}",
                self.crop, self.resize
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "augment: flip_prob {} outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("augment: std must be positive and mean finite".into()));
        }
        Ok(())
    }
}

fn dims3<T: Scalar>(img: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {:?}", img.shape()))),
    }
}

/// Bilinear resize to `size × size` with half-pixel centres and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(img, "resize")?;
    if h == size && w == size {
        return Ok(img.clone());
    }
    let taps = |src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / size as f64;
        (0..size)
            .map(|o| {
                let p = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (p.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, p - lo as f64)
            })
            .collect()
    };
    let (th, tw) = (taps(h), taps(w));
    let x = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &x[ch * h * w..][..h * w];
        for &(y0, y1, fy) in &th {
            for &(x0, x1, fx) in &tw {
                let at = |yy: usize, xx: usize| plane[yy * w + xx].to_f64().unwrap_or(0.0);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// `crop × crop` window at `(top, left)` of the image padded by `padding`
/// zeros on every side.
pub fn crop_padded<T: Scalar>(
    img: &Tensor<T>,
    crop: usize,
    padding: usize,
    top: usize,
    left: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(img, "crop")?;
    if top + crop > h + 2 * padding || left + crop > w + 2 * padding {
        return Err(Error::Input(format!(
            "crop {crop} at ({top}, {left}) leaves the padded {}x{} image",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let x = img.data();
    let out = Tensor::from_fn(&[c, crop, crop], |i| {
        let (ch, r, col) = (i / (crop * crop), i / crop % crop, i % crop);
        let (y, xx) = (r + top, col + left);
        if y < padding || xx < padding || y - padding >= h || xx - padding >= w {
            T::zero()
        } else {
            x[(ch * h + y - padding) * w + xx - padding]
        }
    });
    Ok(out)
}

pub fn center_crop<T: Scalar>(img: &Tensor<T>, crop: usize) -> Result<Tensor<T>> {
    let (_, h, w) = dims3(img, "crop")?;
    if crop > h || crop > w {
        return Err(Error::Input(format!("center crop {crop} larger than {h}x{w}")));
    }
    crop_padded(img, crop, 0, (h - crop) / 2, (w - crop) / 2)
}

pub fn flip_horizontal<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let s = img.shape();
    let w = s[s.len() - 1];
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

pub fn normalize<T: Scalar>(img: &Tensor<T>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<T>> {
    channelwise(img, |c, v| (v - mean[c]) / std[c])
}

pub fn denormalize<T: Scalar>(img: &Tensor<T>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<T>> {
    channelwise(img, |c, v| v * std[c] + mean[c])
}

fn channelwise<T: Scalar>(img: &Tensor<T>, f: impl Fn(usize, f64) -> f64) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(img, "normalize")?;
    if c != IMAGE_CHANNELS {
        return Err(Error::shape("normalize", format!("expected 3 channels, got {c}")));
    }
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = T::of(f(i / (h * w), v.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(out)
}

/// Training transform of one `[3, H, W]` image; deterministic in `seed`.
pub fn augment<T: Scalar>(img: &Tensor<T>, config: &AugmentConfig, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resized = resize_bilinear(img, config.resize)?;
    let span = config.resize + 2 * config.padding - config.crop;
    let top = rng.random_range(0..=span);
    let left = rng.random_range(0..=span);
    let mut out = crop_padded(&resized, config.crop, config.padding, top, left)?;
    if rng.random_bool(config.flip_prob) {
        out = flip_horizontal(&out);
    }
    normalize(&out, &config.mean, &config.std)
}

/// Evaluation transform: resize, centre crop, normalize.
pub fn prepare_eval<T: Scalar>(img: &Tensor<T>, config: &AugmentConfig) -> Result<Tensor<T>> {
    let resized = resize_bilinear(img, config.resize)?;
    let cropped = center_crop(&resized, config.crop)?;
    normalize(&cropped, &config.mean, &config.std)
}
