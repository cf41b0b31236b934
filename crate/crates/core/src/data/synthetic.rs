use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::fabric::IMAGE_CHANNELS;
use crate::tensor::{Scalar, Tensor};

/// Synthetic image classification set. Each class has a colour and a stripe
/// orientation; every item places a blob of the class colour at a random
/// position over class-oriented stripes with a random phase, plus pixel
/// noise. `difficulty` in `[0, 1]` shrinks the class signal, raises the
/// noise and blends colours across classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub resolution: usize,
    pub seed: u64,
    #[serde(default)]
    pub difficulty: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 {
            return Err(Error::Config(
                "synthetic: classes and per_class must be positive".into(),
            ));
        }
        if !self.resolution.is_power_of_two() || self.resolution < 2 {
            return Err(Error::Config(format!(
                "synthetic: resolution {} is not a power of two",
                self.resolution
            )));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!(
                "synthetic: difficulty {} outside [0, 1]",
                self.difficulty
            )));
        }
        Ok(())
    }
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Items are ordered class by class. Bit-identical for equal specs.
pub fn make_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<ImageDataset<T>> {
    spec.validate()?;
    let SyntheticSpec {
        classes: k,
        per_class,
        resolution: r,
        seed,
        difficulty: d,
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<[f64; 3]> = (0..k).map(|c| hue_to_rgb(c as f64 / k as f64)).collect();
    let signal = 1.0 - 0.85 * d;
    let noise = Normal::new(0.0, 0.05 + 0.25 * d).expect("finite std");
    let rf = r as f64;

    let n = k * per_class;
    let mut pixels = Vec::with_capacity(n * IMAGE_CHANNELS * r * r);
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        let theta = PI * class as f64 / k as f64;
        let freq = 2.0 * PI * (1.5 + (class % 3) as f64) / rf;
        for _ in 0..per_class {
            let other = colors[rng.random_range(0..k)];
            let blend = 0.6 * d * rng.random::<f64>();
            let color: Vec<f64> = (0..3)
                .map(|ch| colors[class][ch] * (1.0 - blend) + other[ch] * blend)
                .collect();
            let cy = rng.random_range(0.25..0.75) * rf;
            let cx = rng.random_range(0.25..0.75) * rf;
            let radius = rng.random_range(0.2..0.35) * rf;
            let phase = rng.random_range(0.0..2.0 * PI);
            let stripe_amp = 0.15 * signal * rng.random_range(0.7..1.3);
            let brightness = rng.random_range(-0.05..0.05);
            for &tint in &color {
                for y in 0..r {
                    for x in 0..r {
                        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                        let dist2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                        let blob = (-dist2 / (2.0 * radius * radius)).exp();
                        let proj = xf * theta.cos() + yf * theta.sin();
                        let stripe = stripe_amp * (freq * proj + phase).sin();
                        let v = 0.5 + brightness + signal * blob * (tint - 0.5) + stripe + noise.sample(&mut rng);
                        pixels.push(T::of(v.clamp(0.0, 1.0)));
                    }
                }
            }
            labels.push(class);
        }
    }
    ImageDataset::new(
        Tensor::new(vec![n, IMAGE_CHANNELS, r, r], pixels)?,
        labels,
        ImageDataset::<T>::numbered_classes(k),
    )
}
