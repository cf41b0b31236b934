//! Stochastic gradient descent with optional momentum and weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Input("momentum and weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Optimizer state. Momentum buffers are created lazily per parameter.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// `w <- w - lr * (grad + wd * w)`, through a momentum buffer when
    /// momentum is nonzero, then re-applies masks.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        let lr = T::of(self.config.learning_rate);
        let mu = T::of(self.config.momentum);
        let wd = T::of(self.config.weight_decay);
        if self.velocity.len() < params.len() {
            self.velocity.resize_with(params.len(), || None);
        }
        for (id, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (value, grad) = p.value_and_grad_mut();
            if self.config.momentum == 0.0 {
                for (w, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                    *w -= lr * (g + wd * *w);
                }
            } else {
                let buf = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(grad.shape()));
                for ((w, &g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(buf.data_mut()) {
                    *v = mu * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            }
            p.apply_mask();
        }
    }
}
