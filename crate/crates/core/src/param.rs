//! Trainable parameters with optional binary masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    /// 1 = live, 0 = pruned. Masked positions of `value` are held at zero.
    mask: Option<Tensor<T>>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            mask: None,
            trainable: true,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref()
    }

    /// Replaces the value; masked positions are re-zeroed.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{:?} vs {:?}", value.shape(), self.value.shape()),
            ));
        }
        self.value = value;
        self.apply_mask();
        Ok(())
    }

    /// Direct mutable access for optimizers and initializers. Callers must
    /// call [`Parameter::apply_mask`] afterwards if a mask is present.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn value_and_grad_mut(&mut self) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.value, &self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Adds `g` into the gradient; masked positions receive nothing.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) {
        debug_assert_eq!(g.shape(), self.grad.shape());
        match &self.mask {
            None => self.grad.add_assign(g),
            Some(m) => {
                for ((acc, &gv), &mv) in self.grad.data_mut().iter_mut().zip(g.data()).zip(m.data()) {
                    if mv != T::zero() {
                        *acc += gv;
                    }
                }
            }
        }
    }

    pub fn apply_mask(&mut self) {
        if let Some(m) = &self.mask {
            for (v, &mv) in self.value.data_mut().iter_mut().zip(m.data()) {
                if mv == T::zero() {
                    *v = T::zero();
                }
            }
            for (g, &mv) in self.grad.data_mut().iter_mut().zip(m.data()) {
                if mv == T::zero() {
                    *g = T::zero();
                }
            }
        }
    }

    pub fn set_mask(&mut self, mask: Tensor<T>) -> Result<()> {
        if mask.shape() != self.value.shape() {
            return Err(Error::shape("set_mask", "mask shape differs from value"));
        }
        if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Input("mask entries must be 0 or 1".into()));
        }
        self.mask = Some(mask);
        self.apply_mask();
        Ok(())
    }

    pub fn is_masked(&self, index: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m.data()[index] == T::zero())
    }

    /// Masks one flat position. Masks are permanent.
    pub fn mask_position(&mut self, index: usize) {
        let mask = self.mask.get_or_insert_with(|| Tensor::ones(self.value.shape()));
        mask.data_mut()[index] = T::zero();
        self.value.data_mut()[index] = T::zero();
        self.grad.data_mut()[index] = T::zero();
    }

    pub fn unmasked_count(&self) -> usize {
        match &self.mask {
            None => self.value.len(),
            Some(m) => m.data().iter().filter(|&&v| v != T::zero()).count(),
        }
    }
}

/// Flat arena of parameters addressed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, param: Parameter<T>) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}
