//! Reverse-mode differentiation over the fabric operator set.
//!
//! A [`Tape`] records each operation of one forward pass together with the
//! values its backward kernel needs. [`Tape::backward`] walks the record in
//! reverse and returns [`Gradients`], which can then be folded into a
//! [`ParamStore`].
//!
//! ```
//! use cnf_core::param::{ParamStore, Parameter};
//! use cnf_core::tape::Tape;
//! use cnf_core::tensor::Tensor;
//!
//! let mut store = ParamStore::new();
//! let w = store.add(Parameter::new("w", Tensor::<f64>::scalar(3.0)));
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let loss = tape.total(wv);
//! let grads = tape.backward(loss).unwrap();
//! grads.accumulate_into(&tape, &mut store);
//! assert_eq!(store.get(w).grad().data(), &[1.0]);
//! ```

use crate::error::{Error, Result};
use crate::ops::{self, BatchMoments, BnMode, BnSaved, RunningStats};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    Upsample {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
    },
    Relu6 {
        input: Var,
    },
    Sum {
        inputs: Vec<Var>,
    },
    Flatten {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    Dot {
        input: Var,
        weights: Tensor<T>,
    },
    Total {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A constant input (no gradient is tracked through it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A differentiable leaf that tracks gradients without being bound to a
    /// parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let trainable = p.trainable;
        self.push(p.value().clone(), Op::Leaf { param: Some(id) }, trainable)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), self.value(bias), stride)?;
        let ng = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
            ng,
        ))
    }

    pub fn upsample_bilinear_x2(&mut self, input: Var) -> Result<Var> {
        let out = ops::upsample_bilinear_x2(self.value(input))?;
        let ng = self.needs(&[input]);
        Ok(self.push(out, Op::Upsample { input }, ng))
    }

    /// Batch normalization. In train mode the observed batch moments are
    /// returned so the caller can decide whether to fold them into `stats`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        mode: BnMode,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (out, saved, moments) =
            ops::batch_norm(self.value(input), self.value(gamma), self.value(beta), stats, mode)?;
        let ng = self.needs(&[input, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            },
            ng,
        );
        Ok((v, moments))
    }

    pub fn relu6(&mut self, input: Var) -> Var {
        let out = ops::relu6(self.value(input));
        let ng = self.needs(&[input]);
        self.push(out, Op::Relu6 { input }, ng)
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = inputs.split_first() else {
            return Err(Error::Usage("sum of zero tensors".into()));
        };
        let mut out = self.value(first).clone();
        for &v in rest {
            if self.value(v).shape() != out.shape() {
                return Err(Error::shape(
                    "sum",
                    format!("{:?} vs {:?}", self.value(v).shape(), out.shape()),
                ));
            }
            out.add_assign(self.value(v));
        }
        let ng = self.needs(inputs);
        Ok(self.push(
            out,
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            ng,
        ))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let b = t.shape()[0];
        let f = t.len() / b.max(1);
        let out = t.clone().reshape(&[b, f])?;
        let ng = self.needs(&[input]);
        Ok(self.push(out, Op::Flatten { input }, ng))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        let ng = self.needs(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, ng))
    }

    /// Mean softmax cross-entropy; yields a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), targets)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// `sum(input * weights)` as a scalar; used to probe gradients.
    pub fn dot(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::shape("dot", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let s = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let ng = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::Dot { input, weights }, ng))
    }

    /// Sum of all entries as a scalar.
    pub fn total(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let ng = self.needs(&[input]);
        self.push(Tensor::scalar(s), Op::Total { input }, ng)
    }

    /// Propagates `d loss / d node` for every node reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a value that was not recorded by a forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                } => {
                    let (gx, gk, gb) = ops::conv2d_backward(self.value(*input), self.value(*kernel), *stride, &g)?;
                    self.send(&mut grads, *input, gx);
                    self.send(&mut grads, *kernel, gk);
                    self.send(&mut grads, *bias, gb);
                }
                Op::Upsample { input } => {
                    let gx = ops::upsample_bilinear_x2_backward(self.value(*input).shape(), &g)?;
                    self.send(&mut grads, *input, gx);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (gx, gg, gbeta) = ops::batch_norm_backward(saved, self.value(*gamma), &g)?;
                    self.send(&mut grads, *input, gx);
                    self.send(&mut grads, *gamma, gg);
                    self.send(&mut grads, *beta, gbeta);
                }
                Op::Relu6 { input } => {
                    let gx = ops::relu6_backward(self.value(*input), &g);
                    self.send(&mut grads, *input, gx);
                }
                Op::Sum { inputs } => {
                    for &v in inputs {
                        self.send(&mut grads, v, g.clone());
                    }
                }
                Op::Flatten { input } => {
                    let gx = g.reshape(self.value(*input).shape())?;
                    self.send(&mut grads, *input, gx);
                }
                Op::Linear { input, weight, bias } => {
                    let (gx, gw, gb) = ops::linear_backward(self.value(*input), self.value(*weight), &g)?;
                    self.send(&mut grads, *input, gx);
                    self.send(&mut grads, *weight, gw);
                    self.send(&mut grads, *bias, gb);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let gx = ops::softmax_cross_entropy_backward(probs, targets, g.data()[0]);
                    self.send(&mut grads, *logits, gx);
                }
                Op::Dot { input, weights } => {
                    let mut gx = weights.clone();
                    gx.scale(g.data()[0]);
                    self.send(&mut grads, *input, gx);
                }
                Op::Total { input } => {
                    let gx = Tensor::full(self.value(*input).shape(), g.data()[0]);
                    self.send(&mut grads, *input, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], to: Var, g: Tensor<T>) {
        if !self.nodes[to.0].needs_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn bound_param(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Leaf { param } => param,
            _ => None,
        }
    }
}

/// Gradients of one backward pass, indexed by [`Var`]. Only leaves keep
/// their gradients; intermediate values are released during the sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds leaf gradients into the parameters they were read from. Masked
    /// positions are skipped.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (i, g) in self.grads.iter().enumerate() {
            if let (Some(g), Some(id)) = (g, tape.bound_param(Var(i))) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}
