//! Two-dimensional convolutional network fabrics.
//!
//! A fabric is a `layers × scales` grid of nodes. The input image goes
//! through a stem (3×3 conv, batch norm, ReLU6) into node `(0, 0)`; every
//! other node sums the outputs of its alive incoming links, and the output
//! node `(layers - 1, scales - 1)` is a `C × 1 × 1` tensor fed to a fully
//! connected head. Each link applies conv (stride 2 when it goes one scale
//! coarser), a ×2 bilinear upsample when it goes one scale finer, batch
//! norm, then ReLU6.

mod checkpoint;
mod dot;
mod topology;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dot::{export_dot, DotOptions};
pub use topology::{enumerate_edges, full_link_count, Direction, Edge, Grid, LinkId, NodeId};

use crate::error::{Error, Result};
use crate::ops::{BatchMoments, BnMode, RunningStats, KERNEL};
use crate::param::{ParamId, ParamStore, Parameter};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Input image channels.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricDims {
    pub layers: usize,
    pub scales: usize,
    pub channels: usize,
    /// Square input side in pixels; must equal `2^(scales - 1)`.
    pub resolution: usize,
    pub classes: usize,
}

impl FabricDims {
    /// Dimensions with the scale count derived from the resolution.
    pub fn for_resolution(layers: usize, channels: usize, resolution: usize, classes: usize) -> Result<Self> {
        if !resolution.is_power_of_two() {
            return Err(Error::Construction(format!(
                "input resolution {resolution} is not a power of two"
            )));
        }
        let dims = Self {
            layers,
            scales: resolution.trailing_zeros() as usize + 1,
            channels,
            resolution,
            classes,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.scales < 2 {
            return Err(Error::Construction(format!(
                "need at least 2 layers and 2 scales, got {}x{}",
                self.layers, self.scales
            )));
        }
        if self.channels == 0 || self.classes == 0 {
            return Err(Error::Construction("channels and classes must be positive".into()));
        }
        if self.scales >= usize::BITS as usize || self.resolution != 1usize << (self.scales - 1) {
            return Err(Error::Construction(format!(
                "resolution {} does not reach 1x1 at scale {} (expected {})",
                self.resolution,
                self.scales - 1,
                1u128 << (self.scales - 1).min(127)
            )));
        }
        Ok(())
    }

    /// Spatial side of activations at `scale`.
    pub fn extent_at(&self, scale: usize) -> usize {
        self.resolution >> scale
    }

    pub fn link_count(&self) -> usize {
        full_link_count(self.layers, self.scales)
    }

    /// Conv weights + bias + BN affine of one link.
    pub fn params_per_link(&self) -> usize {
        let c = self.channels;
        c * c * KERNEL * KERNEL + c + 2 * c
    }

    pub fn conv_weights_per_link(&self) -> usize {
        self.channels * self.channels * KERNEL * KERNEL
    }

    pub fn stem_params(&self) -> usize {
        let c = self.channels;
        IMAGE_CHANNELS * c * KERNEL * KERNEL + c + 2 * c
    }

    pub fn head_params(&self) -> usize {
        self.channels * self.classes + self.classes
    }

    /// Stem and head; never pruned.
    pub fn fixed_params(&self) -> usize {
        self.stem_params() + self.head_params()
    }

    /// Parameter breakdown of the fully alive fabric.
    pub fn full_breakdown(&self) -> ParamBreakdown {
        ParamBreakdown::new(
            self.stem_params(),
            self.link_count() * self.params_per_link(),
            self.head_params(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub stem: usize,
    pub links: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamBreakdown {
    pub fn new(stem: usize, links: usize, head: usize) -> Self {
        Self {
            stem,
            links,
            head,
            total: stem + links + head,
        }
    }
}

/// Conv + BN block parameters shared by the stem and the links.
#[derive(Debug, Clone)]
pub struct ConvBn<T> {
    pub conv: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: RunningStats<T>,
}

#[derive(Debug, Clone)]
pub struct Link<T> {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub direction: Direction,
    pub block: ConvBn<T>,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// How batch norm behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated by
    /// [`Fabric::commit_moments`].
    Train,
    /// Batch statistics, running statistics left untouched (used for
    /// gradient probes such as sensitivity scoring).
    Probe,
    /// Running statistics.
    Eval,
}

impl Mode {
    fn bn(self) -> BnMode {
        match self {
            Mode::Train | Mode::Probe => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        }
    }
}

/// Which running-statistics slot a batch-moment record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSlot {
    Stem,
    Link(LinkId),
}

/// Result of a recorded forward pass.
pub struct ForwardPass<T> {
    pub logits: Var,
    /// Leaf variable of every link conv kernel that took part.
    pub link_kernels: Vec<(LinkId, Var)>,
    pub moments: Vec<(StatsSlot, BatchMoments<T>)>,
}

#[derive(Debug, Clone)]
pub struct Fabric<T> {
    pub dims: FabricDims,
    pub params: ParamStore<T>,
    pub stem: ConvBn<T>,
    pub links: Vec<Link<T>>,
    pub head: Head,
    grid: Grid,
}

fn conv_bn<T: Scalar>(
    params: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut impl Rng,
) -> ConvBn<T> {
    let fan_in = (cin * KERNEL * KERNEL) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
    let kernel = Tensor::from_fn(&[cout, cin, KERNEL, KERNEL], |_| T::of(normal.sample(rng)));
    ConvBn {
        conv: params.add(Parameter::new(format!("{name}.conv"), kernel)),
        bias: params.add(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout]))),
        gamma: params.add(Parameter::new(format!("{name}.gamma"), Tensor::ones(&[cout]))),
        beta: params.add(Parameter::new(format!("{name}.beta"), Tensor::zeros(&[cout]))),
        stats: RunningStats::new(cout),
    }
}

impl<T: Scalar> Fabric<T> {
    /// A fully alive fabric with He-normal conv kernels, zero biases, unit BN
    /// scale and a uniform head.
    pub fn new(dims: FabricDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let grid = Grid::new(dims.layers, dims.scales);
        let c = dims.channels;
        let mut params = ParamStore::new();
        let stem = conv_bn(&mut params, "stem", IMAGE_CHANNELS, c, rng);
        let links = grid
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| Link {
                id: LinkId(i),
                from: e.from,
                to: e.to,
                direction: e.direction,
                block: conv_bn(&mut params, &format!("link{i}"), c, c, rng),
                alive: true,
            })
            .collect();
        let bound = 1.0 / (c as f64).sqrt();
        let uni = Uniform::new(-bound, bound).expect("valid bounds");
        let w = Tensor::from_fn(&[dims.classes, c], |_| T::of(uni.sample(rng)));
        let head = Head {
            weight: params.add(Parameter::new("head.weight", w)),
            bias: params.add(Parameter::new("head.bias", Tensor::zeros(&[dims.classes]))),
        };
        Ok(Self {
            dims,
            params,
            stem,
            links,
            head,
            grid,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn link(&self, id: LinkId) -> &Link<T> {
        &self.links[id.0]
    }

    pub fn alive_flags(&self) -> Vec<bool> {
        self.links.iter().map(|l| l.alive).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.links.iter().filter(|l| l.alive).count()
    }

    pub fn alive_links(&self) -> impl Iterator<Item = &Link<T>> {
        self.links.iter().filter(|l| l.alive)
    }

    pub fn is_connected(&self) -> bool {
        self.grid.connected(&self.alive_flags())
    }

    pub fn longest_linear_path(&self) -> usize {
        self.grid.longest_linear_path(&self.alive_flags())
    }

    /// Marks a link dead. Its parameters are left in place but no longer
    /// take part in forward passes or counts.
    pub fn kill(&mut self, id: LinkId) {
        self.links[id.0].alive = false;
    }

    /// Runs the cascade fixpoint on the current alive set.
    pub fn cascade(&mut self) -> Vec<LinkId> {
        let mut alive = self.alive_flags();
        let killed = self.grid.cascade(&mut alive);
        for &l in &killed {
            self.links[l.0].alive = false;
        }
        killed
    }

    pub fn param_count(&self) -> ParamBreakdown {
        ParamBreakdown::new(
            self.dims.stem_params(),
            self.alive_count() * self.dims.params_per_link(),
            self.dims.head_params(),
        )
    }

    /// Parameters that still carry information: unmasked conv weights, bias
    /// and BN affine of alive links, plus stem and head.
    pub fn live_param_count(&self) -> usize {
        let c = self.dims.channels;
        let links: usize = self
            .alive_links()
            .map(|l| self.params.get(l.block.conv).unmasked_count() + 3 * c)
            .sum();
        links + self.dims.fixed_params()
    }

    /// Unmasked conv weights over alive links.
    pub fn live_conv_weights(&self) -> usize {
        self.alive_links()
            .map(|l| self.params.get(l.block.conv).unmasked_count())
            .sum()
    }

    fn block(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        block: &ConvBn<T>,
        stride: usize,
        upsample: bool,
        mode: Mode,
    ) -> Result<(Var, Var, Option<BatchMoments<T>>)> {
        let k = tape.param(&self.params, block.conv);
        let b = tape.param(&self.params, block.bias);
        let mut h = tape.conv2d(x, k, b, stride)?;
        if upsample {
            h = tape.upsample_bilinear_x2(h)?;
        }
        let g = tape.param(&self.params, block.gamma);
        let be = tape.param(&self.params, block.beta);
        let (h, moments) = tape.batch_norm(h, g, be, &block.stats, mode.bn())?;
        Ok((tape.relu6(h), k, moments))
    }

    /// Records a forward pass of `input` (`[B, 3, R, R]`) on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<ForwardPass<T>> {
        let (b, c, h, w) = tape.value(input).dims4("fabric forward")?;
        if c != IMAGE_CHANNELS || h != self.dims.resolution || w != self.dims.resolution {
            return Err(Error::shape(
                "fabric forward",
                format!(
                    "expected [B, {IMAGE_CHANNELS}, {r}, {r}], got [{b}, {c}, {h}, {w}]",
                    r = self.dims.resolution
                ),
            ));
        }
        let mut moments = Vec::new();
        let mut link_kernels = Vec::new();
        let mut act: Vec<Option<Var>> = vec![None; self.grid.node_count()];

        let (stem_out, _, m) = self.block(tape, input, &self.stem, 1, false, mode)?;
        if let Some(m) = m {
            moments.push((StatsSlot::Stem, m));
        }
        act[0] = Some(stem_out);

        for u in 1..self.grid.node_count() {
            let node = self.grid.node(u);
            let mut incoming = Vec::new();
            for &lid in self.grid.in_links(node) {
                let link = &self.links[lid.0];
                if !link.alive {
                    continue;
                }
                let Some(src) = act[self.grid.index(link.from)] else {
                    continue;
                };
                let (out, k, m) = self.block(
                    tape,
                    src,
                    &link.block,
                    link.direction.stride(),
                    link.direction.upsamples(),
                    mode,
                )?;
                link_kernels.push((lid, k));
                if let Some(m) = m {
                    moments.push((StatsSlot::Link(lid), m));
                }
                incoming.push(out);
            }
            if !incoming.is_empty() {
                act[u] = Some(if incoming.len() == 1 {
                    incoming[0]
                } else {
                    tape.sum(&incoming)?
                });
            }
        }

        let out = act[self.grid.index(self.grid.output())]
            .ok_or_else(|| Error::Usage("output node has no alive path from the input".into()))?;
        let flat = tape.flatten(out)?;
        let hw = tape.param(&self.params, self.head.weight);
        let hb = tape.param(&self.params, self.head.bias);
        let logits = tape.linear(flat, hw, hb)?;
        Ok(ForwardPass {
            logits,
            link_kernels,
            moments,
        })
    }

    /// Folds train-mode batch moments into the running statistics.
    pub fn commit_moments(&mut self, moments: &[(StatsSlot, BatchMoments<T>)]) {
        for (slot, m) in moments {
            let stats = match slot {
                StatsSlot::Stem => &mut self.stem.stats,
                StatsSlot::Link(id) => &mut self.links[id.0].block.stats,
            };
            crate::ops::update_running_stats(stats, m);
        }
    }

    /// Eval-mode logits for a batch.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(batch.clone());
        let fw = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(fw.logits).clone())
    }

    /// Eval-mode arg-max predictions, processed in chunks of `batch_size`.
    pub fn predict(&self, images: &Tensor<T>, batch_size: usize) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let k = self.dims.classes;
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + batch_size.max(1)).min(n);
            let logits = self.logits(&images.slice_outer(start, end))?;
            for row in logits.data().chunks(k) {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                out.push(best);
            }
            start = end;
        }
        Ok(out)
    }

    /// Bit-identical copy of every stem and head parameter, for checking
    /// that pruning leaves them untouched.
    pub fn fixed_snapshot(&self) -> Vec<Tensor<T>> {
        [
            self.stem.conv,
            self.stem.bias,
            self.stem.gamma,
            self.stem.beta,
            self.head.weight,
            self.head.bias,
        ]
        .iter()
        .map(|&id| self.params.get(id).value().clone())
        .collect()
    }
}
