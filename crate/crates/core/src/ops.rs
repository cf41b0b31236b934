//! Forward and backward kernels for the fabric operator set.
//!
//! These are plain functions over [`Tensor`]s. The [`Tape`](crate::tape::Tape)
//! records calls to them and chains the backward kernels.
//!
//! Convolutions are fixed at 3×3 kernels with zero padding 1, so stride 1
//! preserves spatial extents and stride 2 maps `H` to `ceil(H / 2)`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const RELU6_CAP: f64 = 6.0;

/// Output extent of a padded 3×3 convolution.
#[inline]
pub fn conv_out_extent(extent: usize, stride: usize) -> usize {
    (extent + 2 * PADDING - KERNEL) / stride + 1
}

/// Range of output positions `o` for which `o * stride + k - PADDING` falls
/// inside `[0, extent)`.
#[inline]
fn valid_out_range(k: usize, stride: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    let lo = if k < PADDING { (PADDING - k).div_ceil(stride) } else { 0 };
    // o * stride <= extent - 1 + PADDING - k
    let top = extent as isize - 1 + PADDING as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

fn check_conv(input: &Tensor<impl Scalar>, kernel: &Tensor<impl Scalar>, bias_len: usize, stride: usize) -> Result<()> {
    let (_, cin, h, w) = input.dims4("conv2d")?;
    let (cout, kcin, kh, kw) = kernel.dims4("conv2d")?;
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, kernel expects {kcin}"),
        ));
    }
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::shape("conv2d", format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if bias_len != cout {
        return Err(Error::shape(
            "conv2d",
            format!("bias length {bias_len} != out channels {cout}"),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("conv2d", "empty spatial extent"));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Input(format!("conv2d stride must be 1 or 2, got {stride}")));
    }
    Ok(())
}

/// Unfolds one `[cin, h, w]` image into a `[cin * 9, ho * wo]` column matrix.
fn im2col<T: Scalar>(src: &[T], cin: usize, h: usize, w: usize, stride: usize, col: &mut [T]) {
    let (ho, wo) = (conv_out_extent(h, stride), conv_out_extent(w, stride));
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &src[ci * h * w..][..h * w];
        for kh in 0..KERNEL {
            let (oh_lo, oh_hi) = valid_out_range(kh, stride, h, ho);
            for kw in 0..KERNEL {
                let (ow_lo, ow_hi) = valid_out_range(kw, stride, w, wo);
                let row = &mut col[((ci * KERNEL + kh) * KERNEL + kw) * p..][..p];
                row.fill(T::zero());
                for oh in oh_lo..oh_hi {
                    let ih = oh * stride + kh - PADDING;
                    let xrow = &plane[ih * w..][..w];
                    let crow = &mut row[oh * wo..][..wo];
                    for ow in ow_lo..ow_hi {
                        crow[ow] = xrow[ow * stride + kw - PADDING];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into an image.
fn col2im<T: Scalar>(col: &[T], cin: usize, h: usize, w: usize, stride: usize, dst: &mut [T]) {
    let (ho, wo) = (conv_out_extent(h, stride), conv_out_extent(w, stride));
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &mut dst[ci * h * w..][..h * w];
        for kh in 0..KERNEL {
            let (oh_lo, oh_hi) = valid_out_range(kh, stride, h, ho);
            for kw in 0..KERNEL {
                let (ow_lo, ow_hi) = valid_out_range(kw, stride, w, wo);
                let row = &col[((ci * KERNEL + kh) * KERNEL + kw) * p..][..p];
                for oh in oh_lo..oh_hi {
                    let ih = oh * stride + kh - PADDING;
                    let xrow = &mut plane[ih * w..][..w];
                    let crow = &row[oh * wo..][..wo];
                    for ow in ow_lo..ow_hi {
                        xrow[ow * stride + kw - PADDING] += crow[ow];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    check_conv(input, kernel, bias.len(), stride)?;
    let (b, cin, h, w) = input.dims4("conv2d")?;
    let cout = kernel.shape()[0];
    let (ho, wo) = (conv_out_extent(h, stride), conv_out_extent(w, stride));
    let (p, depth) = (ho * wo, cin * KERNEL * KERNEL);
    let x = input.data();
    let mut col = vec![T::zero(); depth * p];
    let mut out = vec![T::zero(); b * cout * p];

    for bi in 0..b {
        im2col(&x[bi * cin * h * w..][..cin * h * w], cin, h, w, stride, &mut col);
        let dst = &mut out[bi * cout * p..][..cout * p];
        for (co, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.fill(bias.data()[co]);
        }
        T::gemm(cout, depth, p, kernel.data(), false, &col, false, T::one(), dst);
    }
    Tensor::new(vec![b, cout, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, cin, h, w) = input.dims4("conv2d_backward")?;
    let cout = kernel.shape()[0];
    let (_, gc, ho, wo) = grad_out.dims4("conv2d_backward")?;
    if gc != cout || ho != conv_out_extent(h, stride) || wo != conv_out_extent(w, stride) {
        return Err(Error::shape("conv2d_backward", "gradient does not match output"));
    }
    let (p, depth) = (ho * wo, cin * KERNEL * KERNEL);
    let x = input.data();
    let g = grad_out.data();
    let mut col = vec![T::zero(); depth * p];
    let mut gcol = vec![T::zero(); depth * p];
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); cout];

    for bi in 0..b {
        let xs = &x[bi * cin * h * w..][..cin * h * w];
        let gs = &g[bi * cout * p..][..cout * p];
        for (co, plane) in gs.chunks_exact(p).enumerate() {
            gb[co] += plane.iter().copied().sum::<T>();
        }
        im2col(xs, cin, h, w, stride, &mut col);
        T::gemm(cout, p, depth, gs, false, &col, true, T::one(), &mut gk);
        T::gemm(depth, cout, p, kernel.data(), true, gs, false, T::zero(), &mut gcol);
        col2im(&gcol, cin, h, w, stride, &mut gx[bi * cin * h * w..][..cin * h * w]);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// Source taps for one output coordinate of a ×2 bilinear upsample with
/// half-pixel centres (`align_corners = false`): output `o` samples source
/// position `max(0, (o + 0.5) / 2 - 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taps {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`; `lo` gets `1 - frac`.
    pub frac: f64,
}

pub fn upsample_taps(extent: usize) -> Vec<Taps> {
    (0..2 * extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            Taps {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub fn upsample_bilinear_x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4("upsample_bilinear_x2")?;
    if h == 0 || w == 0 {
        return Err(Error::shape("upsample_bilinear_x2", "empty spatial extent"));
    }
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); b * c * oh * ow];
    for plane in 0..b * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for (y, ty) in ty.iter().enumerate() {
            let fy = T::of(ty.frac);
            for (xo, tx) in tx.iter().enumerate() {
                let fx = T::of(tx.frac);
                let top = src[ty.lo * w + tx.lo] * (T::one() - fx) + src[ty.lo * w + tx.hi] * fx;
                let bot = src[ty.hi * w + tx.lo] * (T::one() - fx) + src[ty.hi * w + tx.hi] * fx;
                dst[y * ow + xo] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn upsample_bilinear_x2_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = input_shape[..] else {
        return Err(Error::shape("upsample_backward", "expected 4-d input shape"));
    };
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let g = grad_out.data();
    let mut gx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let gsrc = &g[plane * oh * ow..][..oh * ow];
        let dst = &mut gx[plane * h * w..][..h * w];
        for (y, ty) in ty.iter().enumerate() {
            let fy = T::of(ty.frac);
            for (xo, tx) in tx.iter().enumerate() {
                let fx = T::of(tx.frac);
                let gv = gsrc[y * ow + xo];
                let top = gv * (T::one() - fy);
                let bot = gv * fy;
                dst[ty.lo * w + tx.lo] += top * (T::one() - fx);
                dst[ty.lo * w + tx.hi] += top * fx;
                dst[ty.hi * w + tx.lo] += bot * (T::one() - fx);
                dst[ty.hi * w + tx.hi] += bot * fx;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Values kept from the forward pass for [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BnSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
}

/// Batch statistics observed in train mode, for running-stat updates.
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

/// Output, saved state for the backward pass, and the batch moments when
/// normalizing with batch statistics.
pub type BnOutput<T> = (Tensor<T>, BnSaved<T>, Option<BatchMoments<T>>);

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: BnMode,
) -> Result<BnOutput<T>> {
    let (b, c, h, w) = input.dims4("batch_norm")?;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("{c} channels but affine/stat length {}", gamma.len()),
        ));
    }
    let hw = h * w;
    let count = b * hw;
    let x = input.data();
    let eps = T::of(BN_EPS);
    let (mean, var, moments) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::Input(format!(
                    "batch_norm in train mode needs at least 2 values per channel, got {count}"
                )));
            }
            let n = T::of(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    s += x[(bi * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut v = T::zero();
                for bi in 0..b {
                    for &xv in &x[(bi * c + ch) * hw..][..hw] {
                        v += (xv - m) * (xv - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / n;
            }
            let unbiased = var.iter().map(|&v| v * n / (n - T::one())).collect();
            let moments = BatchMoments {
                mean: mean.clone(),
                var_unbiased: unbiased,
            };
            (mean, var, Some(moments))
        }
        BnMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec(), None),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            let (g, bt, m, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in off..off + hw {
                let xh = (x[i] - m) * is;
                xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BnSaved {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            mode,
        },
        moments,
    ))
}

/// Exponential moving average update of running statistics.
pub fn update_running_stats<T: Scalar>(stats: &mut RunningStats<T>, moments: &BatchMoments<T>) {
    let m = T::of(BN_MOMENTUM);
    for (r, &v) in stats.mean.data_mut().iter_mut().zip(&moments.mean) {
        *r = (T::one() - m) * *r + m * v;
    }
    for (r, &v) in stats.var.data_mut().iter_mut().zip(&moments.var_unbiased) {
        *r = (T::one() - m) * *r + m * v;
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    saved: &BnSaved<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = grad_out.dims4("batch_norm_backward")?;
    let hw = h * w;
    let n = T::of((b * hw) as f64);
    let g = grad_out.data();
    let xh = saved.xhat.data();
    let mut gx = vec![T::zero(); g.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gamma.data()[ch] * saved.inv_std[ch];
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                gx[i] = match saved.mode {
                    BnMode::Train => scale * (g[i] - sum_g / n - xh[i] * sum_gx / n),
                    BnMode::Eval => scale * g[i],
                };
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), gx)?,
        Tensor::new(vec![c], ggamma)?,
        Tensor::new(vec![c], gbeta)?,
    ))
}

pub fn relu6<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let cap = T::of(RELU6_CAP);
    input.map(|v| v.max(T::zero()).min(cap))
}

/// Subgradient convention: pass-through strictly inside `(0, 6)`.
pub fn relu6_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let cap = T::of(RELU6_CAP);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() && x < cap { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f) = input.dims2("linear")?;
    let (k, wf) = weight.dims2("linear")?;
    if wf != f || bias.len() != k {
        return Err(Error::shape(
            "linear",
            format!("input features {f}, weight {k}x{wf}, bias {}", bias.len()),
        ));
    }
    let (x, wt) = (input.data(), weight.data());
    let mut out = vec![T::zero(); b * k];
    for r in 0..b {
        let row = &x[r * f..][..f];
        for o in 0..k {
            let wrow = &wt[o * f..][..f];
            out[r * k + o] = bias.data()[o] + row.iter().zip(wrow).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    Tensor::new(vec![b, k], out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, f) = input.dims2("linear_backward")?;
    let k = weight.shape()[0];
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![T::zero(); b * f];
    let mut gw = vec![T::zero(); k * f];
    let mut gb = vec![T::zero(); k];
    for r in 0..b {
        for o in 0..k {
            let gv = g[r * k + o];
            gb[o] += gv;
            for j in 0..f {
                gx[r * f + j] += gv * wt[o * f + j];
                gw[o * f + j] += gv * x[r * f + j];
            }
        }
    }
    Ok((
        Tensor::new(vec![b, f], gx)?,
        Tensor::new(vec![k, f], gw)?,
        Tensor::new(vec![k], gb)?,
    ))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, k) = logits.dims2("softmax")?;
    let mut out = logits.data().to_vec();
    for r in 0..b {
        let row = &mut out[r * k..][..k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(vec![b, k], out)
}

/// Mean negative log-likelihood of `targets` under `softmax(logits)`.
/// Returns the loss and the softmax probabilities.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, k) = logits.dims2("softmax_cross_entropy")?;
    if targets.len() != b {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{b} rows but {} targets", targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Input(format!("target class {t} outside [0, {k})")));
    }
    let x = logits.data();
    let mut loss = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let row = &x[r * k..][..k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - row[t];
    }
    Ok((loss / T::of(b as f64), softmax(logits)?))
}

pub fn softmax_cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, targets: &[usize], grad_loss: T) -> Tensor<T> {
    let k = probs.shape()[1];
    let b = targets.len();
    let scale = grad_loss / T::of(b as f64);
    let mut g = probs.data().to_vec();
    for (r, &t) in targets.iter().enumerate() {
        g[r * k + t] -= T::one();
    }
    for v in &mut g {
        *v *= scale;
    }
    Tensor::new(probs.shape().to_vec(), g).expect("same shape")
}
