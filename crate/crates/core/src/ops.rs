//! Plain-tensor numeric kernels.
//!
//! These are the forward (and adjoint) computations used by the autodiff
//! graph. They are usable on their own for inference-only code and tests.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hidden-layer activation slope used throughout the networks.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Stabilizer added to the variance in per-channel normalization.
pub const DEFAULT_NORM_EPSILON: f64 = 1e-5;

/// Geometry of a square-kernel 2-D cross-correlation.
///
/// `cin`/`h`/`w` describe the gathered-from side, `cout`/`oh`/`ow` the
/// gathered-into side. A transposed convolution runs the same geometry in
/// the opposite direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

fn check_kernel(kernel: &Tensor, stride: usize) -> Result<(usize, usize, usize)> {
    let (k0, k1, kh, kw) = kernel
        .dims4()
        .map_err(|_| Error::shape(format!("kernel must be [C_a, C_b, k, k], got {:?}", kernel.shape())))?;
    if kh != kw || kh == 0 {
        return Err(Error::shape(format!("kernel must be square with k >= 1, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    Ok((k0, k1, kh))
}

impl ConvGeometry {
    /// Geometry of `conv2d(input, kernel)`.
    pub fn conv(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, kcin, k) = check_kernel(kernel, stride)?;
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels but kernel {:?} expects {kcin}",
                kernel.shape()
            )));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv2d: padded input {}x{} smaller than kernel {k}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Geometry of `conv_transpose2d(input, kernel)`, expressed as the
    /// forward convolution it is the adjoint of.
    pub fn transpose(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (n, c_in, h, w) = input.dims4()?;
        let (ka, kb, k) = check_kernel(kernel, stride)?;
        if ka != c_in {
            return Err(Error::shape(format!(
                "conv_transpose2d: input has {c_in} channels but kernel {:?} expects {ka}",
                kernel.shape()
            )));
        }
        if bias.shape() != [kb] {
            return Err(Error::shape(format!(
                "conv_transpose2d: bias shape {:?} does not match {kb} output channels",
                bias.shape()
            )));
        }
        let full_h = (h - 1) * stride + k;
        let full_w = (w - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::shape(format!("conv_transpose2d: padding {pad} leaves no output for a {h}x{w} input")));
        }
        Ok(Self { n, cin: kb, h: full_h - 2 * pad, w: full_w - 2 * pad, cout: ka, k, stride, pad, oh: h, ow: w })
    }

    /// Output columns `ox` whose tap `kx` lands inside the input row.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        span(kx, self.pad, self.stride, self.w, self.ow)
    }

    #[inline]
    fn row_range(&self, ky: usize) -> (usize, usize) {
        span(ky, self.pad, self.stride, self.h, self.oh)
    }
}

#[inline]
fn span(tap: usize, pad: usize, stride: usize, extent: usize, out_extent: usize) -> (usize, usize) {
    // need 0 <= o*stride + tap - pad < extent
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > tap { ((extent - 1 + pad - tap) / stride + 1).min(out_extent) } else { 0 };
    (lo, hi.max(lo))
}

/// `out[n, co, oy, ox] += Σ kernel[co, ci, ky, kx] · x[n, ci, oy·s+ky−p, ox·s+kx−p]`
fn gather(g: &ConvGeometry, x: &[f64], kernel: &[f64], out: &mut [f64]) {
    let (k, s) = (g.k, g.stride);
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for co in 0..g.cout {
            let dst = &mut out[(b * g.cout + co) * out_plane..][..out_plane];
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * in_plane..][..in_plane];
                let taps = &kernel[(co * g.cin + ci) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy0, oy1) = g.row_range(ky);
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        let (ox0, ox1) = g.col_range(kx);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - g.pad;
                            let row_in = &src[iy * g.w..][..g.w];
                            let row_out = &mut dst[oy * g.ow..][..g.ow];
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox * s + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`gather`]: `x[n, ci, iy, ix] += Σ kernel[co, ci, ky, kx] · y[n, co, oy, ox]`.
fn scatter(g: &ConvGeometry, y: &[f64], kernel: &[f64], x: &mut [f64]) {
    let (k, s) = (g.k, g.stride);
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for co in 0..g.cout {
            let src = &y[(b * g.cout + co) * out_plane..][..out_plane];
            for ci in 0..g.cin {
                let dst = &mut x[(b * g.cin + ci) * in_plane..][..in_plane];
                let taps = &kernel[(co * g.cin + ci) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy0, oy1) = g.row_range(ky);
                    for kx in 0..k {
                        let wv = taps[ky * k + kx];
                        let (ox0, ox1) = g.col_range(kx);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - g.pad;
                            let row_out = &src[oy * g.ow..][..g.ow];
                            let row_in = &mut dst[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                row_in[ox * s + kx - g.pad] += wv * row_out[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `dk[co, ci, ky, kx] += Σ x[n, ci, iy, ix] · y[n, co, oy, ox]`
fn kernel_grad(g: &ConvGeometry, x: &[f64], y: &[f64], dk: &mut [f64]) {
    let (k, s) = (g.k, g.stride);
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.n {
        for co in 0..g.cout {
            let gy = &y[(b * g.cout + co) * out_plane..][..out_plane];
            for ci in 0..g.cin {
                let src = &x[(b * g.cin + ci) * in_plane..][..in_plane];
                let taps = &mut dk[(co * g.cin + ci) * k * k..][..k * k];
                for ky in 0..k {
                    let (oy0, oy1) = g.row_range(ky);
                    for kx in 0..k {
                        let (ox0, ox1) = g.col_range(kx);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - g.pad;
                            let row_in = &src[iy * g.w..][..g.w];
                            let row_out = &gy[oy * g.ow..][..g.ow];
                            for ox in ox0..ox1 {
                                acc += row_in[ox * s + kx - g.pad] * row_out[ox];
                            }
                        }
                        taps[ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

fn add_channel_bias(data: &mut [f64], n: usize, c: usize, plane: usize, bias: &[f64]) {
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            for v in &mut data[(b * c + ch) * plane..][..plane] {
                *v += bv;
            }
        }
    }
}

fn channel_sums(data: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            *acc += data[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    out
}

/// Direct 2-D cross-correlation plus per-channel bias.
///
/// `input` is `[N, Cin, H, W]`, `kernel` is `[Cout, Cin, k, k]`, `bias` is `[Cout]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeometry::conv(input, kernel, bias, stride, padding)?;
    let mut out = vec![0.0; g.n * g.cout * g.oh * g.ow];
    gather(&g, input.data(), kernel.data(), &mut out);
    add_channel_bias(&mut out, g.n, g.cout, g.oh * g.ow, bias.data());
    Tensor::new([g.n, g.cout, g.oh, g.ow], out)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel,
/// stride and padding, plus a bias over the `kernel.shape()[1]` output channels.
///
/// Output spatial size is `(H − 1)·stride − 2·padding + k`.
pub fn conv_transpose2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::transpose(input, kernel, bias, stride, padding)?;
    let mut out = vec![0.0; g.n * g.cin * g.h * g.w];
    scatter(&g, input.data(), kernel.data(), &mut out);
    add_channel_bias(&mut out, g.n, g.cin, g.h * g.w, bias.data());
    Tensor::new([g.n, g.cin, g.h, g.w], out)
}

/// Gradients of `conv2d` w.r.t. (input, kernel, bias) given the output gradient.
pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let mut gx = vec![0.0; input.len()];
    scatter(g, grad_out.data(), kernel.data(), &mut gx);
    let mut gk = vec![0.0; kernel.len()];
    kernel_grad(g, input.data(), grad_out.data(), &mut gk);
    let gb = channel_sums(grad_out.data(), g.n, g.cout, g.oh * g.ow);
    (
        Tensor::new(input.shape(), gx).expect("shape preserved"),
        Tensor::new(kernel.shape(), gk).expect("shape preserved"),
        Tensor::new([g.cout], gb).expect("shape preserved"),
    )
}

/// Gradients of `conv_transpose2d` w.r.t. (input, kernel, bias).
pub(crate) fn conv_transpose2d_backward(
    g: &ConvGeometry,
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let mut gx = vec![0.0; input.len()];
    gather(g, grad_out.data(), kernel.data(), &mut gx);
    let mut gk = vec![0.0; kernel.len()];
    kernel_grad(g, grad_out.data(), input.data(), &mut gk);
    let gb = channel_sums(grad_out.data(), g.n, g.cin, g.h * g.w);
    (
        Tensor::new(input.shape(), gx).expect("shape preserved"),
        Tensor::new(kernel.shape(), gk).expect("shape preserved"),
        Tensor::new([g.cin], gb).expect("shape preserved"),
    )
}

/// Per-sample, per-channel spatial statistics of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    /// `[N, C]` spatial means.
    pub mean: Tensor,
    /// `[N, C]` population standard deviations.
    pub std: Tensor,
    pub epsilon: f64,
}

/// Mean and population standard deviation of every `(sample, channel)` plane.
pub fn channel_stats(input: &Tensor, epsilon: f64) -> Result<ChannelStats> {
    let (n, c, h, w) = input.dims4()?;
    if h * w == 0 {
        return Err(Error::shape("channel_stats needs H·W >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let plane = h * w;
    let mut mean = Vec::with_capacity(n * c);
    let mut std = Vec::with_capacity(n * c);
    for p in input.data().chunks_exact(plane) {
        let (mu, var) = plane_moments(p);
        mean.push(mu);
        std.push(var.sqrt());
    }
    Ok(ChannelStats { mean: Tensor::new([n, c], mean)?, std: Tensor::new([n, c], std)?, epsilon })
}

/// Mean and population variance of one plane. A constant plane reports its
/// value and zero variance exactly, independent of summation roundoff.
pub(crate) fn plane_moments(p: &[f64]) -> (f64, f64) {
    let first = p[0];
    if p.iter().all(|&v| v == first) {
        return (first, 0.0);
    }
    let inv = 1.0 / p.len() as f64;
    let mu = p.iter().sum::<f64>() * inv;
    let var = p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() * inv;
    (mu, var)
}

/// `(x − μ_c) / sqrt(σ_c² + ε)` per sample and channel. Returns the
/// normalized map and the per-plane `1 / sqrt(σ² + ε)` factors.
pub fn instance_normalize(input: &Tensor, epsilon: f64) -> Result<(Tensor, Vec<f64>)> {
    let (_, _, h, w) = input.dims4()?;
    if h * w == 0 {
        return Err(Error::shape("normalization needs H·W >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(input.len());
    let mut inv_std = Vec::with_capacity(input.len() / plane);
    for p in input.data().chunks_exact(plane) {
        let (mu, var) = plane_moments(p);
        let inv = 1.0 / (var + epsilon).sqrt();
        inv_std.push(inv);
        out.extend(p.iter().map(|v| (v - mu) * inv));
    }
    Ok((Tensor::new(input.shape(), out)?, inv_std))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)` without cancellation.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Average over the channel axis: `[N, C, H, W] → [N, 1, H, W]`.
pub fn channel_mean(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let inv = 1.0 / c as f64;
    let mut out = vec![0.0; n * plane];
    for b in 0..n {
        let dst = &mut out[b * plane..][..plane];
        for ch in 0..c {
            for (d, s) in dst.iter_mut().zip(&input.data()[(b * c + ch) * plane..][..plane]) {
                *d += s;
            }
        }
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    Tensor::new([n, 1, h, w], out)
}

/// Repeats a single-channel map `k` times: `[N, 1, H, W] → [N, k, H, W]`.
pub fn broadcast_channel(input: &Tensor, k: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!("broadcast_channel expects 1 channel, got {c}")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * k * plane);
    for b in 0..n {
        let src = &input.data()[b * plane..][..plane];
        for _ in 0..k {
            out.extend_from_slice(src);
        }
    }
    Tensor::new([n, k, h, w], out)
}

/// Concatenates along the channel axis, preserving operand order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "concat_channels: {:?} is incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        total_c += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[b * pc * plane..][..pc * plane]);
        }
    }
    Tensor::new([n, total_c, h, w], out)
}

/// Inverse of [`concat_channels`] for the given channel counts.
pub(crate) fn split_channels(input: &Tensor, counts: &[usize]) -> Vec<Tensor> {
    let (n, c, h, w) = input.dims4().expect("4-D");
    let plane = h * w;
    let mut outs: Vec<Vec<f64>> = counts.iter().map(|&k| Vec::with_capacity(n * k * plane)).collect();
    for b in 0..n {
        let mut offset = 0;
        for (dst, &k) in outs.iter_mut().zip(counts) {
            dst.extend_from_slice(&input.data()[(b * c + offset) * plane..][..k * plane]);
            offset += k;
        }
    }
    outs.into_iter().zip(counts).map(|(d, &k)| Tensor::new([n, k, h, w], d).expect("split shape")).collect()
}

/// Gram matrices `A·Aᵀ / (C·H·W)` of the `C × (H·W)` unfolding, per sample.
pub fn gram(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::shape("gram needs H·W >= 1"));
    }
    let norm = 1.0 / (c * plane) as f64;
    let mut out = vec![0.0; n * c * c];
    for b in 0..n {
        let a = &input.data()[b * c * plane..][..c * plane];
        let g = &mut out[b * c * c..][..c * c];
        for i in 0..c {
            let ri = &a[i * plane..][..plane];
            for j in i..c {
                let rj = &a[j * plane..][..plane];
                let v = ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>() * norm;
                g[i * c + j] = v;
                g[j * c + i] = v;
            }
        }
    }
    Tensor::new([n, c, c], out)
}

/// Spatial average: `[N, C, H, W] → [N, C, 1, 1]`.
pub fn spatial_mean(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let inv = 1.0 / (h * w) as f64;
    let data = input.data().chunks_exact(h * w).map(|p| p.iter().sum::<f64>() * inv).collect();
    Tensor::new([n, c, 1, 1], data)
}

/// Inclusive-exclusive pixel box `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

/// Precomputed bilinear sampling taps for cropping each sample to its box
/// and resizing to `out × out` (corner-aligned sampling).
#[derive(Clone, Debug)]
pub struct CropResizePlan {
    in_shape: [usize; 4],
    out: usize,
    /// Per sample, per output pixel: four `(plane offset, weight)` taps.
    taps: Vec<[(usize, f64); 4]>,
}

impl CropResizePlan {
    pub fn new(in_shape: &[usize], boxes: &[BoundingBox], out: usize) -> Result<Self> {
        let [n, c, h, w] = <[usize; 4]>::try_from(in_shape)
            .map_err(|_| Error::shape(format!("crop_resize expects 4-D input, got {in_shape:?}")))?;
        if boxes.len() != n {
            return Err(Error::shape(format!("{} boxes for batch {n}", boxes.len())));
        }
        if out == 0 {
            return Err(Error::invalid("crop_resize output size must be >= 1"));
        }
        let mut taps = Vec::with_capacity(n * out * out);
        for bb in boxes {
            if bb.y1 > h || bb.x1 > w || bb.height() == 0 || bb.width() == 0 {
                return Err(Error::shape(format!("box {bb:?} invalid for {h}x{w} input")));
            }
            let coords = |lo: usize, len: usize| -> Vec<(usize, usize, f64)> {
                (0..out)
                    .map(|i| {
                        let pos = if out == 1 || len == 1 {
                            (len - 1) as f64 / 2.0
                        } else {
                            i as f64 * (len - 1) as f64 / (out - 1) as f64
                        };
                        let base = (pos.floor() as usize).min(len - 1);
                        let next = (base + 1).min(len - 1);
                        (lo + base, lo + next, pos - base as f64)
                    })
                    .collect()
            };
            let ys = coords(bb.y0, bb.height());
            let xs = coords(bb.x0, bb.width());
            for &(ya, yb, fy) in &ys {
                for &(xa, xb, fx) in &xs {
                    taps.push([
                        (ya * w + xa, (1.0 - fy) * (1.0 - fx)),
                        (ya * w + xb, (1.0 - fy) * fx),
                        (yb * w + xa, fy * (1.0 - fx)),
                        (yb * w + xb, fy * fx),
                    ]);
                }
            }
        }
        Ok(Self { in_shape: [n, c, h, w], out, taps })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.in_shape[0], self.in_shape[1], self.out, self.out]
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() != self.in_shape {
            return Err(Error::shape(format!(
                "crop_resize plan built for {:?}, got {:?}",
                self.in_shape,
                input.shape()
            )));
        }
        let [n, c, h, w] = self.in_shape;
        let per = self.out * self.out;
        let mut out = Vec::with_capacity(n * c * per);
        for b in 0..n {
            let taps = &self.taps[b * per..][..per];
            for ch in 0..c {
                let src = &input.data()[(b * c + ch) * h * w..][..h * w];
                out.extend(taps.iter().map(|t| t.iter().map(|&(o, wt)| wt * src[o]).sum::<f64>()));
            }
        }
        Tensor::new(self.output_shape(), out)
    }

    pub(crate) fn adjoint(&self, grad_out: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let per = self.out * self.out;
        let mut gx = vec![0.0; n * c * h * w];
        for b in 0..n {
            let taps = &self.taps[b * per..][..per];
            for ch in 0..c {
                let dst = &mut gx[(b * c + ch) * h * w..][..h * w];
                let src = &grad_out.data()[(b * c + ch) * per..][..per];
                for (t, &g) in taps.iter().zip(src) {
                    for &(o, wt) in t {
                        dst[o] += wt * g;
                    }
                }
            }
        }
        Tensor::new(self.in_shape, gx).expect("shape preserved")
    }
}
