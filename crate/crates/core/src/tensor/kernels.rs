//! Slice-level numeric kernels. Every reduction runs in a fixed order so
//! results are bit-reproducible for a given input.

use super::{numel, strides, Tensor};
use crate::error::{dim_err, Error, Result};

/// `out += a · b` with `a: m×k`, `b: k×n`.
pub fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += aᵀ · b` with `a: k×m`, `b: k×n`.
pub fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with four interleaved accumulators (fixed association order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Numpy-style right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each element of `out_shape`, the flat offset of the element of an
/// `in_shape` tensor that broadcasts onto it.
pub fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let lead = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; rank];
    for i in 0..in_shape.len() {
        if in_shape[i] != 1 {
            eff[lead + i] = in_strides[i];
        }
    }
    let total = numel(out_shape);
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

/// Sums `grad` (shaped `out_shape`) down to `in_shape` along broadcast axes.
pub fn reduce_to_shape(grad: &Tensor, in_shape: &[usize]) -> Tensor {
    if grad.shape() == in_shape {
        return grad.clone();
    }
    let offsets = broadcast_offsets(grad.shape(), in_shape);
    let mut out = Tensor::zeros(in_shape);
    let data = out.data_mut();
    for (g, &o) in grad.data().iter().zip(&offsets) {
        data[o] += g;
    }
    out
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub fn broadcast_zip(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| dim_err(op, a.shape(), b.shape()))?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(shape, data);
    }
    let oa = broadcast_offsets(&shape, a.shape());
    let ob = broadcast_offsets(&shape, b.shape());
    let (da, db) = (a.data(), b.data());
    let data = oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect();
    Tensor::new(shape, data)
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Contract(format!("invalid permutation {axes:?} for rank {rank}")));
    }
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = t.numel();
    let src = t.data();
    let mut data = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        data.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Geometry of a grouped 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(dim_err("conv2d", input, kernel));
        }
        let (batch, in_channels, height, width) = (input[0], input[1], input[2], input[3]);
        let (out_channels, cin_g, kernel_h, kernel_w) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if groups == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config(format!(
                "conv2d needs positive stride and groups, got stride {stride:?}, groups {groups}"
            )));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "conv2d channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )));
        }
        if cin_g * groups != in_channels {
            return Err(dim_err("conv2d", input, kernel));
        }
        let span_h = height + 2 * padding.0;
        let span_w = width + 2 * padding.1;
        if kernel_h == 0 || kernel_w == 0 || span_h < kernel_h || span_w < kernel_w {
            return Err(Error::Config(format!(
                "conv2d output extent is not positive for input {height}x{width}, kernel {kernel_h}x{kernel_w}, padding {padding:?}"
            )));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            groups,
            out_h: (span_h - kernel_h) / stride.0 + 1,
            out_w: (span_w - kernel_w) / stride.1 + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn cin_g(&self) -> usize {
        self.in_channels / self.groups
    }

    fn cout_g(&self) -> usize {
        self.out_channels / self.groups
    }

    fn patch_len(&self) -> usize {
        self.cin_g() * self.kernel_h * self.kernel_w
    }

    /// Gathers one group's receptive fields of one image into a
    /// `patch_len × (out_h·out_w)` matrix.
    fn im2col(&self, image: &[f64], group: usize, cols: &mut [f64]) {
        let (h, w, ho, wo) = (self.height, self.width, self.out_h, self.out_w);
        let spatial = ho * wo;
        let mut row = 0;
        for c in 0..self.cin_g() {
            let plane = &image[(group * self.cin_g() + c) * h * w..][..h * w];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let dst = &mut cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..ho {
                        let iy = (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
                        for ox in 0..wo {
                            let ix = (ox * self.stride.1 + kx) as isize - self.padding.1 as isize;
                            dst[oy * wo + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                plane[iy as usize * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], group: usize, image_grad: &mut [f64]) {
        let (h, w, ho, wo) = (self.height, self.width, self.out_h, self.out_w);
        let spatial = ho * wo;
        let mut row = 0;
        for c in 0..self.cin_g() {
            let plane = &mut image_grad[(group * self.cin_g() + c) * h * w..][..h * w];
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let src = &cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..ho {
                        let iy = (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride.1 + kx) as isize - self.padding.1 as isize;
                            if ix >= 0 && (ix as usize) < w {
                                plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let spatial = self.out_h * self.out_w;
        let plen = self.patch_len();
        let image_len = self.in_channels * self.height * self.width;
        let mut out = vec![0.0; self.batch * self.out_channels * spatial];
        let mut cols = vec![0.0; plen * spatial];
        for b in 0..self.batch {
            let image = &input[b * image_len..(b + 1) * image_len];
            for g in 0..self.groups {
                self.im2col(image, g, &mut cols);
                let w = &kernel[g * self.cout_g() * plen..(g + 1) * self.cout_g() * plen];
                let dst = &mut out[(b * self.out_channels + g * self.cout_g()) * spatial..][..self.cout_g() * spatial];
                gemm_nn(w, &cols, dst, self.cout_g(), plen, spatial);
            }
            if let Some(bias) = bias {
                for (oc, &bv) in bias.iter().enumerate() {
                    for v in &mut out[(b * self.out_channels + oc) * spatial..][..spatial] {
                        *v += bv;
                    }
                }
            }
        }
        out
    }

    /// Returns `(d_input, d_kernel, d_bias)` for an upstream gradient.
    pub fn backward(&self, input: &[f64], kernel: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let spatial = self.out_h * self.out_w;
        let plen = self.patch_len();
        let cout_g = self.cout_g();
        let image_len = self.in_channels * self.height * self.width;
        let mut d_input = vec![0.0; input.len()];
        let mut d_kernel = vec![0.0; kernel.len()];
        let mut d_bias = vec![0.0; self.out_channels];
        let mut cols = vec![0.0; plen * spatial];
        let mut d_cols = vec![0.0; plen * spatial];
        for b in 0..self.batch {
            let image = &input[b * image_len..(b + 1) * image_len];
            for g in 0..self.groups {
                let go = &grad_out[(b * self.out_channels + g * cout_g) * spatial..][..cout_g * spatial];
                self.im2col(image, g, &mut cols);
                gemm_nt(go, &cols, &mut d_kernel[g * cout_g * plen..(g + 1) * cout_g * plen], cout_g, spatial, plen);
                d_cols.iter_mut().for_each(|v| *v = 0.0);
                let w = &kernel[g * cout_g * plen..(g + 1) * cout_g * plen];
                gemm_tn(w, go, &mut d_cols, plen, cout_g, spatial);
                self.col2im(&d_cols, g, &mut d_input[b * image_len..(b + 1) * image_len]);
            }
            for oc in 0..self.out_channels {
                d_bias[oc] += grad_out[(b * self.out_channels + oc) * spatial..][..spatial].iter().sum::<f64>();
            }
        }
        (d_input, d_kernel, d_bias)
    }
}

/// Non-overlapping `k×k` max pooling over the last two axes of `B×C×H×W`.
/// Returns the pooled values and the flat source index of every maximum.
pub fn max_pool2d(input: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
        return Err(Error::Config(format!("max_pool2d with window {k} does not tile shape {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h / k, w / k);
    let src = input.data();
    let mut data = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * k * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * k + dy) * w + ox * k + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, ho, wo], data)?, argmax))
}
