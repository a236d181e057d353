use std::rc::Rc;

use rand::Rng;

use super::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::tensor::kernels::{self, ConvGeometry};
use crate::tensor::{numel, Tensor};

/// Tanh-approximation GELU constant, √(2/π).
pub const GELU_SQRT_2_OVER_PI: f64 = 0.7978845608;
const GELU_CUBIC: f64 = 0.044715;

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Contract(format!("{op}: axis {axis} out of bounds for shape {shape:?}")));
    }
    Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
}

impl Tape {
    /// Matrix product. Accepts `[.., m, k] · [k, n]` (the leading axes are
    /// flattened into rows) and batched `[b, m, k] · [b, k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        if sa.len() >= 2 && sb.len() == 2 {
            let k = sa[sa.len() - 1];
            if sb[0] != k {
                return Err(dim_err("matmul", &sa, &sb));
            }
            let n = sb[1];
            let rows = numel(&sa[..sa.len() - 1]);
            let mut out = vec![0.0; rows * n];
            kernels::gemm_nn(av.data(), bv.data(), &mut out, rows, k, n);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let value = Rc::new(Tensor::new(shape, out)?);
            return self.push("matmul", value, &[a, b], move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut d = vec![0.0; rows * k];
                    kernels::gemm_nt(g.data(), bv.data(), &mut d, rows, n, k);
                    Tensor::new(sa.clone(), d).unwrap()
                });
                let gb = needs[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm_tn(av.data(), g.data(), &mut d, k, rows, n);
                    Tensor::new(sb.clone(), d).unwrap()
                });
                vec![ga, gb]
            });
        }
        if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                kernels::gemm_nn(
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            let value = Rc::new(Tensor::new(vec![batch, m, n], out)?);
            return self.push("bmm", value, &[a, b], move |g, needs| {
                let gd = g.data();
                let ga = needs[0].then(|| {
                    let mut d = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        kernels::gemm_nt(
                            &gd[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            &mut d[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    Tensor::new(sa.clone(), d).unwrap()
                });
                let gb = needs[1].then(|| {
                    let mut d = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        kernels::gemm_tn(
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut d[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    Tensor::new(sb.clone(), d).unwrap()
                });
                vec![ga, gb]
            });
        }
        Err(dim_err("matmul", &sa, &sb))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = Rc::new(kernels::broadcast_zip(&av, &bv, "add", |x, y| x + y)?);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("add", value, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| kernels::reduce_to_shape(g, &sa)),
                needs[1].then(|| kernels::reduce_to_shape(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = Rc::new(kernels::broadcast_zip(&av, &bv, "sub", |x, y| x - y)?);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("sub", value, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| kernels::reduce_to_shape(g, &sa)),
                needs[1].then(|| kernels::reduce_to_shape(&g.map(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = Rc::new(kernels::broadcast_zip(&av, &bv, "mul", |x, y| x * y)?);
        self.push("mul", value, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| {
                    let t = kernels::broadcast_zip(g, &bv, "mul", |x, y| x * y).unwrap();
                    kernels::reduce_to_shape(&t, av.shape())
                }),
                needs[1].then(|| {
                    let t = kernels::broadcast_zip(g, &av, "mul", |x, y| x * y).unwrap();
                    kernels::reduce_to_shape(&t, bv.shape())
                }),
            ]
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = Rc::new(kernels::broadcast_zip(&av, &bv, "div", |x, y| x / y)?);
        self.push("div", value, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| {
                    let t = kernels::broadcast_zip(g, &bv, "div", |x, y| x / y).unwrap();
                    kernels::reduce_to_shape(&t, av.shape())
                }),
                needs[1].then(|| {
                    let q = kernels::broadcast_zip(&av, &bv, "div", |x, y| -x / (y * y)).unwrap();
                    let t = kernels::broadcast_zip(g, &q, "mul", |x, y| x * y).unwrap();
                    kernels::reduce_to_shape(&t, bv.shape())
                }),
            ]
        })
    }

    pub fn scale(&self, a: Var, factor: f64) -> Result<Var> {
        let value = Rc::new(self.value(a).map(|v| v * factor));
        self.push("scale", value, &[a], move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let value = Rc::new(av.reshape(shape)?);
        let original = av.shape().to_vec();
        self.push("reshape", value, &[a], move |g, _| vec![Some(g.reshape(&original).unwrap())])
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = Rc::new(kernels::permute(&self.value(a), axes)?);
        let inverse = kernels::inverse_permutation(axes);
        self.push("permute", value, &[a], move |g, _| vec![Some(kernels::permute(g, &inverse).unwrap())])
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let (outer, extent, inner) = split_axis(&shape, axis, "narrow")?;
        if start + len > extent {
            return Err(Error::Contract(format!(
                "narrow {start}..{} exceeds extent {extent} of axis {axis}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&av.data()[(o * extent + start) * inner..(o * extent + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Rc::new(Tensor::new(out_shape, data)?);
        self.push("narrow", value, &[a], move |g, _| {
            let mut full = Tensor::zeros(&shape);
            let fd = full.data_mut();
            for o in 0..outer {
                fd[(o * extent + start) * inner..(o * extent + start + len) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(full)]
        })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
            .shape()
            .to_vec();
        let (outer, _, inner) = split_axis(&first, axis, "concat")?;
        let mut extents = Vec::with_capacity(values.len());
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == first.len() && (0..s.len()).all(|i| i == axis || s[i] == first[i]);
            if !compatible {
                return Err(dim_err("concat", &first, s));
            }
            extents.push(s[axis]);
        }
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let value = Rc::new(Tensor::new(out_shape, data)?);
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        self.push("concat", value, parts, move |g, needs| {
            let mut grads: Vec<Vec<f64>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (dst, &e) in grads.iter_mut().zip(&extents) {
                    dst.extend_from_slice(&g.data()[offset..offset + e * inner]);
                    offset += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .zip(needs)
                .map(|((d, s), &need)| need.then(|| Tensor::new(s.clone(), d).unwrap()))
                .collect()
        })
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = Rc::new(Tensor::scalar(av.sum()));
        let shape = av.shape().to_vec();
        self.push("sum", value, &[a], move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean over the listed axes, which are removed from the result.
    pub fn mean_axes(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        if axes.iter().any(|&ax| ax >= shape.len()) {
            return Err(Error::Contract(format!("mean_axes {axes:?} out of bounds for {shape:?}")));
        }
        let kept: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
            .collect();
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let offsets = kernels::broadcast_offsets(&shape, &kept);
        let mut out = vec![0.0; numel(&kept)];
        for (&v, &o) in av.data().iter().zip(&offsets) {
            out[o] += v;
        }
        let inv = 1.0 / count.max(1) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let squeezed: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &e)| e)
            .collect();
        let value = Rc::new(Tensor::new(squeezed, out)?);
        self.push("mean_axes", value, &[a], move |g, _| {
            let data = offsets.iter().map(|&o| g.data()[o] * inv).collect();
            vec![Some(Tensor::new(shape.clone(), data).unwrap())]
        })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let (outer, extent, inner) = split_axis(av.shape(), axis, "softmax")?;
        let value = Rc::new(Tensor::new(av.shape().to_vec(), softmax_slices(av.data(), outer, extent, inner))?);
        let y = Rc::clone(&value);
        self.push("softmax", value, &[a], move |g, _| {
            let (yd, gd) = (y.data(), g.data());
            let mut d = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |e: usize| (o * extent + e) * inner + i;
                    let dotp: f64 = (0..extent).map(|e| gd[at(e)] * yd[at(e)]).sum();
                    for e in 0..extent {
                        d[at(e)] = yd[at(e)] * (gd[at(e)] - dotp);
                    }
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), d).unwrap())]
        })
    }

    /// Standardizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let dim = *xv.shape().last().ok_or_else(|| dim_err("layer_norm", xv.shape(), gv.shape()))?;
        if gv.shape() != [dim] || bv.shape() != [dim] {
            return Err(dim_err("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.numel() / dim.max(1);
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..dim {
                let h = (row[j] - mean) * rs;
                xhat[r * dim + j] = h;
                out[r * dim + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Rc::new(Tensor::new(xv.shape().to_vec(), out)?);
        let shape = xv.shape().to_vec();
        self.push("layer_norm", value, &[x, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut dgamma = vec![0.0; dim];
            let mut dbeta = vec![0.0; dim];
            let mut dx = vec![0.0; gd.len()];
            for r in 0..rows {
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..dim {
                    let i = r * dim + j;
                    dgamma[j] += gd[i] * xhat[i];
                    dbeta[j] += gd[i];
                    let dh = gd[i] * gv.data()[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[i];
                }
                let (mean_dh, mean_dh_h) = (sum_dh / dim as f64, sum_dh_h / dim as f64);
                for j in 0..dim {
                    let i = r * dim + j;
                    let dh = gd[i] * gv.data()[j];
                    dx[i] = rstd[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
                }
            }
            vec![
                needs[0].then(|| Tensor::new(shape.clone(), dx).unwrap()),
                needs[1].then(|| Tensor::new(vec![dim], dgamma).unwrap()),
                needs[2].then(|| Tensor::new(vec![dim], dbeta).unwrap()),
            ]
        })
    }

    pub fn activation(&self, a: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Gelu => self.gelu(a),
        }
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = Rc::new(av.map(|v| v.max(0.0)));
        self.push("relu", value, &[a], move |g, _| {
            let d = g.data().iter().zip(av.data()).map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 }).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), d).unwrap())]
        })
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = Rc::new(av.map(gelu));
        self.push("gelu", value, &[a], move |g, _| {
            let d = g.data().iter().zip(av.data()).map(|(&gv, &x)| gv * gelu_grad(x)).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), d).unwrap())]
        })
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout probability {p} must be below 1")));
        }
        let av = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..av.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Rc::new(Tensor::new(av.shape().to_vec(), data)?);
        self.push("dropout", value, &[a], move |g, _| {
            let d = g.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), d).unwrap())]
        })
    }

    /// Grouped 2-D cross-correlation with zero padding.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let geom = ConvGeometry::new(iv.shape(), kv.shape(), stride, padding, groups)?;
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if b.shape() != [geom.out_channels] {
                return Err(dim_err("conv2d bias", b.shape(), kv.shape()));
            }
        }
        let out = geom.forward(iv.data(), kv.data(), bv.as_ref().map(|b| b.data()));
        let value = Rc::new(Tensor::new(geom.output_shape().to_vec(), out)?);
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push("conv2d", value, &inputs, move |g, needs| {
            let (di, dk, db) = geom.backward(iv.data(), kv.data(), g.data());
            let mut grads = vec![
                needs[0].then(|| Tensor::new(iv.shape().to_vec(), di).unwrap()),
                needs[1].then(|| Tensor::new(kv.shape().to_vec(), dk).unwrap()),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| Tensor::new(vec![geom.out_channels], db).unwrap()));
            }
            grads
        })
    }

    /// Non-overlapping `k×k` max pooling of a `B×C×H×W` tensor.
    pub fn max_pool2d(&self, a: Var, k: usize) -> Result<Var> {
        let av = self.value(a);
        let (pooled, argmax) = kernels::max_pool2d(&av, k)?;
        let shape = av.shape().to_vec();
        self.push("max_pool2d", Rc::new(pooled), &[a], move |g, _| {
            let mut d = Tensor::zeros(&shape);
            let dd = d.data_mut();
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                dd[src] += gv;
            }
            vec![Some(d)]
        })
    }

    /// Mean categorical cross-entropy of `B×C` logits against class ids,
    /// computed with a fused log-sum-exp.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let s = lv.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(dim_err("cross_entropy", s, &[labels.len()]));
        }
        let (batch, classes) = (s[0], s[1]);
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label { index, label, classes });
        }
        let probs = softmax_slices(lv.data(), batch, classes, 1);
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &lv.data()[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let value = Rc::new(Tensor::scalar(total / batch as f64));
        let labels = labels.to_vec();
        self.push("cross_entropy", value, &[logits], move |g, _| {
            let scale = g.data()[0] / batch as f64;
            let mut d = probs.clone();
            for (b, &label) in labels.iter().enumerate() {
                d[b * classes + label] -= 1.0;
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(Tensor::new(vec![batch, classes], d).unwrap())]
        })
    }
}

/// Max-shifted softmax over the middle axis of an `(outer, extent, inner)`
/// view.
pub(crate) fn softmax_slices(x: &[f64], outer: usize, extent: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let max = (0..extent).map(|e| x[at(e)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in 0..extent {
                let v = (x[at(e)] - max).exp();
                out[at(e)] = v;
                z += v;
            }
            for e in 0..extent {
                out[at(e)] /= z;
            }
        }
    }
    out
}

/// Softmax of a plain vector.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    softmax_slices(values, 1, values.len(), 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_closed_forms() {
        assert!(close(&softmax(&[0.0, 0.0]), &[0.5, 0.5], 1e-15));
        assert!(close(&softmax(&[1000.0, 1000.0]), &[0.5, 0.5], 1e-15));
        assert!(close(&softmax(&[0.0, 3f64.ln()]), &[0.25, 0.75], 1e-15));
    }

    #[test]
    fn softmax_axis_out_of_bounds() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let tape = Tape::strict();
        let x = tape.constant(Tensor::full(&[1, 4], 5.0));
        let g = tape.constant(Tensor::ones(&[4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn activations_pointwise() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(tape.value(tape.relu(x).unwrap()).data(), &[0.0, 2.0]);
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.8411919906082768).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[1, 4]));
        let l = tape.cross_entropy(uniform, &[2]).unwrap();
        assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);

        let confident = tape.constant(Tensor::new(vec![1, 3], vec![30.0, 0.0, 0.0]).unwrap());
        let l = tape.cross_entropy(confident, &[0]).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-9);
    }

    #[test]
    fn cross_entropy_label_error_names_index() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.cross_entropy(logits, &[0, 3]) {
            Err(Error::Label { index, label, classes }) => assert_eq!((index, label, classes), (1, 3, 3)),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 1, 3, 3], |i| i as f64 * 0.1));
        let k = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.conv2d(x, k, None, (1, 1), (0, 0), 1).unwrap();
        assert_eq!(*tape.value(y), *tape.value(x));
    }

    #[test]
    fn narrow_and_concat_invert() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 5, 3], |i| i as f64));
        let a = tape.narrow(x, 1, 0, 2).unwrap();
        let b = tape.narrow(x, 1, 2, 3).unwrap();
        let joined = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(*tape.value(joined), *tape.value(x));
        let s = tape.sum(joined).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x), Tensor::ones(&[2, 5, 3]));
    }

    #[test]
    fn forward_ops_leave_inputs_untouched() {
        let tape = Tape::new();
        let original = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let x = tape.leaf(original.clone());
        let w = tape.leaf(Tensor::from_fn(&[4, 4], |i| (i as f64).cos()));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.softmax(y, 1).unwrap();
        let _ = tape.gelu(y).unwrap();
        assert_eq!(*tape.value(x), original);
    }
}
