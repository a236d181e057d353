use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source coordinate sampled for output index `i`. Corner-aligned: the first
/// and last output samples land on the first and last input samples. A
/// single output sample lands on the input's center.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f64 {
    if out_len == 1 {
        (in_len - 1) as f64 / 2.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Bilinear resize of a `C×H×W` image to `C×out_h×out_w`.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[1] == 0 || s[2] == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("cannot resize image of shape {s:?} to {out_h}x{out_w}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        (0..out_len)
            .map(|i| {
                let x = source_coord(i, in_len, out_len);
                let x0 = (x.floor() as usize).min(in_len - 1);
                let x1 = (x0 + 1).min(in_len - 1);
                (x0, x1, x - x0 as f64)
            })
            .collect()
    };
    let rows = taps(out_h, h);
    let cols = taps(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Per-channel `(x − mean) / std`. `mean` and `std` hold one value per
/// channel, or a single value shared by all channels.
pub fn normalize(img: &Tensor, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    let c = img.shape().first().copied().unwrap_or(0);
    let pick = |v: &[f64], ch: usize, what: &str| -> Result<f64> {
        match v.len() {
            1 => Ok(v[0]),
            n if n == c => Ok(v[ch]),
            n => Err(Error::Config(format!("{what} has {n} values for {c} channels"))),
        }
    };
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config(format!("normalization std {s} must be positive")));
    }
    let plane = img.numel() / c.max(1);
    let mut out = img.clone();
    for ch in 0..c {
        let (m, s) = (pick(mean, ch, "mean")?, pick(std, ch, "std")?);
        for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

/// Resize to `target×target`, then normalize per channel.
pub fn preprocess(img: &Tensor, target: usize, mean: &[f64], std: &[f64]) -> Result<Tensor> {
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config(format!("normalization std {s} must be positive")));
    }
    normalize(&resize_bilinear(img, target, target)?, mean, std)
}

/// Resize and normalization settings applied when a dataset is loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSpec {
    pub size: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            size: 32,
            mean: vec![0.5],
            std: vec![0.5],
        }
    }
}

impl PreprocessSpec {
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        preprocess(img, self.size, &self.mean, &self.std)
    }
}
