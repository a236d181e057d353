//! Shape-preserving training-time augmentations on `C×H×W` images.

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    /// Zero-pad every side by `pad`, then crop a random window of the
    /// original size.
    RandomCrop { pad: usize },
    /// Mirror left-right with probability `p`.
    HorizontalFlip { p: f64 },
    /// Rotate by a uniformly drawn number of quarter turns (square images
    /// only; non-square images pass through).
    RandomRotation,
}

pub fn horizontal_flip(img: &Tensor) -> Tensor {
    let s = img.shape();
    let (w, rows) = (s[2], s[0] * s[1]);
    let mut out = img.clone();
    for r in 0..rows {
        out.data_mut()[r * w..(r + 1) * w].reverse();
    }
    out
}

/// Rotates counter-clockwise by `turns` quarter turns. Square images only;
/// other shapes are returned unchanged unless `turns` is a multiple of 2.
pub fn rotate_quarter(img: &Tensor, turns: usize) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let turns = turns % 4;
    if turns == 0 || (h != w && turns % 2 == 1) {
        return img.clone();
    }
    let src = img.data();
    let mut out = Tensor::zeros(s);
    let dst = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let (ny, nx) = match turns {
                    1 => (w - 1 - x, y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (x, h - 1 - y),
                };
                dst[base + ny * w + nx] = src[base + y * w + x];
            }
        }
    }
    out
}

/// Pads with zeros by `pad` on every side and crops the window whose top-left
/// corner is `(top, left)` in padded coordinates.
pub fn pad_crop(img: &Tensor, pad: usize, top: usize, left: usize) -> Tensor {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = img.data();
    let mut out = Tensor::zeros(s);
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + top) as isize - pad as isize;
            if sy < 0 || sy as usize >= h {
                continue;
            }
            for x in 0..w {
                let sx = (x + left) as isize - pad as isize;
                if sx >= 0 && (sx as usize) < w {
                    dst[ch * h * w + y * w + x] = src[ch * h * w + sy as usize * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Applies `ops` in order. The result depends only on the image and the rng
/// state.
pub fn augment<R: Rng + ?Sized>(img: &Tensor, ops: &[AugmentOp], rng: &mut R) -> Tensor {
    let mut out = img.clone();
    for op in ops {
        out = match *op {
            AugmentOp::RandomCrop { pad } if pad > 0 => {
                let top = rng.random_range(0..=2 * pad);
                let left = rng.random_range(0..=2 * pad);
                pad_crop(&out, pad, top, left)
            }
            AugmentOp::RandomCrop { .. } => out,
            AugmentOp::HorizontalFlip { p } => {
                if rng.random::<f64>() < p {
                    horizontal_flip(&out)
                } else {
                    out
                }
            }
            AugmentOp::RandomRotation => {
                let turns = rng.random_range(0..4);
                rotate_quarter(&out, turns)
            }
        };
    }
    out
}
