#![allow(dead_code)]

use oncovit::autograd::Tape;
use oncovit::data::{generate_dataset, Dataset, Pattern, PreprocessSpec, SyntheticSpec};
use oncovit::models::{ViTClassifier, ViTConfig};
use oncovit::Tensor;

/// Softmax with plain loops and no max shift beyond what f64 needs.
pub fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(row.len());
    let mut z = 0.0;
    for &v in row {
        let e = (v - m).exp();
        z += e;
        out.push(e);
    }
    for o in &mut out {
        *o /= z;
    }
    out
}

fn param(model: &ViTClassifier, name: &str) -> Tensor {
    model.params().by_name(name).unwrap().value.clone()
}

/// `x·W + b` for `x: T×I`, `W: I×O` with triple loops.
fn affine(x: &[f64], t: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (i_dim, o_dim) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; t * o_dim];
    for r in 0..t {
        for o in 0..o_dim {
            let mut acc = b.data()[o];
            for i in 0..i_dim {
                acc += x[r * i_dim + i] * w.data()[i * o_dim + o];
            }
            out[r * o_dim + o] = acc;
        }
    }
    out
}

/// Multi-head self-attention of block `block` on one `T×D` sequence,
/// computed entry by entry. Returns the output and per-head `T×T` weights.
pub fn naive_mha(model: &ViTClassifier, block: usize, x: &Tensor) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let h = model.config().num_heads;
    let hd = d / h;
    let p = |s: &str| param(model, &format!("encoder.{block}.attn.{s}"));
    let q = affine(x.data(), t, &p("wq"), &p("bq"));
    let k = affine(x.data(), t, &p("wk"), &p("bk"));
    let v = affine(x.data(), t, &p("wv"), &p("bv"));
    let mut merged = vec![0.0; t * d];
    let mut all_weights = Vec::new();
    for head in 0..h {
        let mut weights = vec![0.0; t * t];
        for i in 0..t {
            let mut scores = vec![0.0; t];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..hd {
                    dot += q[i * d + head * hd + c] * k[j * d + head * hd + c];
                }
                *s = dot / (hd as f64).sqrt();
            }
            let a = naive_softmax(&scores);
            weights[i * t..(i + 1) * t].copy_from_slice(&a);
            for c in 0..hd {
                let mut acc = 0.0;
                for j in 0..t {
                    acc += a[j] * v[j * d + head * hd + c];
                }
                merged[i * d + head * hd + c] = acc;
            }
        }
        all_weights.push(weights);
    }
    (affine(&merged, t, &p("wo"), &p("bo")), all_weights)
}

/// Runs the library's attention on a single sequence.
pub fn library_mha(model: &ViTClassifier, block: usize, x: &Tensor) -> (Tensor, Tensor) {
    let tape = Tape::new();
    let p = model.params().bind_constant(&tape);
    let xv = tape.constant(x.clone());
    let (out, w) = model.multi_head_attention(&tape, &p, block, xv).unwrap();
    ((*tape.value(out)).clone(), (*tape.value(w)).clone())
}

pub fn desk_vit(classes: usize, seed: u64) -> ViTClassifier {
    ViTClassifier::new(
        ViTConfig {
            num_classes: classes,
            ..ViTConfig::default()
        },
        seed,
    )
    .unwrap()
}

/// The seeded 64-sample, 3-class stripes set used for overfitting.
pub fn overfit_set(size: usize) -> Dataset {
    let spec = SyntheticSpec {
        name: "overfit".into(),
        pattern: Pattern::Stripes,
        num_classes: 3,
        samples_per_class: 22,
        image_size: size,
        noise: 0.1,
        seed: 7,
        ..Default::default()
    };
    let full = generate_dataset(&spec, &PreprocessSpec { size, ..Default::default() }).unwrap();
    full.subset(&(0..64).collect::<Vec<_>>())
}

/// 10-class oriented stripes used as the pretraining task.
pub fn surrogate(per_class: usize, seed: u64, noise: f64) -> Dataset {
    let spec = SyntheticSpec {
        name: "surrogate".into(),
        num_classes: 10,
        samples_per_class: per_class,
        noise,
        seed,
        ..Default::default()
    };
    generate_dataset(&spec, &PreprocessSpec::default()).unwrap()
}

/// Three orientations (9°, 27°, 45°) between the surrogate's classes.
pub fn transfer_target(per_class: usize, seed: u64, noise: f64) -> Dataset {
    let spec = SyntheticSpec {
        name: "target".into(),
        num_classes: 3,
        samples_per_class: per_class,
        noise,
        angle_offset: 9.0,
        angle_span: Some(54.0),
        seed,
        ..Default::default()
    };
    generate_dataset(&spec, &PreprocessSpec::default()).unwrap()
}
