//! Vision transformer classifier: patches are flattened, projected,
//! prefixed with a class token, offset by a learned positional table and
//! passed through pre-norm encoder blocks; the class-token row feeds the
//! linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::nn::{Bound, Linear, Norm, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch_size: 8,
            embed_dim: 64,
            num_heads: 4,
            num_layers: 2,
            mlp_ratio: 2.0,
            num_classes: 3,
            dropout: 0.0,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(Error::Config(format!("mlp ratio {} gives an empty hidden layer", self.mlp_ratio)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    /// Sequence length including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }
}

/// Splits a `C×H×W` image into `(H/P)·(W/P)` patches, grid row-major, each
/// flattened in (channel, row, col) order.
pub fn partition_and_flatten(image: &Tensor, patch: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(dim_err("partition_and_flatten", s, &[patch]));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} cannot be split into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let plen = c * patch * patch;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for r in 0..patch {
                    let start = ch * h * w + (py * patch + r) * w + px * patch;
                    out.extend_from_slice(&src[start..start + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, plen], out)
}

/// Inverse of [`partition_and_flatten`].
pub fn unpartition(patches: &Tensor, channels: usize, height: usize, width: usize, patch: usize) -> Result<Tensor> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::Config(format!(
            "image {height}x{width} cannot be split into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (height / patch, width / patch);
    let expected = [gh * gw, channels * patch * patch];
    if patches.shape() != expected {
        return Err(dim_err("unpartition", patches.shape(), &expected));
    }
    let mut out = Tensor::zeros(&[channels, height, width]);
    let dst = out.data_mut();
    let mut src = patches.data().chunks_exact(patch);
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..channels {
                for r in 0..patch {
                    let start = ch * height * width + (py * patch + r) * width + px * patch;
                    dst[start..start + patch].copy_from_slice(src.next().unwrap());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncoderBlock {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

/// Everything the encoder computed for one batch.
pub struct ForwardTrace {
    pub logits: Var,
    /// Class-token row after the final norm, `B×D`.
    pub features: Var,
    /// Attention weights of every block, each `(B·h)×T×T`.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ViTClassifier {
    config: ViTConfig,
    params: ParamStore,
    patch_embed: Linear,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<EncoderBlock>,
    norm: Norm,
    head: Linear,
}

fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, w: &str, b: &str, shape: [usize; 2]) -> Result<Linear> {
    Ok(Linear {
        weight: store.add(format!("{prefix}.{w}"), Tensor::randn(&shape, INIT_STD, rng))?,
        bias: store.add(format!("{prefix}.{b}"), Tensor::zeros(&[shape[1]]))?,
    })
}

fn add_norm(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Norm> {
    Ok(Norm {
        gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[dim]))?,
        beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[dim]))?,
    })
}

impl ViTClassifier {
    /// Builds a model with N(0, 0.02²) weights, zero biases, zero class
    /// token and unit norms. Deterministic in `seed`.
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let patch_embed = add_linear(&mut store, &mut rng, "patch_embed", "weight", "bias", [config.patch_dim(), d])?;
        let cls_token = store.add("cls_token", Tensor::zeros(&[d]))?;
        let pos_embed = store.add("pos_embed", Tensor::randn(&[config.seq_len(), d], INIT_STD, &mut rng))?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let prefix = format!("encoder.{i}");
            let norm1 = add_norm(&mut store, &format!("{prefix}.norm1"), d)?;
            let attn_prefix = format!("{prefix}.attn");
            let attn = Attention {
                q: add_linear(&mut store, &mut rng, &attn_prefix, "wq", "bq", [d, d])?,
                k: add_linear(&mut store, &mut rng, &attn_prefix, "wk", "bk", [d, d])?,
                v: add_linear(&mut store, &mut rng, &attn_prefix, "wv", "bv", [d, d])?,
                o: add_linear(&mut store, &mut rng, &attn_prefix, "wo", "bo", [d, d])?,
            };
            let norm2 = add_norm(&mut store, &format!("{prefix}.norm2"), d)?;
            let mlp_prefix = format!("{prefix}.mlp");
            let hidden = config.mlp_hidden();
            let fc1 = add_linear(&mut store, &mut rng, &mlp_prefix, "w1", "b1", [d, hidden])?;
            let fc2 = add_linear(&mut store, &mut rng, &mlp_prefix, "w2", "b2", [hidden, d])?;
            blocks.push(EncoderBlock {
                norm1,
                attn,
                norm2,
                fc1,
                fc2,
            });
        }
        let norm = add_norm(&mut store, "norm", d)?;
        let head = add_linear(&mut store, &mut rng, "head", "weight", "bias", [d, config.num_classes])?;
        Ok(Self {
            config,
            params: store,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm,
            head,
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head_names(&self) -> Vec<String> {
        vec!["head.weight".into(), "head.bias".into()]
    }

    /// Installs a freshly initialized head with `num_classes` outputs.
    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.embed_dim;
        self.params
            .replace(self.head.weight, Tensor::randn(&[d, num_classes], INIT_STD, &mut rng));
        self.params.replace(self.head.bias, Tensor::zeros(&[num_classes]));
        self.config.num_classes = num_classes;
        Ok(())
    }

    /// `B×C×H×W` images to `B×N×(P²·C)` flattened patches, on the tape.
    pub fn patchify(&self, tape: &Tape, images: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(images);
        let expected = [cfg.channels, cfg.image_size, cfg.image_size];
        if s.len() != 4 || s[1..] != expected {
            return Err(Error::Config(format!(
                "image batch shape {s:?} does not match configured {expected:?}"
            )));
        }
        let (b, c, p) = (s[0], cfg.channels, cfg.patch_size);
        let g = cfg.image_size / p;
        let x = tape.reshape(images, &[b, c, g, p, g, p])?;
        let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
        tape.reshape(x, &[b, g * g, c * p * p])
    }

    /// Affine projection of flattened patches to the embedding width.
    pub fn embed_patches(&self, tape: &Tape, p: &Bound, patches: Var) -> Result<Var> {
        self.patch_embed.forward(tape, p, patches)
    }

    /// Prepends the class token and adds the positional table (`B×T×D`).
    pub fn add_positional(&self, tape: &Tape, p: &Bound, embeddings: Var) -> Result<Var> {
        let s = tape.shape(embeddings);
        let d = self.config.embed_dim;
        if s.len() != 3 || s[1] != self.config.num_patches() || s[2] != d {
            return Err(Error::Config(format!(
                "expected {} patch embeddings of width {d}, got shape {s:?}",
                self.config.num_patches()
            )));
        }
        let zeros = tape.constant(Tensor::zeros(&[s[0], 1, d]));
        let cls = tape.add(zeros, p[self.cls_token])?;
        let seq = tape.concat(&[cls, embeddings], 1)?;
        tape.add(seq, p[self.pos_embed])
    }

    /// Multi-head self-attention of block `block` over `x` (`T×D` or
    /// `B×T×D`). Returns the output (same shape as `x`) and the attention
    /// weights `(B·h)×T×T`.
    pub fn multi_head_attention(&self, tape: &Tape, p: &Bound, block: usize, x: Var) -> Result<(Var, Var)> {
        let attn = &self.blocks[block].attn;
        let s = tape.shape(x);
        let (x3, single) = match s.len() {
            2 => (tape.reshape(x, &[1, s[0], s[1]])?, true),
            3 => (x, false),
            _ => return Err(dim_err("multi_head_attention", &s, &[self.config.embed_dim])),
        };
        let s3 = tape.shape(x3);
        let (b, t, d) = (s3[0], s3[1], s3[2]);
        let h = self.config.num_heads;
        if d != self.config.embed_dim || d % h != 0 {
            return Err(Error::Config(format!("embed width {d} is not divisible into {h} heads")));
        }
        let hd = d / h;
        let split = |v: Var, axes: &[usize], shape: &[usize]| -> Result<Var> {
            let v = tape.reshape(v, &[b, t, h, hd])?;
            let v = tape.permute(v, axes)?;
            tape.reshape(v, shape)
        };
        let q = split(attn.q.forward(tape, p, x3)?, &[0, 2, 1, 3], &[b * h, t, hd])?;
        let k_t = split(attn.k.forward(tape, p, x3)?, &[0, 2, 3, 1], &[b * h, hd, t])?;
        let v = split(attn.v.forward(tape, p, x3)?, &[0, 2, 1, 3], &[b * h, t, hd])?;
        let scores = tape.matmul(q, k_t)?;
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let weights = tape.softmax(scores, 2)?;
        let heads = tape.matmul(weights, v)?;
        let heads = tape.reshape(heads, &[b, h, t, hd])?;
        let heads = tape.permute(heads, &[0, 2, 1, 3])?;
        let merged = tape.reshape(heads, &[b, t, d])?;
        let out = attn.o.forward(tape, p, merged)?;
        let out = if single { tape.reshape(out, &[t, d])? } else { out };
        Ok((out, weights))
    }

    fn mlp(&self, tape: &Tape, p: &Bound, block: usize, x: Var) -> Result<Var> {
        let blk = &self.blocks[block];
        let hidden = blk.fc1.forward(tape, p, x)?;
        let hidden = tape.gelu(hidden)?;
        blk.fc2.forward(tape, p, hidden)
    }

    /// Pre-norm encoder stack followed by the final norm. Returns the
    /// encoded sequence and each block's attention weights.
    pub fn encode(
        &self,
        tape: &Tape,
        p: &Bound,
        seq: Var,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut x = seq;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (i, blk) in self.blocks.iter().enumerate() {
            let normed = blk.norm1.forward(tape, p, x)?;
            let (attn_out, weights) = self.multi_head_attention(tape, p, i, normed)?;
            attention.push(weights);
            let attn_out = self.maybe_dropout(tape, attn_out, dropout_rng.as_deref_mut())?;
            x = tape.add(x, attn_out)?;
            let normed = blk.norm2.forward(tape, p, x)?;
            let mlp_out = self.mlp(tape, p, i, normed)?;
            let mlp_out = self.maybe_dropout(tape, mlp_out, dropout_rng.as_deref_mut())?;
            x = tape.add(x, mlp_out)?;
        }
        Ok((self.norm.forward(tape, p, x)?, attention))
    }

    fn maybe_dropout(&self, tape: &Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(rng) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, rng),
            _ => Ok(x),
        }
    }

    /// Full forward pass. Dropout is active only when an rng is supplied.
    pub fn trace(&self, tape: &Tape, p: &Bound, images: Var, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<ForwardTrace> {
        let patches = self.patchify(tape, images)?;
        let emb = self.embed_patches(tape, p, patches)?;
        let seq = self.add_positional(tape, p, emb)?;
        let (encoded, attention) = self.encode(tape, p, seq, dropout_rng)?;
        let b = tape.shape(encoded)[0];
        let cls = tape.narrow(encoded, 1, 0, 1)?;
        let features = tape.reshape(cls, &[b, self.config.embed_dim])?;
        let logits = self.head.forward(tape, p, features)?;
        Ok(ForwardTrace {
            logits,
            features,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ViTConfig {
        ViTConfig {
            image_size: 4,
            channels: 1,
            patch_size: 2,
            embed_dim: 4,
            num_heads: 2,
            num_layers: 1,
            mlp_ratio: 2.0,
            num_classes: 3,
            dropout: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ViTConfig::default().validate().is_ok());
        let bad = ViTConfig {
            patch_size: 5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ViTConfig {
            num_heads: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ViTConfig::default().seq_len(), 17);
        assert_eq!(ViTConfig::default().mlp_hidden(), 128);
    }

    #[test]
    fn partition_small_image() {
        let img = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let patches = partition_and_flatten(&img, 2).unwrap();
        assert_eq!(patches.shape(), &[4, 4]);
        assert_eq!(&patches.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&patches.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(unpartition(&patches, 1, 4, 4, 2).unwrap(), img);
    }

    #[test]
    fn partition_degenerate_grid() {
        let img = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        let patches = partition_and_flatten(&img, 2).unwrap();
        assert_eq!(patches.shape(), &[1, 12]);
        assert_eq!(patches.data(), img.data());
    }

    #[test]
    fn partition_rejects_indivisible() {
        let err = partition_and_flatten(&Tensor::zeros(&[1, 6, 4]), 4).unwrap_err();
        assert!(err.to_string().contains("6x4"), "{err}");
    }

    #[test]
    fn tape_patchify_matches_direct_partition() {
        let model = ViTClassifier::new(tiny(), 0).unwrap();
        let img = Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64).sqrt());
        let tape = Tape::new();
        let x = tape.constant(img.clone());
        let patches = model.patchify(&tape, x).unwrap();
        let direct = partition_and_flatten(&img.reshape(&[1, 4, 4]).unwrap(), 2).unwrap();
        assert_eq!(tape.value(patches).data(), direct.data());
    }

    #[test]
    fn parameter_names_are_deterministic() {
        let a = ViTClassifier::new(ViTConfig::default(), 1).unwrap();
        let b = ViTClassifier::new(ViTConfig::default(), 2).unwrap();
        assert_eq!(a.params().names(), b.params().names());
        assert!(a.params().by_name("encoder.0.attn.wq").is_some());
        assert!(a.params().by_name("encoder.1.mlp.w2").is_some());
    }

    #[test]
    fn head_replacement_changes_width() {
        let mut model = ViTClassifier::new(ViTConfig { num_classes: 10, ..tiny() }, 0).unwrap();
        model.replace_head(3, 9).unwrap();
        let tape = Tape::new();
        let p = model.params().bind(&tape);
        let x = tape.constant(Tensor::zeros(&[2, 1, 4, 4]));
        let trace = model.trace(&tape, &p, x, None).unwrap();
        assert_eq!(tape.shape(trace.logits), vec![2, 3]);
    }
}
