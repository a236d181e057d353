pub mod cnn;
pub mod vit;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax, GradcheckReport, GradcheckSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::tensor::Tensor;

pub use cnn::{CnnConfig, CnnKind, CnnModel};
pub use vit::{ViTClassifier, ViTConfig};

/// Every model family the toolkit can build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Vit,
    Cnn(CnnKind),
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Vit,
        ModelKind::Cnn(CnnKind::VggMini),
        ModelKind::Cnn(CnnKind::ResnetMini),
        ModelKind::Cnn(CnnKind::MobilenetMini),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vit => "vit",
            ModelKind::Cnn(k) => k.as_str(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit" | "transformer" => Ok(ModelKind::Vit),
            other => other
                .parse::<CnnKind>()
                .map(ModelKind::Cnn)
                .map_err(|_| Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Vit(ViTConfig),
    Cnn(CnnConfig),
}

impl ModelConfig {
    /// Default configuration of `kind` for the given input and class count.
    pub fn for_kind(kind: ModelKind, image_size: usize, channels: usize, num_classes: usize) -> Self {
        match kind {
            ModelKind::Vit => ModelConfig::Vit(ViTConfig {
                image_size,
                channels,
                num_classes,
                ..ViTConfig::default()
            }),
            ModelKind::Cnn(k) => ModelConfig::Cnn(CnnConfig {
                image_size,
                channels,
                num_classes,
                ..CnnConfig::new(k)
            }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Vit(_) => ModelKind::Vit,
            ModelConfig::Cnn(c) => ModelKind::Cnn(c.kind),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.num_classes,
            ModelConfig::Cnn(c) => c.num_classes,
        }
    }

    /// Small configurations used by the finite-difference gradient suite:
    /// the desk ViT (17 tokens, width 64, 4 heads, 2 layers) and 8×8 CNNs.
    pub fn gradcheck(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Vit => ModelConfig::for_kind(kind, 32, 3, 3),
            ModelKind::Cnn(k) => ModelConfig::Cnn(CnnConfig {
                stage_widths: vec![4, 8],
                blocks_per_stage: 1,
                image_size: 8,
                num_classes: 3,
                ..CnnConfig::new(k)
            }),
        }
    }

    /// `(channels, height, width)` of accepted images.
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ModelConfig::Vit(c) => [c.channels, c.image_size, c.image_size],
            ModelConfig::Cnn(c) => [c.channels, c.image_size, c.image_size],
        }
    }
}

/// A classifier of any supported family.
#[derive(Clone, Debug)]
pub enum Model {
    Vit(ViTClassifier),
    Cnn(CnnModel),
}

/// Logits plus the backbone features feeding the head.
pub struct Output {
    pub logits: Var,
    pub features: Var,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Vit(c) => Model::Vit(ViTClassifier::new(c, seed)?),
            ModelConfig::Cnn(c) => Model::Cnn(CnnModel::new(c, seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Vit(m) => ModelConfig::Vit(m.config().clone()),
            Model::Cnn(m) => ModelConfig::Cnn(m.config().clone()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }

    pub fn num_classes(&self) -> usize {
        self.config().num_classes()
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Vit(m) => m.params(),
            Model::Cnn(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Vit(m) => m.params_mut(),
            Model::Cnn(m) => m.params_mut(),
        }
    }

    pub fn head_names(&self) -> Vec<String> {
        match self {
            Model::Vit(m) => m.head_names(),
            Model::Cnn(m) => m.head_names(),
        }
    }

    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        match self {
            Model::Vit(m) => m.replace_head(num_classes, seed),
            Model::Cnn(m) => m.replace_head(num_classes, seed),
        }
    }

    /// Forward pass on a `B×C×H×W` batch. Dropout (ViT only) is applied
    /// when `dropout_rng` is given.
    pub fn forward(&self, tape: &Tape, p: &Bound, images: Var, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Output> {
        match self {
            Model::Vit(m) => {
                let t = m.trace(tape, p, images, dropout_rng)?;
                Ok(Output {
                    logits: t.logits,
                    features: t.features,
                })
            }
            Model::Cnn(m) => {
                let (logits, features) = m.forward(tape, p, images)?;
                Ok(Output { logits, features })
            }
        }
    }

    /// Mean cross-entropy of a batch, recorded on `tape`.
    pub fn loss(&self, tape: &Tape, p: &Bound, images: &Tensor, labels: &[usize]) -> Result<Var> {
        let x = tape.constant(images.clone());
        let out = self.forward(tape, p, x, None)?;
        tape.cross_entropy(out.logits, labels)
    }

    /// Finite-difference check of the batch cross-entropy with respect to
    /// every parameter. Returns the report and the worst parameter's name.
    pub fn gradcheck(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        spec: &GradcheckSpec,
    ) -> Result<(GradcheckReport, Option<String>)> {
        let shadow = self.clone();
        self.params_mut()
            .gradcheck(|tape, p| shadow.loss(tape, p, images, labels), spec)
    }

    /// Logits for a batch of images without recording gradients.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params().bind_constant(&tape);
        let x = tape.constant(images.clone());
        let out = self.forward(&tape, &p, x, None)?;
        Ok((*tape.value(out.logits)).clone())
    }

    /// Class probabilities and predicted label (ties to the lowest index)
    /// for one `C×H×W` image.
    pub fn classify(&self, image: &Tensor) -> Result<(Vec<f64>, usize)> {
        let expected = self.config().input_shape();
        if image.shape() != expected {
            return Err(Error::Config(format!(
                "image shape {:?} does not match model input {expected:?}",
                image.shape()
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let logits = self.logits(&image.reshape(&shape)?)?;
        let probs = softmax(logits.data());
        let label = Tensor::argmax(&probs);
        Ok((probs, label))
    }
}

/// Gradient check of the standard small configuration of `kind` on a seeded
/// two-image batch. `max_entries` bounds the probes per parameter tensor.
/// Parameters are jittered first so zero-initialized biases cannot park a
/// ReLU exactly on its kink.
pub fn gradcheck_kind(
    kind: ModelKind,
    seed: u64,
    max_entries: Option<usize>,
) -> Result<(GradcheckReport, Option<String>)> {
    let config = ModelConfig::gradcheck(kind);
    let [c, h, w] = config.input_shape();
    let mut model = Model::build(config, seed)?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed.wrapping_add(1));
    let images = Tensor::randn(&[2, c, h, w], 1.0, &mut rng);
    for p in model.params_mut().iter_mut() {
        let noise = Tensor::randn(p.value.shape(), 0.05, &mut rng);
        p.value.add_assign(&noise)?;
    }
    let spec = GradcheckSpec {
        max_entries_per_tensor: max_entries,
        seed,
        ..Default::default()
    };
    model.gradcheck(&images, &[0, 2], &spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_strings() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("alexnet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_json_tags_family() {
        let cfg = ModelConfig::for_kind(ModelKind::Cnn(CnnKind::ResnetMini), 32, 3, 4);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"family\":\"cnn\""), "{json}");
        assert!(json.contains("resnet-mini"), "{json}");
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
