//! Miniature convolutional baselines: a plain VGG-style stack, a residual
//! network and a depthwise-separable (MobileNet-style) network.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::nn::{Bound, Conv, Linear, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnnKind {
    VggMini,
    ResnetMini,
    MobilenetMini,
}

impl CnnKind {
    pub const ALL: [CnnKind; 3] = [CnnKind::VggMini, CnnKind::ResnetMini, CnnKind::MobilenetMini];

    pub fn as_str(self) -> &'static str {
        match self {
            CnnKind::VggMini => "vgg-mini",
            CnnKind::ResnetMini => "resnet-mini",
            CnnKind::MobilenetMini => "mobilenet-mini",
        }
    }
}

impl fmt::Display for CnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CnnKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown CNN kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub kind: CnnKind,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub channels: usize,
}

impl CnnConfig {
    pub fn new(kind: CnnKind) -> Self {
        Self {
            kind,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            num_classes: 3,
            image_size: 32,
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config(format!("stage widths {:?} must be positive", self.stage_widths)));
        }
        if self.blocks_per_stage == 0 || self.num_classes == 0 || self.channels == 0 || self.image_size == 0 {
            return Err(Error::Config("blocks, classes, channels and image size must be at least 1".into()));
        }
        let factor = 1usize << self.stage_widths.len();
        if self.image_size % factor != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by {factor} for {} stages",
                self.image_size,
                self.stage_widths.len()
            )));
        }
        Ok(())
    }

    /// Spatial extent after all downsampling stages.
    pub fn final_extent(&self) -> usize {
        self.image_size >> self.stage_widths.len()
    }
}

/// `y = relu(conv2(relu(conv1(x))) + shortcut(x))`, where the shortcut is
/// the identity or a strided 1×1 projection.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub shortcut: Option<Conv>,
}

impl ResidualBlock {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, p, h)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(tape, p, x)?,
            None => x,
        };
        let (hs, ss) = (tape.shape(h), tape.shape(skip));
        if hs != ss {
            return Err(dim_err("residual_block", &hs, &ss));
        }
        let y = tape.add(h, skip)?;
        tape.relu(y)
    }
}

/// `y = relu(pointwise(relu(depthwise(x))))`.
#[derive(Clone, Copy, Debug)]
pub struct SeparableBlock {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

impl SeparableBlock {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let cin = tape.shape(x).get(1).copied().unwrap_or(0);
        if cin != self.depthwise.groups {
            return Err(dim_err("depthwise_separable", &tape.shape(x), &[self.depthwise.groups]));
        }
        let h = self.depthwise.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.pointwise.forward(tape, p, h)?;
        tape.relu(h)
    }
}

#[derive(Clone, Debug)]
enum Stage {
    Vgg(Vec<Conv>),
    Residual(Vec<ResidualBlock>),
    Separable(Vec<SeparableBlock>),
}

#[derive(Clone, Debug)]
pub struct CnnModel {
    config: CnnConfig,
    params: ParamStore,
    stem: Option<Conv>,
    stages: Vec<Stage>,
    head: Linear,
    head_in: usize,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    /// He-normal initialized convolution with zero bias.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> Result<Conv> {
        let fan_in = (cin / groups) * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        Ok(Conv {
            weight: self.store.add(
                format!("{name}.weight"),
                Tensor::randn(&[cout, cin / groups, k, k], std, &mut self.rng),
            )?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            stride,
            padding: k / 2,
            groups,
        })
    }
}

/// Standard deviation of a head swapped in for fine-tuning.
const REPLACED_HEAD_STD: f64 = 0.02;

fn head_init(inputs: usize, classes: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[inputs, classes], (1.0 / inputs as f64).sqrt(), rng)
}

impl CnnModel {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let widths = config.stage_widths.clone();
        let mut stem = None;
        let mut stages = Vec::with_capacity(widths.len());
        let mut cin = config.channels;
        if config.kind != CnnKind::VggMini {
            stem = Some(b.conv("stem", cin, widths[0], 3, 1, 1)?);
            cin = widths[0];
        }
        for (s, &width) in widths.iter().enumerate() {
            let stage = match config.kind {
                CnnKind::VggMini => {
                    let mut convs = Vec::new();
                    for i in 0..config.blocks_per_stage {
                        convs.push(b.conv(&format!("stages.{s}.{i}.conv"), cin, width, 3, 1, 1)?);
                        cin = width;
                    }
                    Stage::Vgg(convs)
                }
                CnnKind::ResnetMini => {
                    let mut blocks = Vec::new();
                    for i in 0..config.blocks_per_stage {
                        let stride = if i == 0 { 2 } else { 1 };
                        let prefix = format!("stages.{s}.{i}");
                        let shortcut = if stride != 1 || cin != width {
                            Some(b.conv(&format!("{prefix}.shortcut"), cin, width, 1, stride, 1)?)
                        } else {
                            None
                        };
                        blocks.push(ResidualBlock {
                            conv1: b.conv(&format!("{prefix}.conv1"), cin, width, 3, stride, 1)?,
                            conv2: b.conv(&format!("{prefix}.conv2"), width, width, 3, 1, 1)?,
                            shortcut,
                        });
                        cin = width;
                    }
                    Stage::Residual(blocks)
                }
                CnnKind::MobilenetMini => {
                    let mut blocks = Vec::new();
                    for i in 0..config.blocks_per_stage {
                        let stride = if i == 0 { 2 } else { 1 };
                        let prefix = format!("stages.{s}.{i}");
                        blocks.push(SeparableBlock {
                            depthwise: b.conv(&format!("{prefix}.depthwise"), cin, cin, 3, stride, cin)?,
                            pointwise: b.conv(&format!("{prefix}.pointwise"), cin, width, 1, 1, 1)?,
                        });
                        cin = width;
                    }
                    Stage::Separable(blocks)
                }
            };
            stages.push(stage);
        }
        let head_in = match config.kind {
            CnnKind::VggMini => cin * config.final_extent().pow(2),
            _ => cin,
        };
        let head = Linear {
            weight: b.store.add("head.weight", head_init(head_in, config.num_classes, &mut b.rng))?,
            bias: b.store.add("head.bias", Tensor::zeros(&[config.num_classes]))?,
        };
        Ok(Self {
            config,
            params: store,
            stem,
            stages,
            head,
            head_in,
        })
    }

    pub fn config(&self) -> &CnnConfig {
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

    pub fn replace_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params
            .replace(self.head.weight, Tensor::randn(&[self.head_in, num_classes], REPLACED_HEAD_STD, &mut rng));
        self.params.replace(self.head.bias, Tensor::zeros(&[num_classes]));
        self.config.num_classes = num_classes;
        Ok(())
    }

    pub fn residual_blocks(&self) -> Vec<ResidualBlock> {
        self.stages
            .iter()
            .flat_map(|s| match s {
                Stage::Residual(blocks) => blocks.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn separable_blocks(&self) -> Vec<SeparableBlock> {
        self.stages
            .iter()
            .flat_map(|s| match s {
                Stage::Separable(blocks) => blocks.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// Backbone output flattened to `B×head_in`.
    pub fn features(&self, tape: &Tape, p: &Bound, images: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(images);
        let expected = [cfg.channels, cfg.image_size, cfg.image_size];
        if s.len() != 4 || s[1..] != expected {
            return Err(Error::Config(format!(
                "image batch shape {s:?} does not match configured {expected:?}"
            )));
        }
        let batch = s[0];
        let mut x = images;
        if let Some(stem) = &self.stem {
            x = stem.forward(tape, p, x)?;
            x = tape.relu(x)?;
        }
        for stage in &self.stages {
            match stage {
                Stage::Vgg(convs) => {
                    for conv in convs {
                        x = conv.forward(tape, p, x)?;
                        x = tape.relu(x)?;
                    }
                    x = tape.max_pool2d(x, 2)?;
                }
                Stage::Residual(blocks) => {
                    for blk in blocks {
                        x = blk.forward(tape, p, x)?;
                    }
                }
                Stage::Separable(blocks) => {
                    for blk in blocks {
                        x = blk.forward(tape, p, x)?;
                    }
                }
            }
        }
        match cfg.kind {
            CnnKind::VggMini => tape.reshape(x, &[batch, self.head_in]),
            _ => tape.mean_axes(x, &[2, 3]),
        }
    }

    /// Returns `(logits, features)`.
    pub fn forward(&self, tape: &Tape, p: &Bound, images: Var) -> Result<(Var, Var)> {
        let f = self.features(tape, p, images)?;
        Ok((self.head.forward(tape, p, f)?, f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips_through_strings() {
        for kind in CnnKind::ALL {
            assert_eq!(kind.as_str().parse::<CnnKind>().unwrap(), kind);
        }
        assert!(matches!("alexnet".parse::<CnnKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn stride_schedule_validated() {
        let cfg = CnnConfig {
            image_size: 12,
            ..CnnConfig::new(CnnKind::VggMini)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mobilenet_output_channels_follow_pointwise() {
        let cfg = CnnConfig {
            stage_widths: vec![5],
            blocks_per_stage: 1,
            image_size: 8,
            ..CnnConfig::new(CnnKind::MobilenetMini)
        };
        let model = CnnModel::new(cfg, 0).unwrap();
        let tape = Tape::new();
        let p = model.params().bind_constant(&tape);
        let x = tape.constant(Tensor::ones(&[1, 5, 8, 8]));
        let blk = model.separable_blocks()[0];
        let y = blk.forward(&tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), vec![1, 5, 4, 4]);
    }
}
