//! Seeded generators of class-dependent textures used in place of real
//! medical image collections.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::batch::Dataset;
use super::image::encode_pnm;
use super::manifest::{DatasetManifest, Entry};
use super::preprocess::PreprocessSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    /// Sinusoidal gratings; the class fixes the orientation.
    Stripes,
    /// A bright Gaussian blob; the class fixes its position on a circle
    /// around the image center.
    Blobs,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Stripes => "stripes",
            Pattern::Blobs => "blobs",
        })
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(Pattern::Stripes),
            "blobs" => Ok(Pattern::Blobs),
            other => Err(Error::Config(format!("unknown synthetic pattern {other:?} (expected stripes or blobs)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub pattern: Pattern,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Rotates every class orientation (stripes) or position (blobs) by
    /// this many degrees, giving families disjoint from the unrotated one.
    pub angle_offset: f64,
    /// Degrees the classes are spread over: class `c` sits at
    /// `offset + c·span/C`. `None` means the full period (180 for stripes,
    /// 360 for blobs).
    pub angle_span: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            pattern: Pattern::Stripes,
            num_classes: 3,
            samples_per_class: 20,
            image_size: 32,
            channels: 3,
            noise: 0.1,
            angle_offset: 0.0,
            angle_span: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 || self.image_size < 2 {
            return Err(Error::Config("synthetic datasets need classes, samples and images of at least 2 px".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("synthetic images have 1 or 3 channels, not {}", self.channels)));
        }
        if self.angle_span.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("angle span must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("{}{c}", self.pattern)).collect()
    }

    fn class_angle(&self, class: usize) -> f64 {
        let span = self.angle_span.unwrap_or(match self.pattern {
            Pattern::Stripes => 180.0,
            Pattern::Blobs => 360.0,
        });
        (self.angle_offset + class as f64 * span / self.num_classes as f64).to_radians()
    }
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = spec.image_size;
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).unwrap();
    let gains: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.6..1.0)).collect();
    let angle = spec.class_angle(class) + rng.random_range(-0.05..0.05);
    let field: Box<dyn Fn(f64, f64) -> f64> = match spec.pattern {
        Pattern::Stripes => {
            let freq = rng.random_range(0.12..0.22);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, sn) = (angle.cos(), angle.sin());
            Box::new(move |x, y| 0.5 + 0.35 * (std::f64::consts::TAU * freq * (x * c + y * sn) + phase).sin())
        }
        Pattern::Blobs => {
            let radius = s as f64 * rng.random_range(0.22..0.3);
            let (cx, cy) = (
                s as f64 / 2.0 + radius * angle.cos() + rng.random_range(-1.0..1.0),
                s as f64 / 2.0 + radius * angle.sin() + rng.random_range(-1.0..1.0),
            );
            let sigma = s as f64 * rng.random_range(0.08..0.12);
            Box::new(move |x, y| {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                0.2 + 0.7 * (-d2 / (2.0 * sigma * sigma)).exp()
            })
        }
    };
    let mut img = Tensor::zeros(&[spec.channels, s, s]);
    let data = img.data_mut();
    for y in 0..s {
        for x in 0..s {
            let base = field(x as f64, y as f64);
            for (ch, g) in gains.iter().enumerate() {
                let v = base * g + noise.sample(rng) * (spec.noise > 0.0) as u8 as f64;
                // store on the 8-bit grid so files and memory agree exactly
                data[ch * s * s + y * s + x] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    img
}

/// Images in `[0, 1]` with their labels, classes interleaved
/// (0, 1, .., C−1, 0, 1, ..).
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<(Tensor, usize)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for _ in 0..spec.samples_per_class {
        for class in 0..spec.num_classes {
            out.push((render(spec, class, &mut rng), class));
        }
    }
    Ok(out)
}

/// In-memory dataset, preprocessed exactly as [`Dataset::load`] would after
/// [`write_synthetic`].
pub fn generate_dataset(spec: &SyntheticSpec, pre: &PreprocessSpec) -> Result<Dataset> {
    let (images, labels): (Vec<Tensor>, Vec<usize>) = generate(spec)?
        .into_iter()
        .map(|(img, l)| Ok((pre.apply(&img)?, l)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Dataset::new(spec.name.clone(), spec.class_names(), images, labels)
}

/// Writes `images/NNNNN.ppm` (or `.pgm`) and `manifest.txt` under `dir` and
/// returns the manifest.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    let samples = generate(spec)?;
    std::fs::create_dir_all(dir.join("images"))?;
    let ext = if spec.channels == 1 { "pgm" } else { "ppm" };
    let mut entries = Vec::with_capacity(samples.len());
    for (i, (img, label)) in samples.iter().enumerate() {
        let rel = PathBuf::from(format!("images/{i:05}.{ext}"));
        std::fs::write(dir.join(&rel), encode_pnm(img)?)?;
        entries.push(Entry { path: rel, label: *label });
    }
    let mut manifest = DatasetManifest::new(spec.name.clone(), spec.class_names(), entries)?;
    manifest.source_note = format!(
        "synthetic {} classes={} per_class={} size={} channels={} noise={} offset={} span={} seed={}",
        spec.pattern,
        spec.num_classes,
        spec.samples_per_class,
        spec.image_size,
        spec.channels,
        spec.noise,
        spec.angle_offset,
        spec.angle_span.map_or("full".to_string(), |s| s.to_string()),
        spec.seed
    );
    manifest.root = dir.to_path_buf();
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let spec = SyntheticSpec {
            samples_per_class: 2,
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn values_on_8bit_grid_in_unit_range() {
        let spec = SyntheticSpec {
            pattern: Pattern::Blobs,
            samples_per_class: 1,
            noise: 0.3,
            ..Default::default()
        };
        for (img, _) in generate(&spec).unwrap() {
            assert_eq!(img.shape(), &[3, 32, 32]);
            for &v in img.data() {
                assert!((0.0..=1.0).contains(&v));
                assert_eq!((v * 255.0).round() / 255.0, v);
            }
        }
    }

    #[test]
    fn labels_interleave() {
        let spec = SyntheticSpec {
            num_classes: 4,
            samples_per_class: 2,
            ..Default::default()
        };
        let labels: Vec<usize> = generate(&spec).unwrap().into_iter().map(|(_, l)| l).collect();
        assert_eq!(labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn pattern_names() {
        assert_eq!("blobs".parse::<Pattern>().unwrap(), Pattern::Blobs);
        assert!("noise".parse::<Pattern>().is_err());
    }
}
