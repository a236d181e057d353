//! Command-line front end. Settings resolve as flag, then config file, then
//! built-in default.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_manifest, split_dataset, write_synthetic, AugmentOp, Dataset, DatasetManifest, Pattern, PreprocessSpec,
    SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::models::{gradcheck_kind, Model, ModelConfig, ModelKind};
use crate::train::{
    emit_comparison, evaluate, fine_tune, pretrain, render_summary, train, Checkpoint, MetricsRecord, Phase,
    TrainConfig,
};
pub use config::ConfigFile;

/// Gradient checks at or above this relative error fail.
pub const GRADCHECK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "oncovit", version, about = "Train and compare vision-transformer and CNN image classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file of `key = value` lines under [run], [train], [model], [split] and [data] headers
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training epochs [default: 10]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 75]
    #[arg(long = "batch-size", global = true)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Model kind: vit, vgg-mini, resnet-mini or mobilenet-mini [default: vit]
    #[arg(long)]
    pub model: Option<String>,
    /// Square input size images are resized to [default: 32]
    #[arg(long = "image-size")]
    pub image_size: Option<usize>,
    /// Comma-separated augmentations: crop[:PAD], flip, rotate, none [default: none]
    #[arg(long)]
    pub augment: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic image dataset and its manifest under --out
    GenSynthetic {
        /// stripes or blobs
        #[arg(long, default_value = "stripes")]
        pattern: String,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 20)]
        per_class: usize,
        #[arg(long = "image-size", default_value_t = 32)]
        image_size: usize,
        /// 1 (PGM) or 3 (PPM)
        #[arg(long, default_value_t = 3)]
        channels: usize,
        /// Standard deviation of pixel noise
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Degrees added to every class orientation or position
        #[arg(long = "angle-offset", default_value_t = 0.0)]
        angle_offset: f64,
        /// Degrees the classes are spread over [default: full period]
        #[arg(long = "angle-span")]
        angle_span: Option<f64>,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Split a manifest into train.txt, val.txt and test.txt under --out
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// train,val,test fractions [default: 0.8,0.1,0.1]
        #[arg(long)]
        ratios: Option<String>,
        /// Shuffle globally instead of per class
        #[arg(long = "no-stratify")]
        no_stratify: bool,
    },
    /// Finite-difference gradient check of a small model of the given kind
    Gradcheck {
        /// Model kind: vit, vgg-mini, resnet-mini or mobilenet-mini
        #[arg(long, default_value = "vit")]
        model: String,
        /// Probe at most this many entries per parameter tensor [default: 24 for vit, all for CNNs]
        #[arg(long = "max-entries")]
        max_entries: Option<usize>,
    },
    /// Train from random init on a source task and write pretrained.ovck
    Pretrain {
        #[command(flatten)]
        train: TrainArgs,
        /// Training manifest
        #[arg(long = "train")]
        train_manifest: Option<PathBuf>,
        /// Validation manifest
        #[arg(long = "val")]
        val_manifest: Option<PathBuf>,
    },
    /// Replace the head of a checkpoint, train on a target task and write finetuned.ovck
    Finetune {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "train")]
        train_manifest: Option<PathBuf>,
        #[arg(long = "val")]
        val_manifest: Option<PathBuf>,
        /// Update only the new head
        #[arg(long = "freeze-backbone")]
        freeze_backbone: bool,
    },
    /// Report accuracy, loss and the confusion matrix of a checkpoint on a manifest
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train every model on every dataset and write comparison.csv and summary.txt
    Compare {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated model kinds [default: vit,vgg-mini,resnet-mini,mobilenet-mini]
        #[arg(long)]
        models: Option<String>,
        /// Comma-separated manifests; when absent, stripes and blobs datasets are generated
        #[arg(long)]
        datasets: Option<String>,
        /// Samples per class for generated datasets
        #[arg(long = "per-class", default_value_t = 40)]
        per_class: usize,
        /// Run grid cells on separate threads; output is unchanged
        #[arg(long)]
        parallel: bool,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 runtime error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Global settings after merging flags with the config file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl RunConfig {
    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let file = match &global.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let seed = pick(global.seed, file.get("run", "seed")?, 0);
        let out = pick(global.out.clone(), file.get("run", "out")?, PathBuf::from("out"));
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: pick(global.epochs, file.get("train", "epochs")?, defaults.epochs),
            batch_size: pick(global.batch_size, file.get("train", "batch_size")?, defaults.batch_size),
            lr: pick(global.lr, file.get("train", "lr")?, defaults.lr),
            seed,
            freeze_backbone: file.get("train", "freeze_backbone")?.unwrap_or(false),
            augment: match file.raw("train", "augment") {
                Some(s) => parse_augment(s)?,
                None => Vec::new(),
            },
            strict: file.get("train", "strict")?.unwrap_or(false),
        };
        train.validate()?;
        let mut split = SplitSpec { seed, ..Default::default() };
        if let Some(r) = file.raw("split", "ratios") {
            split.ratios = parse_ratios(r)?;
        }
        if let Some(s) = file.get("split", "stratified")? {
            split.stratified = s;
        }
        Ok(Self {
            file,
            seed,
            out,
            train,
            split,
        })
    }

    fn data_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        flag.or_else(|| self.file.raw("data", key).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no {key} path given (use --{key} or [data] {key})")))
    }

    fn model_kind(&self, flag: Option<&str>) -> Result<ModelKind> {
        flag.or(self.file.raw("model", "kind")).unwrap_or("vit").parse()
    }

    fn image_size(&self, flag: Option<usize>) -> Result<usize> {
        Ok(pick(flag, self.file.get("model", "image_size")?, 32))
    }

    /// Model configuration with `[model]` overrides applied.
    pub fn model_config(&self, kind: ModelKind, image_size: usize, channels: usize, classes: usize) -> Result<ModelConfig> {
        let f = &self.file;
        let mut cfg = ModelConfig::for_kind(kind, image_size, channels, classes);
        match &mut cfg {
            ModelConfig::Vit(v) => {
                v.patch_size = f.get("model", "patch_size")?.unwrap_or(v.patch_size);
                v.embed_dim = f.get("model", "embed_dim")?.unwrap_or(v.embed_dim);
                v.num_heads = f.get("model", "num_heads")?.unwrap_or(v.num_heads);
                v.num_layers = f.get("model", "num_layers")?.unwrap_or(v.num_layers);
                v.mlp_ratio = f.get("model", "mlp_ratio")?.unwrap_or(v.mlp_ratio);
                v.dropout = f.get("model", "dropout")?.unwrap_or(v.dropout);
                v.validate()?;
            }
            ModelConfig::Cnn(c) => {
                c.stage_widths = f.get_list("model", "stage_widths")?.unwrap_or(c.stage_widths.clone());
                c.blocks_per_stage = f.get("model", "blocks_per_stage")?.unwrap_or(c.blocks_per_stage);
                c.validate()?;
            }
        }
        Ok(cfg)
    }

    fn train_config(&self, args: &TrainArgs) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        if let Some(a) = &args.augment {
            t.augment = parse_augment(a)?;
        }
        Ok(t)
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// `crop[:PAD]`, `flip`, `rotate` or `none`, comma-separated.
pub fn parse_augment(spec: &str) -> Result<Vec<AugmentOp>> {
    let mut ops = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, arg) = item.split_once(':').map_or((item, None), |(n, a)| (n, Some(a)));
        ops.push(match (name, arg) {
            ("none", None) => continue,
            ("crop", None) => AugmentOp::RandomCrop { pad: 4 },
            ("crop", Some(p)) => AugmentOp::RandomCrop {
                pad: p
                    .parse()
                    .map_err(|_| Error::Config(format!("bad crop padding {p:?}")))?,
            },
            ("flip", None) => AugmentOp::HorizontalFlip { p: 0.5 },
            ("rotate", None) => AugmentOp::RandomRotation,
            _ => return Err(Error::Config(format!("unknown augmentation {item:?}"))),
        });
    }
    Ok(ops)
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad ratios {s:?}")))?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config(format!("expected three ratios, got {s:?}"))),
    }
}

fn load_dataset(path: &Path, size: usize) -> Result<Dataset> {
    let manifest = load_manifest(path)?;
    Dataset::load(&manifest, &PreprocessSpec { size, ..Default::default() })
}

fn channels_of(data: &Dataset) -> Result<usize> {
    data.image_shape()
        .map(|s| s[0])
        .ok_or_else(|| Error::Empty(format!("dataset {:?} has no images", data.name)))
}

fn write_history(history: &[MetricsRecord], path: &Path) -> Result<()> {
    emit_comparison(history, path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn final_line(history: &[MetricsRecord]) {
    if let Some(r) = history.iter().rev().find(|r| r.split == Phase::Val) {
        println!(
            "epoch {} val accuracy {:.2}% loss {:.4}",
            r.epoch,
            r.accuracy * 100.0,
            r.loss
        );
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let rc = RunConfig::resolve(&cli.global)?;
    match cli.command {
        Command::GenSynthetic {
            pattern,
            classes,
            per_class,
            image_size,
            channels,
            noise,
            angle_offset,
            angle_span,
            name,
        } => {
            let spec = SyntheticSpec {
                name,
                pattern: pattern.parse::<Pattern>()?,
                num_classes: classes,
                samples_per_class: per_class,
                image_size,
                channels,
                noise,
                angle_offset,
                angle_span,
                seed: rc.seed,
            };
            let m = write_synthetic(&spec, &rc.out)?;
            println!("wrote {} images to {}", m.len(), rc.out.join("manifest.txt").display());
        }
        Command::Split {
            manifest,
            ratios,
            no_stratify,
        } => {
            let path = rc.data_path(manifest, "manifest")?;
            let m = load_manifest(&path)?;
            let mut spec = rc.split.clone();
            if let Some(r) = ratios {
                spec.ratios = parse_ratios(&r)?;
            }
            if no_stratify {
                spec.stratified = false;
            }
            let split = split_dataset(&m, &spec)?;
            for w in &split.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::create_dir_all(&rc.out)?;
            for (part, file) in [(&split.train, "train.txt"), (&split.val, "val.txt"), (&split.test, "test.txt")] {
                part.rebased(&rc.out)?.save(&rc.out.join(file))?;
            }
            println!(
                "train={} val={} test={}",
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Gradcheck { model, max_entries } => {
            let kind: ModelKind = model.parse()?;
            let max_entries = max_entries.or((kind == ModelKind::Vit).then_some(24));
            let (report, worst) = gradcheck_kind(kind, rc.seed, max_entries)?;
            println!("model={kind} entries={}", report.entries_checked);
            if let Some(w) = worst {
                println!("worst={w}");
            }
            println!("max_rel_err={:e}", report.max_rel_err);
            if !(report.max_rel_err < GRADCHECK_THRESHOLD) {
                return Err(Error::Validation(format!(
                    "max relative error {:e} is not below {GRADCHECK_THRESHOLD:e}",
                    report.max_rel_err
                )));
            }
        }
        Command::Pretrain {
            train: args,
            train_manifest,
            val_manifest,
        } => {
            let size = rc.image_size(args.image_size)?;
            let train_set = load_dataset(&rc.data_path(train_manifest, "train")?, size)?;
            let val_set = load_dataset(&rc.data_path(val_manifest, "val")?, size)?;
            let kind = rc.model_kind(args.model.as_deref())?;
            let config = rc.model_config(kind, size, channels_of(&train_set)?, train_set.num_classes())?;
            let (ck, history) = pretrain(config, &train_set, &val_set, &rc.train_config(&args)?)?;
            std::fs::create_dir_all(&rc.out)?;
            final_line(&history);
            ck.save(&rc.out.join("pretrained.ovck"))?;
            println!("wrote {}", rc.out.join("pretrained.ovck").display());
            write_history(&history, &rc.out.join("pretrain_metrics.csv"))?;
        }
        Command::Finetune {
            train: args,
            checkpoint,
            train_manifest,
            val_manifest,
            freeze_backbone,
        } => {
            let ck = Checkpoint::load(&rc.data_path(checkpoint, "checkpoint")?)?;
            let size = ck.meta.config.input_shape()[1];
            if args.model.is_some() || args.image_size.is_some_and(|s| s != size) {
                return Err(Error::Config(
                    "finetune takes the model kind and image size from the checkpoint".into(),
                ));
            }
            let train_set = load_dataset(&rc.data_path(train_manifest, "train")?, size)?;
            let val_set = load_dataset(&rc.data_path(val_manifest, "val")?, size)?;
            let mut cfg = rc.train_config(&args)?;
            cfg.freeze_backbone |= freeze_backbone;
            let (model, history) = fine_tune(&ck, &train_set, &val_set, &cfg)?;
            std::fs::create_dir_all(&rc.out)?;
            final_line(&history);
            let source = train_set.name.strip_suffix("-train").unwrap_or(&train_set.name).to_string();
            let out = Checkpoint::from_model(&model, cfg.seed, cfg.epochs, source, cfg.adam());
            out.save(&rc.out.join("finetuned.ovck"))?;
            println!("wrote {}", rc.out.join("finetuned.ovck").display());
            write_history(&history, &rc.out.join("finetune_metrics.csv"))?;
        }
        Command::Evaluate { checkpoint, manifest } => {
            let ck = Checkpoint::load(&rc.data_path(checkpoint, "checkpoint")?)?;
            let model = ck.to_model()?;
            let data = load_dataset(&rc.data_path(manifest, "manifest")?, ck.meta.config.input_shape()[1])?;
            let (record, cm) = evaluate(&model, &data)?;
            println!("model={} dataset={} samples={}", record.model, record.dataset, cm.total());
            println!("accuracy={:.4} loss={:.4}", record.accuracy, record.loss);
            if let Some(b) = cm.binary() {
                println!("TP={} TN={} FP={} FN={}", b.tp, b.tn, b.fp, b.fn_);
            }
            println!("confusion (rows true, columns predicted):");
            for t in 0..cm.classes() {
                let row: Vec<String> = (0..cm.classes()).map(|p| cm.get(t, p).to_string()).collect();
                println!("  {}", row.join(" "));
            }
        }
        Command::Compare {
            train: args,
            models,
            datasets,
            per_class,
            parallel,
        } => {
            let kinds: Vec<ModelKind> = match models.as_deref().or(args.model.as_deref()) {
                Some(list) => list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
                None => ModelKind::ALL.to_vec(),
            };
            let size = rc.image_size(args.image_size)?;
            let cfg = rc.train_config(&args)?;
            let parallel = parallel || rc.file.get("run", "parallel")?.unwrap_or(false);
            let manifests = match datasets {
                Some(list) => list.split(',').map(|p| load_manifest(Path::new(p.trim()))).collect::<Result<Vec<_>>>()?,
                None => generate_compare_datasets(&rc.out.join("data"), per_class, size, rc.seed)?,
            };
            let records = compare(&rc, &kinds, &manifests, size, &cfg, parallel)?;
            std::fs::create_dir_all(&rc.out)?;
            write_history(&records, &rc.out.join("comparison.csv"))?;
            let summary = render_summary(&records);
            std::fs::write(rc.out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
    }
    Ok(())
}

/// The two default `compare` datasets: oriented stripes and positioned
/// blobs, three classes each.
pub fn generate_compare_datasets(dir: &Path, per_class: usize, size: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    [(Pattern::Stripes, "stripes"), (Pattern::Blobs, "blobs")]
        .into_iter()
        .enumerate()
        .map(|(i, (pattern, name))| {
            let spec = SyntheticSpec {
                name: name.into(),
                pattern,
                num_classes: 3,
                samples_per_class: per_class,
                image_size: size,
                noise: 0.15,
                seed: seed.wrapping_add(i as u64),
                ..Default::default()
            };
            write_synthetic(&spec, &dir.join(name))
        })
        .collect()
}

/// Trains every `(dataset, model)` cell from scratch and returns the
/// per-epoch records plus a final test record per cell.
pub fn compare(
    rc: &RunConfig,
    kinds: &[ModelKind],
    manifests: &[DatasetManifest],
    size: usize,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<Vec<MetricsRecord>> {
    let pre = PreprocessSpec { size, ..Default::default() };
    let mut splits = Vec::new();
    for m in manifests {
        let s = split_dataset(m, &SplitSpec { seed: rc.seed, ..rc.split.clone() })?;
        for w in &s.warnings {
            eprintln!("warning: {}: {w}", m.name);
        }
        splits.push((
            Dataset::load(&s.train, &pre)?,
            Dataset::load(&s.val, &pre)?,
            Dataset::load(&s.test, &pre)?,
        ));
    }
    let cells: Vec<(usize, ModelKind)> = (0..splits.len())
        .flat_map(|d| kinds.iter().map(move |&k| (d, k)))
        .collect();
    let run_cell = |&(d, kind): &(usize, ModelKind)| -> Result<Vec<MetricsRecord>> {
        let (train_set, val_set, test_set) = &splits[d];
        let config = rc.model_config(kind, size, channels_of(train_set)?, train_set.num_classes())?;
        let mut model = Model::build(config, cfg.seed)?;
        let mut history = train(&mut model, train_set, val_set, cfg)?;
        if !test_set.is_empty() {
            let (mut test, _) = evaluate(&model, test_set)?;
            test.dataset = history[0].dataset.clone();
            test.epoch = cfg.epochs;
            test.split = Phase::Test;
            history.push(test);
        }
        Ok(history)
    };
    let results: Vec<Result<Vec<MetricsRecord>>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|c| s.spawn(move || run_cell(c))).collect();
            handles.into_iter().map(|h| h.join().expect("grid cell panicked")).collect()
        })
    } else {
        cells.iter().map(run_cell).collect()
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augment_specs() {
        assert_eq!(
            parse_augment("crop:2, flip,rotate").unwrap(),
            vec![
                AugmentOp::RandomCrop { pad: 2 },
                AugmentOp::HorizontalFlip { p: 0.5 },
                AugmentOp::RandomRotation
            ]
        );
        assert!(parse_augment("none").unwrap().is_empty());
        assert!(parse_augment("blur").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "seed = 3\n[train]\nepochs = 4\nbatch_size = 8\n").unwrap();
        let global = GlobalArgs {
            config: Some(path),
            seed: None,
            out: None,
            epochs: Some(2),
            batch_size: None,
            lr: None,
        };
        let rc = RunConfig::resolve(&global).unwrap();
        assert_eq!((rc.seed, rc.train.epochs, rc.train.batch_size), (3, 2, 8));
        assert_eq!(rc.train.lr, 0.001);
        assert_eq!(rc.out, PathBuf::from("out"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["oncovit", "trane"]), 2);
        assert_eq!(run(["oncovit", "split", "--bogus"]), 2);
        assert_eq!(run(["oncovit", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        assert_eq!(run(["oncovit", "gradcheck", "--model", "alexnet"]), 1);
        assert_eq!(run(["oncovit", "--epochs", "0", "gradcheck"]), 1);
    }
}
