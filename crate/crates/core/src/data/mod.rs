//! Manifests, image decoding, preprocessing, augmentation, splitting,
//! batching and synthetic datasets.

pub mod augment;
pub mod batch;
pub mod image;
pub mod manifest;
pub mod preprocess;
pub mod split;
pub mod synthetic;

pub use augment::{augment, AugmentOp};
pub use batch::{batch_indices, make_batches, Batch, Dataset};
pub use image::{decode_image, read_image, ImageFormat};
pub use manifest::{load_manifest, DatasetManifest, Entry};
pub use preprocess::{preprocess, resize_bilinear, PreprocessSpec};
pub use split::{oversample_minority, split_dataset, Split, SplitSpec};
pub use synthetic::{generate_dataset, write_synthetic, Pattern, SyntheticSpec};
