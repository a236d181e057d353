use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentOp};
use super::image::read_image;
use super::manifest::DatasetManifest;
use super::preprocess::PreprocessSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded, preprocessed images held in memory alongside their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B×C×H×W`
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, class_names: Vec<String>, images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Validation(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
            return Err(Error::Label {
                index,
                label,
                classes: class_names.len(),
            });
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.shape() != first.shape()) {
                return Err(Error::Validation(format!(
                    "mixed image shapes {:?} and {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            class_names,
            images,
            labels,
        })
    }

    /// Decodes and preprocesses every entry of a manifest.
    pub fn load(manifest: &DatasetManifest, spec: &PreprocessSpec) -> Result<Self> {
        let images = manifest
            .entries
            .iter()
            .map(|e| spec.apply(&read_image(&manifest.resolve(e))?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.name.clone(), manifest.class_names.clone(), images, manifest.labels())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(channels, height, width)` of the stored images.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Stacks the given samples into one batch, augmenting each when `ops`
    /// is non-empty.
    pub fn gather(&self, indices: &[usize], ops: &[AugmentOp], rng: &mut ChaCha8Rng) -> Result<Batch> {
        let shape = self
            .image_shape()
            .ok_or_else(|| Error::Empty("dataset has no images".into()))?
            .to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[0].numel());
        for &i in indices {
            if ops.is_empty() {
                data.extend_from_slice(self.images[i].data());
            } else {
                data.extend_from_slice(augment(&self.images[i], ops, rng).data());
            }
        }
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend(shape);
        Ok(Batch {
            images: Tensor::new(batch_shape, data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Sample order for one epoch, chunked into batches of at most
/// `batch_size`. The final partial batch is kept. Deterministic in
/// `(seed, epoch)`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Empty("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * epoch as u64);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of batches over `dataset`, with optional augmentation.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
    ops: &[AugmentOp],
) -> Result<Vec<Batch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + 1);
    batch_indices(dataset.len(), batch_size, seed, epoch, shuffle)?
        .iter()
        .map(|idx| dataset.gather(idx, ops, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn batch_counts() {
        assert_eq!(batch_indices(150, 75, 0, 0, true).unwrap().len(), 2);
        let one = batch_indices(10, 75, 0, 0, true).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 10);
        assert!(matches!(batch_indices(0, 4, 0, 0, true), Err(Error::Empty(_))));
    }

    #[test]
    fn epochs_reshuffle_deterministically() {
        let a = batch_indices(50, 8, 3, 0, true).unwrap();
        let b = batch_indices(50, 8, 3, 0, true).unwrap();
        let c = batch_indices(50, 8, 3, 1, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn labels_survive_batching() {
        let images = (0..7).map(|i| Tensor::full(&[1, 2, 2], i as f64)).collect();
        let labels = vec![0, 1, 2, 0, 1, 2, 0];
        let ds = Dataset::new("d", vec!["a".into(), "b".into(), "c".into()], images, labels.clone()).unwrap();
        let batches = make_batches(&ds, 3, 4, 0, true, &[]).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.labels.clone()).collect();
        seen.sort();
        let mut expected = labels;
        expected.sort();
        assert_eq!(seen, expected);
        // image payload travels with its label
        for b in &batches {
            for (i, &l) in b.labels.iter().enumerate() {
                let v = b.images.data()[i * 4] as usize;
                assert_eq!(ds.labels[v], l);
            }
        }
    }

    proptest! {
        #[test]
        fn every_entry_once_per_epoch(n in 1usize..300, b in 1usize..80, seed in any::<u64>(), epoch in 0usize..5) {
            let batches = batch_indices(n, b, seed, epoch, true).unwrap();
            let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
            prop_assert!(batches.iter().all(|x| !x.is_empty() && x.len() <= b));
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
