use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Entry};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    /// (train, val, test)
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be non-negative and sum to 1", self.ratios)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
    /// Classes too small to stratify; all of their entries went to train.
    pub warnings: Vec<String>,
}

fn floor_count(n: usize, ratio: f64) -> usize {
    // guard against 0.1 * 15000 landing a hair under an integer
    ((n as f64) * ratio + 1e-9).floor() as usize
}

/// Largest-remainder apportionment of `total` across groups with ideal
/// shares `ideal[i]`, never exceeding `caps[i]`.
fn apportion(total: usize, ideal: &[f64], caps: &[usize]) -> Vec<usize> {
    let mut alloc: Vec<usize> = ideal.iter().zip(caps).map(|(&x, &cap)| (x.floor() as usize).min(cap)).collect();
    let mut remaining = total.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (ideal[i] - ideal[i].floor(), ideal[j] - ideal[j].floor());
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    while remaining > 0 {
        let mut progressed = false;
        for &i in &order {
            if remaining > 0 && alloc[i] < caps[i] {
                alloc[i] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    alloc
}

/// Deterministic train/val/test partition. Validation and test sizes are
/// floored from the ratios; the remainder goes to train. When stratified,
/// each class contributes to val and test in proportion to its size.
pub fn split_dataset(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = manifest.len();
    let (_, rv, rt) = spec.ratios;
    let n_val = floor_count(n, rv);
    let n_test = floor_count(n, rt);
    let mut warnings = Vec::new();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());

    if !spec.stratified {
        let mut entries = manifest.entries.clone();
        entries.shuffle(&mut rng);
        test.extend(entries.drain(..n_test));
        val.extend(entries.drain(..n_val));
        train = entries;
    } else {
        let mut groups: Vec<Vec<Entry>> = vec![Vec::new(); manifest.num_classes()];
        for e in &manifest.entries {
            groups[e.label].push(e.clone());
        }
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        let eligible: Vec<bool> = groups.iter().map(|g| g.len() >= 3).collect();
        for (c, g) in groups.iter().enumerate() {
            if !eligible[c] && !g.is_empty() {
                warnings.push(format!(
                    "class {} has {} entries, fewer than the 3 splits; all assigned to train",
                    manifest.class_names[c],
                    g.len()
                ));
            }
        }
        let sizes: Vec<usize> = groups.iter().zip(&eligible).map(|(g, &e)| if e { g.len() } else { 0 }).collect();
        let pool: usize = sizes.iter().sum();
        let target_val = n_val.min(pool);
        let target_test = n_test.min(pool - target_val);
        let share = |target: usize| -> Vec<f64> {
            sizes
                .iter()
                .map(|&s| if pool == 0 { 0.0 } else { target as f64 * s as f64 / pool as f64 })
                .collect()
        };
        let val_alloc = apportion(target_val, &share(target_val), &sizes);
        let caps: Vec<usize> = sizes.iter().zip(&val_alloc).map(|(s, v)| s - v).collect();
        let test_alloc = apportion(target_test, &share(target_test), &caps);
        for (c, mut g) in groups.into_iter().enumerate() {
            test.extend(g.drain(..test_alloc[c]));
            val.extend(g.drain(..val_alloc[c]));
            train.extend(g);
        }
    }

    let part = |entries: Vec<Entry>, suffix: &str| {
        let mut m = manifest.with_entries(entries);
        if !m.name.is_empty() {
            m.name = format!("{}-{suffix}", manifest.name);
        }
        m
    };
    Ok(Split {
        train: part(train, "train"),
        val: part(val, "val"),
        test: part(test, "test"),
        warnings,
    })
}

/// Duplicates entries of under-represented classes (cycling through each
/// class in order) until every class matches the largest one. Pair with
/// augmentation so the copies differ.
pub fn oversample_minority(manifest: &DatasetManifest) -> DatasetManifest {
    let counts = manifest.class_counts();
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut entries = manifest.entries.clone();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let members: Vec<&Entry> = manifest.entries.iter().filter(|e| e.label == c).collect();
        entries.extend(members.iter().cycle().take(max - count).map(|e| (*e).clone()));
    }
    manifest.with_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::path::PathBuf;

    fn manifest(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(Entry {
                    path: PathBuf::from(format!("c{label}/{i}.ppm")),
                    label,
                });
            }
        }
        let names = (0..counts.len()).map(|c| format!("class{c}")).collect();
        DatasetManifest::new("t", names, entries).unwrap()
    }

    fn paths(m: &DatasetManifest) -> HashSet<PathBuf> {
        m.entries.iter().map(|e| e.path.clone()).collect()
    }

    #[test]
    fn partition_property() {
        let m = manifest(&[37, 12, 51]);
        for stratified in [true, false] {
            let s = split_dataset(&m, &SplitSpec { seed: 5, stratified, ..Default::default() }).unwrap();
            let (a, b, c) = (paths(&s.train), paths(&s.val), paths(&s.test));
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            assert_eq!(a.len() + b.len() + c.len(), m.len());
            assert_eq!(&(&a | &b) | &c, paths(&m));
            assert_eq!(s.val.len(), 10);
            assert_eq!(s.test.len(), 10);
        }
    }

    #[test]
    fn stratified_two_class_balance() {
        let m = manifest(&[100, 100]);
        let s = split_dataset(&m, &SplitSpec { seed: 1, ..Default::default() }).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let counts = part.class_counts();
            assert!(counts[0].abs_diff(counts[1]) <= 2, "{counts:?}");
            assert!(counts[0].abs_diff(part.len() / 2) <= 1);
        }
    }

    #[test]
    fn tiny_class_goes_to_train_with_warning() {
        let m = manifest(&[40, 2]);
        let s = split_dataset(&m, &SplitSpec::default()).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.train.class_counts()[1], 2);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let m = manifest(&[10]);
        let spec = SplitSpec {
            ratios: (0.8, 0.1, 0.2),
            ..Default::default()
        };
        assert!(matches!(split_dataset(&m, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn seed_determines_split() {
        let m = manifest(&[30, 30]);
        let a = split_dataset(&m, &SplitSpec { seed: 9, ..Default::default() }).unwrap();
        let b = split_dataset(&m, &SplitSpec { seed: 9, ..Default::default() }).unwrap();
        let c = split_dataset(&m, &SplitSpec { seed: 10, ..Default::default() }).unwrap();
        assert_eq!(a.val.entries, b.val.entries);
        assert_ne!(a.val.entries, c.val.entries);
    }

    #[test]
    fn oversampling_balances_classes() {
        let m = manifest(&[10, 3, 7]);
        assert_eq!(oversample_minority(&m).class_counts(), vec![10, 10, 10]);
    }
}
