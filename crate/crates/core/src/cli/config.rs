//! Flat `key = value` configuration files with `[section]` headers. Blank
//! lines and lines starting with `#` or `;` are ignored. Keys before the
//! first header belong to the `run` section.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Recognized keys per section; anything else is rejected so typos surface.
const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["seed", "out", "parallel"]),
    (
        "train",
        &["epochs", "batch_size", "lr", "freeze_backbone", "augment", "strict"],
    ),
    (
        "model",
        &[
            "kind",
            "image_size",
            "patch_size",
            "embed_dim",
            "num_heads",
            "num_layers",
            "mlp_ratio",
            "dropout",
            "stage_widths",
            "blocks_per_stage",
        ],
    ),
    ("split", &["ratios", "stratified"]),
    ("data", &["train", "val", "test", "manifest", "checkpoint"]),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = "run".to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let err = |msg: String| Error::Config(format!("config line {}: {msg}", i + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {line:?}")))?
                    .trim();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                current = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let allowed = KNOWN.iter().find(|(s, _)| *s == current).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(err(format!("unknown key {key:?} in [{current}]")));
            }
            let section = sections.entry(current.clone()).or_default();
            if section.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key {key:?} in [{current}]")));
            }
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("[{section}] {key} = {v:?} is not valid")))
            })
            .transpose()
    }

    /// Comma-separated list value.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<T>()
                            .map_err(|_| Error::Config(format!("[{section}] {key}: bad list item {x:?}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_types() {
        let c = ConfigFile::parse(
            "seed = 4\n# comment\n[train]\nepochs=3\nlr = 0.01\n\n[model]\nkind = vit\nstage_widths = 4, 8\n",
        )
        .unwrap();
        assert_eq!(c.get::<u64>("run", "seed").unwrap(), Some(4));
        assert_eq!(c.get::<usize>("train", "epochs").unwrap(), Some(3));
        assert_eq!(c.get::<f64>("train", "lr").unwrap(), Some(0.01));
        assert_eq!(c.raw("model", "kind"), Some("vit"));
        assert_eq!(c.get_list::<usize>("model", "stage_widths").unwrap(), Some(vec![4, 8]));
        assert_eq!(c.get::<usize>("train", "batch_size").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("[trian]\n").is_err());
        assert!(ConfigFile::parse("[train]\nepoch = 3\n").is_err());
        assert!(ConfigFile::parse("[train]\nepochs\n").is_err());
        assert!(ConfigFile::parse("[train]\nepochs=1\nepochs=2\n").is_err());
        let c = ConfigFile::parse("[train]\nepochs = many\n").unwrap();
        assert!(c.get::<usize>("train", "epochs").is_err());
    }
}
