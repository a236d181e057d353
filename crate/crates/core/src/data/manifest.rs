//! Line-oriented dataset manifests.
//!
//! ```text
//! #classes: benign,malignant
//! #name: lung
//! #source: synthetic stripes, seed 7
//! images/0000.ppm	0
//! images/0001.ppm	1
//! ```
//!
//! The `#classes:` header is required and comes first. `#name:` and
//! `#source:` are optional; other `#` lines are ignored. Entry paths are
//! relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
    pub source_note: String,
    /// Directory entry paths are resolved against.
    pub root: PathBuf,
}

const MAX_LISTED_MISSING: usize = 10;

impl DatasetManifest {
    pub fn new(name: impl Into<String>, class_names: Vec<String>, entries: Vec<Entry>) -> Result<Self> {
        let m = Self {
            name: name.into(),
            class_names,
            entries,
            source_note: String::new(),
            root: PathBuf::from("."),
        };
        m.validate_labels()?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn resolve(&self, entry: &Entry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// A manifest over a subset of this one's entries.
    pub fn with_entries(&self, entries: Vec<Entry>) -> Self {
        Self {
            entries,
            ..self.clone()
        }
    }

    pub fn validate_labels(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Validation("manifest declares no classes".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if name.is_empty() || name.contains(',') || !seen.insert(name) {
                return Err(Error::Validation(format!("class name {name:?} is empty, contains a comma or is repeated")));
            }
        }
        let c = self.num_classes();
        if let Some((i, e)) = self.entries.iter().enumerate().find(|(_, e)| e.label >= c) {
            return Err(Error::Validation(format!(
                "entry {} ({}) has label {} but only {c} classes are declared",
                i + 1,
                e.path.display(),
                e.label
            )));
        }
        Ok(())
    }

    /// Every entry path must exist under `root`.
    pub fn validate_files(&self) -> Result<()> {
        let missing: Vec<&Entry> = self.entries.iter().filter(|e| !self.resolve(e).is_file()).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let listed: Vec<String> = missing
            .iter()
            .take(MAX_LISTED_MISSING)
            .map(|e| e.path.display().to_string())
            .collect();
        Err(Error::Validation(format!(
            "{} of {} entry files are missing: {}{}",
            missing.len(),
            self.entries.len(),
            listed.join(", "),
            if missing.len() > MAX_LISTED_MISSING { ", ..." } else { "" }
        )))
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("line 1: empty manifest, expected #classes: header".into()))?;
        let classes = header
            .strip_prefix("#classes:")
            .ok_or_else(|| Error::Format(format!("line 1: expected #classes: header, found {header:?}")))?;
        let class_names: Vec<String> = classes.split(',').map(|s| s.trim().to_string()).collect();
        let mut name = String::new();
        let mut source_note = String::new();
        let mut entries = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("#name:") {
                name = rest.trim().to_string();
                continue;
            }
            if let Some(rest) = line.strip_prefix("#source:") {
                source_note = rest.trim().to_string();
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (path, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {lineno}: expected <path>TAB<label>, found {line:?}")))?;
            if path.is_empty() {
                return Err(Error::Format(format!("line {lineno}: empty path field")));
            }
            let label = label
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("line {lineno}: label field {label:?} is not a class id")))?;
            entries.push(Entry {
                path: PathBuf::from(path),
                label,
            });
        }
        let m = Self {
            name,
            class_names,
            entries,
            source_note,
            root: root.into(),
        };
        m.validate_labels()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#classes: {}\n", self.class_names.join(","));
        if !self.name.is_empty() {
            let _ = writeln!(out, "#name: {}", self.name);
        }
        if !self.source_note.is_empty() {
            let _ = writeln!(out, "#source: {}", self.source_note.replace('\n', " "));
        }
        for e in &self.entries {
            // manifests always use forward slashes
            let path = e.path.to_string_lossy().replace('\\', "/");
            let _ = writeln!(out, "{path}\t{}", e.label);
        }
        out
    }

    /// The same entries with `root` moved to `new_root`. Paths stay relative
    /// when both roots are the same directory and become absolute otherwise.
    pub fn rebased(&self, new_root: &Path) -> Result<Self> {
        let old = std::fs::canonicalize(&self.root)?;
        let new = std::fs::canonicalize(new_root)?;
        let mut m = self.clone();
        m.root = new_root.to_path_buf();
        if old != new {
            for e in &mut m.entries {
                if e.path.is_relative() {
                    e.path = old.join(&e.path);
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Reads, parses and validates a manifest, including the existence of every
/// entry file. Entry paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = DatasetManifest::parse(&text, root)?;
    if m.name.is_empty() {
        m.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    m.validate_files()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = "#classes: benign,malignant\na.ppm\t0\nb.ppm\t1\nc.ppm\t0\nd.ppm\t1\n";

    #[test]
    fn parses_two_class_manifest() {
        let m = DatasetManifest::parse(FOUR, ".").unwrap();
        assert_eq!(m.num_classes(), 2);
        assert_eq!(m.len(), 4);
        assert_eq!(m.class_counts(), vec![2, 2]);
    }

    #[test]
    fn label_out_of_range_names_entry() {
        let err = DatasetManifest::parse("#classes: a,b\nx.ppm\t7\n", ".").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("x.ppm") && msg.contains('7'), "{msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = DatasetManifest::parse("#classes: a\nx.ppm 0\n", ".").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = DatasetManifest::parse("#classes: a\nx.ppm\tzero\n", ".").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = DatasetManifest::parse("a.ppm\t0\n", ".").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn duplicate_class_names_rejected() {
        assert!(DatasetManifest::parse("#classes: a,a\n", ".").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut m = DatasetManifest::parse(FOUR, "root").unwrap();
        m.name = "lung".into();
        m.source_note = "synthetic".into();
        let back = DatasetManifest::parse(&m.to_text(), "root").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_files_listed_up_to_ten() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("#classes: a\n");
        for i in 0..12 {
            text.push_str(&format!("missing{i}.ppm\t0\n"));
        }
        let path = dir.path().join("m.txt");
        std::fs::write(&path, text).unwrap();
        let msg = load_manifest(&path).unwrap_err().to_string();
        assert!(msg.starts_with("validation failed: 12 of 12"), "{msg}");
        assert!(msg.contains("missing9.ppm") && !msg.contains("missing10.ppm"), "{msg}");
    }
}
