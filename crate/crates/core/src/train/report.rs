//! Comparison CSV: `model,dataset,epoch,split,accuracy,loss` with accuracy
//! as a percentage. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::Path;

use super::metrics::{MetricsRecord, Phase};
use crate::error::{Error, Result};

pub const HEADER: &str = "model,dataset,epoch,split,accuracy,loss";

/// Records sorted by `(dataset, model, epoch, split)`; the sort is stable so
/// duplicate keys keep their input order.
pub fn sorted(records: &[MetricsRecord]) -> Vec<MetricsRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| {
        (&a.dataset, &a.model, a.epoch, a.split).cmp(&(&b.dataset, &b.model, b.epoch, b.split))
    });
    out
}

/// Highest validation record per dataset; ties go to the earliest in sorted
/// order.
pub fn best_val(records: &[MetricsRecord]) -> BTreeMap<String, MetricsRecord> {
    let mut best: BTreeMap<String, MetricsRecord> = BTreeMap::new();
    for r in sorted(records).into_iter().filter(|r| r.split == Phase::Val) {
        match best.get(&r.dataset) {
            Some(b) if b.accuracy >= r.accuracy => {}
            _ => {
                best.insert(r.dataset.clone(), r);
            }
        }
    }
    best
}

pub fn render_comparison(records: &[MetricsRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in sorted(records) {
        out.push_str(&format!(
            "{},{},{},{},{:.2},{:.2}\n",
            r.model,
            r.dataset,
            r.epoch,
            r.split,
            r.accuracy * 100.0,
            r.loss
        ));
    }
    let best = best_val(records);
    if !best.is_empty() {
        let parts: Vec<String> = best
            .values()
            .map(|r| format!("{}={}@{:.2}", r.dataset, r.model, r.accuracy * 100.0))
            .collect();
        out.push_str(&format!("# best val accuracy: {}\n", parts.join("; ")));
    }
    out
}

pub fn emit_comparison(records: &[MetricsRecord], out_path: &Path) -> Result<()> {
    std::fs::write(out_path, render_comparison(records))?;
    Ok(())
}

/// Parses a rendered comparison; accuracy comes back as a fraction.
pub fn parse_comparison(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(Error::Format(format!("comparison must start with {HEADER:?}"))),
    }
    lines
        .map(|(i, line)| {
            let bad = |what: &str| Error::Format(format!("line {}: {what}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            Ok(MetricsRecord {
                model: f[0].to_string(),
                dataset: f[1].to_string(),
                epoch: f[2].parse().map_err(|_| bad("bad epoch"))?,
                split: f[3].parse().map_err(|_| bad("bad split"))?,
                accuracy: f[4].parse::<f64>().map_err(|_| bad("bad accuracy"))? / 100.0,
                loss: f[5].parse().map_err(|_| bad("bad loss"))?,
            })
        })
        .collect()
}

/// Plain-text summary naming the best model per dataset.
pub fn render_summary(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in best_val(records).values() {
        out.push_str(&format!(
            "{}: best model {} with val accuracy {:.2}% (loss {:.2}) at epoch {}\n",
            r.dataset,
            r.model,
            r.accuracy * 100.0,
            r.loss,
            r.epoch
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, dataset: &str, epoch: usize, split: Phase, accuracy: f64, loss: f64) -> MetricsRecord {
        MetricsRecord {
            model: model.into(),
            dataset: dataset.into(),
            epoch,
            split,
            accuracy,
            loss,
        }
    }

    #[test]
    fn accuracy_renders_as_percent() {
        let text = render_comparison(&[rec("transformer", "colon", 10, Phase::Val, 0.9741, 0.1234)]);
        assert!(text.contains("transformer,colon,10,val,97.41,0.12\n"), "{text}");
        assert!(text.ends_with("# best val accuracy: colon=transformer@97.41\n"));
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(render_comparison(&[]), format!("{HEADER}\n"));
        assert!(parse_comparison(&render_comparison(&[])).unwrap().is_empty());
    }

    #[test]
    fn rows_sorted_and_parse_back() {
        let rs = vec![
            rec("vit", "b", 2, Phase::Val, 0.5, 1.0),
            rec("vit", "a", 1, Phase::Val, 0.25, 2.5),
            rec("cnn", "a", 1, Phase::Train, 0.75, 0.5),
            rec("vit", "a", 1, Phase::Train, 1.0, 0.0),
        ];
        let text = render_comparison(&rs);
        let parsed = parse_comparison(&text).unwrap();
        assert_eq!(parsed, sorted(&rs));
        assert_eq!(render_comparison(&parsed), text);
        let summary = render_summary(&rs);
        assert!(summary.starts_with("a: best model vit"));
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(parse_comparison("nope\n").is_err());
        assert!(parse_comparison(&format!("{HEADER}\nvit,a,x,val,1,1\n")).is_err());
    }
}
