//! Manifests, ICBHI statistics and Mixed-N dataset construction.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Respiratory cycle class, in ICBHI order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Crackle,
    Wheeze,
    Both,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Normal, Label::Crackle, Label::Wheeze, Label::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Crackle => "crackle",
            Label::Wheeze => "wheeze",
            Label::Both => "both",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub source: Source,
}

/// Parse JSON-lines manifest text. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !seen.insert(r.id.clone()) {
            return Err(Error::Integrity(format!(
                "duplicate id `{}` on line {line_no}",
                r.id
            )));
        }
        if r.split == Split::Test && r.source == Source::Synthetic {
            return Err(Error::Integrity(format!(
                "synthetic record `{}` in the test split (line {line_no})",
                r.id
            )));
        }
        records.push(r);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    write_atomic(path, manifest_to_string(records).as_bytes())
}

/// `round(100 · part / whole, 2)` with halves rounded up, in exact integer
/// arithmetic.
pub fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    let (p, w) = (part as u128, whole as u128);
    ((2 * p * 10_000 + w) / (2 * w)) as f64 / 100.0
}

/// Counts per class, split and source.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetStats {
    counts: [[[usize; 2]; 2]; 4],
}

impl DatasetStats {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let mut s = DatasetStats::default();
        for r in records {
            s.counts[r.label.index()][r.split as usize][r.source as usize] += 1;
        }
        s
    }

    pub fn count(&self, label: Label, split: Split, source: Source) -> usize {
        self.counts[label.index()][split as usize][source as usize]
    }

    /// Real plus synthetic.
    pub fn class_total(&self, label: Label, split: Split) -> usize {
        self.counts[label.index()][split as usize].iter().sum()
    }

    pub fn split_total(&self, split: Split) -> usize {
        Label::ALL.iter().map(|&l| self.class_total(l, split)).sum()
    }

    /// Percentage of `split` belonging to `label`.
    pub fn share(&self, label: Label, split: Split) -> f64 {
        percent(self.class_total(label, split), self.split_total(split))
    }

    /// Synthetic percentage of the training records of `label`.
    pub fn synthetic_ratio(&self, label: Label) -> f64 {
        percent(
            self.count(label, Split::Train, Source::Synthetic),
            self.class_total(label, Split::Train),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut classes = BTreeMap::new();
        for l in Label::ALL {
            let split = |s: Split| {
                json!({
                    "real": self.count(l, s, Source::Real),
                    "synthetic": self.count(l, s, Source::Synthetic),
                    "share": self.share(l, s),
                })
            };
            classes.insert(
                l.name(),
                json!({
                    "train": split(Split::Train),
                    "test": split(Split::Test),
                    "sum": self.class_total(l, Split::Train) + self.class_total(l, Split::Test),
                    "synthetic_ratio": self.synthetic_ratio(l),
                }),
            );
        }
        json!({
            "classes": classes,
            "total": {
                "train": self.split_total(Split::Train),
                "test": self.split_total(Split::Test),
            },
        })
    }
}

/// Per-class, per-split counts and shares of a manifest.
pub fn icbhi_stats(records: &[SampleRecord]) -> DatasetStats {
    DatasetStats::from_records(records)
}

/// Every class is topped up to `n_target` training samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixPolicy {
    pub n_target: usize,
}

/// The standard Mixed-N sizes.
pub const MIX_SIZES: [usize; 7] = [500, 800, 1000, 1500, 2000, 3000, 5000];

impl MixPolicy {
    pub fn new(n_target: usize) -> Result<Self> {
        if n_target == 0 {
            return Err(Error::Config("Mixed-N target must be at least 1".into()));
        }
        Ok(MixPolicy { n_target })
    }

    /// Synthetic samples added to a class holding `real` samples.
    pub fn synthetic_needed(self, real: usize) -> usize {
        self.n_target.saturating_sub(real)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedDataset {
    pub records: Vec<SampleRecord>,
    pub stats: DatasetStats,
}

/// Keep every real record and add, per class, the first
/// `max(0, N − real_train)` synthetic candidates in id order.
pub fn build_mixed(
    real: &[SampleRecord],
    pool: &[SampleRecord],
    policy: MixPolicy,
) -> Result<MixedDataset> {
    if let Some(r) = real.iter().find(|r| r.source != Source::Real) {
        return Err(Error::Integrity(format!(
            "record `{}` in the real set is synthetic",
            r.id
        )));
    }
    if let Some(r) = pool
        .iter()
        .find(|r| r.source != Source::Synthetic || r.split != Split::Train)
    {
        return Err(Error::Integrity(format!(
            "pool record `{}` is not a synthetic training record",
            r.id
        )));
    }
    let real_stats = DatasetStats::from_records(real);
    let mut records = real.to_vec();
    let mut ids: HashSet<&str> = real.iter().map(|r| r.id.as_str()).collect();
    for label in Label::ALL {
        let need = policy.synthetic_needed(real_stats.count(label, Split::Train, Source::Real));
        let mut candidates: Vec<&SampleRecord> = pool.iter().filter(|r| r.label == label).collect();
        if candidates.len() < need {
            return Err(Error::Capacity {
                class: label.name().to_string(),
                shortfall: need - candidates.len(),
            });
        }
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        for r in candidates.into_iter().take(need) {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate id `{}` in the mix",
                    r.id
                )));
            }
            records.push(r.clone());
        }
    }
    let stats = DatasetStats::from_records(&records);
    Ok(MixedDataset { records, stats })
}

/// Synthetic ratio (%) per class (rows, ICBHI order) and policy (columns)
/// for the given real training counts.
pub fn synth_ratio_table(policies: &[usize], real_counts: [usize; 4]) -> Result<Vec<Vec<f64>>> {
    let policies = policies
        .iter()
        .map(|&n| MixPolicy::new(n))
        .collect::<Result<Vec<_>>>()?;
    Ok(real_counts
        .iter()
        .map(|&real| {
            policies
                .iter()
                .map(|p| {
                    let added = p.synthetic_needed(real);
                    percent(added, real + added)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: Label, split: Split, source: Source) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            path: PathBuf::from(format!("{id}.wav")),
            label,
            split,
            source,
        }
    }

    fn real_train(counts: [usize; 4]) -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for l in Label::ALL {
            for i in 0..counts[l.index()] {
                v.push(rec(&format!("r-{l}-{i}"), l, Split::Train, Source::Real));
            }
        }
        v
    }

    fn pool(per_class: usize) -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for l in Label::ALL {
            // Reverse order so selection has to sort.
            for i in (0..per_class).rev() {
                v.push(rec(
                    &format!("s-{l}-{i:05}"),
                    l,
                    Split::Train,
                    Source::Synthetic,
                ));
            }
        }
        v
    }

    #[test]
    fn manifest_round_trip() {
        let recs = vec![
            rec("a", Label::Normal, Split::Train, Source::Real),
            rec("b", Label::Both, Split::Test, Source::Real),
            rec("c", Label::Wheeze, Split::Train, Source::Synthetic),
        ];
        let text = manifest_to_string(&recs);
        assert_eq!(parse_manifest(&text).unwrap(), recs);
        assert!(text.contains(r#""label":"both""#));
    }

    #[test]
    fn manifest_errors() {
        let good = r#"{"id":"a","path":"a.wav","label":"normal","split":"train","source":"real"}"#;
        let bad = format!("{good}\n\n{{\"id\":\"b\"}}\n");
        match parse_manifest(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_manifest(&format!("{good}\n{good}\n")) {
            Err(Error::Integrity(m)) => assert!(m.contains("`a`"), "{m}"),
            other => panic!("{other:?}"),
        }
        let synth_test =
            r#"{"id":"s","path":"s.wav","label":"crackle","split":"test","source":"synthetic"}"#;
        assert!(matches!(
            parse_manifest(synth_test),
            Err(Error::Integrity(_))
        ));
        let extra = good.replace("}", r#","extra":1}"#);
        assert!(matches!(
            parse_manifest(&extra),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(percent(437, 800), 54.63);
        assert_eq!(percent(1, 8), 12.5);
        assert_eq!(percent(0, 0), 0.0);
        assert_eq!(percent(2, 3), 66.67);
    }

    #[test]
    fn mix_tops_up_each_class() {
        let real = real_train([10, 6, 3, 0]);
        let mixed = build_mixed(&real, &pool(20), MixPolicy::new(8).unwrap()).unwrap();
        let s = &mixed.stats;
        let synth: Vec<usize> = Label::ALL
            .iter()
            .map(|&l| s.count(l, Split::Train, Source::Synthetic))
            .collect();
        assert_eq!(synth, vec![0, 2, 5, 8]);
        assert_eq!(s.count(Label::Normal, Split::Train, Source::Real), 10);
        // Lowest ids win.
        let picked: Vec<&str> = mixed
            .records
            .iter()
            .filter(|r| r.label == Label::Crackle && r.source == Source::Synthetic)
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(picked, vec!["s-crackle-00000", "s-crackle-00001"]);
        assert_eq!(s.synthetic_ratio(Label::Wheeze), 62.5);
    }

    #[test]
    fn mix_keeps_test_records_and_reports_shortfall() {
        let mut real = real_train([1, 1, 1, 1]);
        real.push(rec("t", Label::Normal, Split::Test, Source::Real));
        let mixed = build_mixed(&real, &pool(5), MixPolicy::new(3).unwrap()).unwrap();
        assert_eq!(mixed.stats.split_total(Split::Test), 1);
        match build_mixed(&real, &pool(5), MixPolicy::new(9).unwrap()) {
            Err(Error::Capacity { class, shortfall }) => {
                assert_eq!((class.as_str(), shortfall), ("normal", 3))
            }
            other => panic!("{other:?}"),
        }
        let bad_pool = vec![rec("x", Label::Normal, Split::Train, Source::Real)];
        assert!(matches!(
            build_mixed(&real, &bad_pool, MixPolicy::new(1).unwrap()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn table_matches_build_mixed() {
        let counts = [7, 3, 1, 0];
        let table = synth_ratio_table(&[2, 5, 9], counts).unwrap();
        let real = real_train(counts);
        for (j, n) in [2, 5, 9].into_iter().enumerate() {
            let m = build_mixed(&real, &pool(9), MixPolicy::new(n).unwrap()).unwrap();
            for l in Label::ALL {
                assert_eq!(table[l.index()][j], m.stats.synthetic_ratio(l));
            }
        }
        assert!(MixPolicy::new(0).is_err());
    }

    #[test]
    fn stats_json_shape() {
        let recs = vec![
            rec("a", Label::Normal, Split::Train, Source::Real),
            rec("b", Label::Crackle, Split::Train, Source::Real),
            rec("c", Label::Crackle, Split::Test, Source::Real),
        ];
        let j = icbhi_stats(&recs).to_json();
        assert_eq!(j["classes"]["crackle"]["train"]["share"], 50.0);
        assert_eq!(j["classes"]["crackle"]["sum"], 2);
        assert_eq!(j["total"]["test"], 1);
    }
}
