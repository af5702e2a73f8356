//! ICBHI evaluation: confusion matrix, Sp, Se, Score and seed aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Label;
use crate::dsp::encode_pgm;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Rows are the true class, columns the prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..4).map(|c| self.row_total(c)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in Label::ALL {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for l in Label::ALL {
            out.push_str(l.name());
            for v in self.counts[l.index()] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Heat image with each cell drawn as a `cell`×`cell` block.
    pub fn to_pgm(&self, cell: usize) -> Result<Vec<u8>> {
        let side = 4 * cell.max(1);
        let cell = cell.max(1);
        let mut data = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                data.push(self.counts[y / cell][x / cell] as f32);
            }
        }
        encode_pgm(&Tensor::new(&[side, side], data)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_pgm(32)?)
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        if p >= 4 || t >= 4 {
            return Err(Error::Argument(format!(
                "sample {i}: class out of range (pred {p}, label {t})"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sp: f64,
    pub se: f64,
    pub score: f64,
    /// Per-class accuracy, `None` for classes absent from the evaluation.
    pub per_class: [Option<f64>; 4],
}

/// Specificity over the normal row, sensitivity over the exact diagonal of
/// the abnormal rows, score their mean. All in percent.
pub fn icbhi_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let normal = cm.row_total(0);
    if normal == 0 {
        return Err(Error::Degenerate(
            "no normal samples, specificity is undefined".into(),
        ));
    }
    let abnormal: u64 = (1..4).map(|c| cm.row_total(c)).sum();
    if abnormal == 0 {
        return Err(Error::Degenerate(
            "no abnormal samples, sensitivity is undefined".into(),
        ));
    }
    let hits: u64 = (1..4).map(|c| cm.counts[c][c]).sum();
    let sp = 100.0 * cm.counts[0][0] as f64 / normal as f64;
    let se = 100.0 * hits as f64 / abnormal as f64;
    let mut per_class = [None; 4];
    for (c, acc) in per_class.iter_mut().enumerate() {
        let n = cm.row_total(c);
        if n > 0 {
            *acc = Some(100.0 * cm.counts[c][c] as f64 / n as f64);
        }
    }
    Ok(Metrics {
        sp,
        se,
        score: (sp + se) / 2.0,
        per_class,
    })
}

/// Mean and spread of one metric across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    // Sample standard deviation; a single run has no spread.
    let std = if n < 2 {
        0.0
    } else {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Stat { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sp: Stat,
    pub se: Stat,
    pub score: Stat,
    pub per_class: [Option<Stat>; 4],
    pub seeds: usize,
}

pub fn aggregate_seeds(reports: &[Metrics]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to aggregate".into()));
    }
    let mut per_class = [None; 4];
    for (c, out) in per_class.iter_mut().enumerate() {
        // Only aggregate a class that every seed evaluated.
        if reports.iter().all(|r| r.per_class[c].is_some()) {
            *out = Some(stat(reports.iter().map(move |r| r.per_class[c].unwrap())));
        }
    }
    let sp = stat(reports.iter().map(|r| r.sp));
    let se = stat(reports.iter().map(|r| r.se));
    Ok(MetricsReport {
        score: stat(reports.iter().map(|r| r.score)),
        sp,
        se,
        per_class,
        seeds: reports.len(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> serde_json::Value {
        let classes = |f: &dyn Fn(&Stat) -> f64| {
            let mut m = serde_json::Map::new();
            for l in Label::ALL {
                m.insert(
                    l.name().into(),
                    self.per_class[l.index()].map_or(serde_json::Value::Null, |s| json!(f(&s))),
                );
            }
            serde_json::Value::Object(m)
        };
        json!({
            "sp": self.sp.mean,
            "se": self.se.mean,
            "score": self.score.mean,
            "per_class": classes(&|s| s.mean),
            "seeds": self.seeds,
            "std": {
                "sp": self.sp.std,
                "se": self.se.std,
                "score": self.score.std,
                "per_class": classes(&|s| s.std),
            },
        })
    }
}

impl From<Metrics> for MetricsReport {
    fn from(m: Metrics) -> Self {
        aggregate_seeds(&[m]).expect("one report")
    }
}

/// Pearson correlation of two equally long series.
pub fn pearson(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument(format!(
            "pearson needs two series of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pearson of a constant series".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
