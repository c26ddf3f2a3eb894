//! Confusion-matrix metrics and the per-class classification report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::LABELS;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    label_names: Vec<String>,
}

/// A rate whose denominator may be zero; such rates are 0.0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub degenerate: bool,
}

impl Rate {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Rate {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Rate {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

impl ConfusionMatrix {
    pub fn new(label_names: &[&str]) -> Self {
        let k = label_names.len();
        Self {
            counts: vec![vec![0; k]; k],
            label_names: label_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn defects() -> Self {
        Self::new(&LABELS)
    }

    pub fn from_counts(label_names: &[&str], counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = label_names.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "confusion counts must be {k}x{k} for labels {label_names:?}"
            )));
        }
        Ok(Self {
            counts,
            label_names: label_names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Reorders classes so row/column `i` of the result is class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            counts: perm
                .iter()
                .map(|&t| perm.iter().map(|&p| self.counts[t][p]).collect())
                .collect(),
            label_names: perm.iter().map(|&i| self.label_names[i].clone()).collect(),
        }
    }

    /// CSV with a header row of predicted labels and one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.label_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.label_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`ConfusionMatrix::to_csv`] output (or the same grid without
    /// the header row and label column).
    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<&str>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split(',').map(str::trim).collect())
            .collect();
        let has_header = rows
            .first()
            .is_some_and(|r| r.iter().skip(1).any(|c| c.parse::<u64>().is_err()));
        let (labels, body): (Vec<String>, &[Vec<&str>]) = if has_header {
            (rows[0][1..].iter().map(|s| s.to_string()).collect(), &rows[1..])
        } else {
            (LABELS.iter().map(|s| s.to_string()).collect(), &rows[..])
        };
        let mut counts = Vec::new();
        for row in body {
            let cells = if row.len() == labels.len() + 1 { &row[1..] } else { &row[..] };
            let parsed = cells
                .iter()
                .map(|c| {
                    c.parse::<u64>()
                        .map_err(|_| Error::InvalidArgument(format!("confusion cell {c:?} is not a count")))
                })
                .collect::<Result<Vec<_>>>()?;
            counts.push(parsed);
        }
        let names: Vec<&str> = labels.iter().map(String::as_str).collect();
        Self::from_counts(&names, counts)
    }
}

pub fn precision(cm: &ConfusionMatrix, k: usize) -> Rate {
    Rate::ratio(cm.get(k, k), cm.col_sum(k))
}

pub fn recall(cm: &ConfusionMatrix, k: usize) -> Rate {
    Rate::ratio(cm.get(k, k), cm.row_sum(k))
}

pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * (r * p) / (r + p)
    }
}

pub fn f1(cm: &ConfusionMatrix, k: usize) -> f64 {
    f1_from(precision(cm, k).value, recall(cm, k).value)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub label: String,
    pub precision: Rate,
    pub recall: Rate,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub rows: Vec<ClassRow>,
    pub accuracy: f64,
    pub total: u64,
}

/// Two-decimal half-up rounding for display.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let accuracy = accuracy(cm)?;
    let rows = (0..cm.num_classes())
        .map(|k| ClassRow {
            label: cm.label_names[k].clone(),
            precision: precision(cm, k),
            recall: recall(cm, k),
            f1: f1(cm, k),
            support: cm.row_sum(k),
        })
        .collect();
    Ok(ClassReport {
        rows,
        accuracy,
        total: cm.total(),
    })
}

impl ClassReport {
    /// Aligned text table; degenerate rates carry a `*` marker.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("accuracy".len());
        let rate = |r: &Rate| format!("{:.2}{}", round2(r.value), if r.degenerate { "*" } else { " " });
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>10}  {:>10}  {:>8}",
            "", "precision", "recall", "f1-score", "support"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>10}  {:>10}  {:>9.2}   {:>8}",
                r.label,
                rate(&r.precision),
                rate(&r.recall),
                round2(r.f1),
                r.support
            );
        }
        let _ = writeln!(
            out,
            "\n{:<width$}  {:>10}  {:>10}  {:>9.2}   {:>8}",
            "accuracy",
            "",
            "",
            round2(self.accuracy),
            self.total
        );
        if self.rows.iter().any(|r| r.precision.degenerate || r.recall.degenerate) {
            out.push_str("* zero denominator, reported as 0.00\n");
        }
        out
    }

    /// `class,precision,recall,f1,support` rows plus an `accuracy` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                r.label, r.precision.value, r.recall.value, r.f1, r.support
            );
        }
        let _ = writeln!(out, "accuracy,,,{:.6},{}", self.accuracy, self.total);
        out
    }
}
