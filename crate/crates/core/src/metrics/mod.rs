//! Per-dimension F1-macro and Matthews correlation, and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Dimension;
use crate::error::{PersError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_labels(y_true: &[bool], y_pred: &[bool]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(PersError::LengthMismatch {
                left: y_true.len(),
                right: y_pred.len(),
            });
        }
        if y_true.is_empty() {
            return Err(PersError::EmptyInput);
        }
        let mut c = ConfusionCounts::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    fn f1_positive(&self) -> f64 {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Mean of the per-class F1 scores over both classes.
    pub fn f1_macro(&self) -> f64 {
        0.5 * (self.f1_positive() + self.swapped().f1_positive())
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (
            u128::from(self.tp),
            u128::from(self.tn),
            u128::from(self.fp),
            u128::from(self.fn_),
        );
        let num = (tp * tn) as i128 - (fp * fn_) as i128;
        let a = (tp + fp) * (fn_ + tn);
        let b = (fp + tn) * (tp + fn_);
        if a == 0 || b == 0 {
            return 0.0;
        }
        (num as f64 / ((a as f64).sqrt() * (b as f64).sqrt())).clamp(-1.0, 1.0)
    }
}

pub fn f1_macro(y_true: &[bool], y_pred: &[bool]) -> Result<f64> {
    Ok(ConfusionCounts::from_labels(y_true, y_pred)?.f1_macro())
}

pub fn mcc(y_true: &[bool], y_pred: &[bool]) -> Result<f64> {
    Ok(ConfusionCounts::from_labels(y_true, y_pred)?.mcc())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub dimension: Dimension,
    pub f1_macro: f64,
    pub mcor: f64,
    pub confusion: ConfusionCounts,
    pub n: u64,
}

impl DimensionScores {
    pub fn compute(dimension: Dimension, y_true: &[bool], y_pred: &[bool]) -> Result<Self> {
        let confusion = ConfusionCounts::from_labels(y_true, y_pred)?;
        Ok(DimensionScores {
            dimension,
            f1_macro: confusion.f1_macro(),
            mcor: confusion.mcc(),
            confusion,
            n: confusion.total(),
        })
    }

    /// `"0.82/0.61"`.
    pub fn cell(&self) -> String {
        format!("{:.2}/{:.2}", self.f1_macro, self.mcor)
    }
}

/// One evaluated system (PERS or a baseline) over the dimensions it was
/// trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub views: String,
    pub dimensions: Vec<DimensionScores>,
}

impl ReportRow {
    pub fn get(&self, dim: Dimension) -> Option<&DimensionScores> {
        self.dimensions.iter().find(|d| d.dimension == dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub fingerprint: String,
    pub n_test: u64,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned table with one `F1/Mcor` cell per dimension.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = ["system", "views"]
            .into_iter()
            .map(String::from)
            .chain(Dimension::ALL.iter().map(|d| d.to_string()))
            .collect();
        let mut table = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.system.clone(), row.views.clone()];
            for d in Dimension::ALL {
                cells.push(row.get(d).map_or_else(|| "-".to_string(), DimensionScores::cell));
            }
            table.push(cells);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "source: {}  test users: {}  (cells: F1-macro/MCC)", self.source, self.n_test);
        for r in &table {
            let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}
