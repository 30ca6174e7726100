//! User-level feature construction: documents → TF-IDF → LSA for text,
//! concept-vector aggregation → PCA for images.

mod image;
mod text;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{PersError, Result};

pub use image::{aggregate_image_concepts, fit_image_featurizer, ImageConceptStore, ImageFeaturizer};
pub use text::{
    build_user_documents, fit_text_featurizer, term_counts, tfidf_matrix, tokenize, Documents, TextFeaturizer,
    TextFeaturizerConfig, Vocabulary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Text,
    Image,
    Fused,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Text => "text",
            View::Image => "image",
            View::Fused => "fused",
        })
    }
}

/// Dense n×d features with one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub row_ids: Vec<String>,
    pub view: View,
    /// Whether the row is backed by real observations (false for users with
    /// no images in the image view).
    pub has_data: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, row_ids: Vec<String>, view: View, has_data: Vec<bool>) -> Result<Self> {
        if row_ids.len() != data.nrows() || has_data.len() != data.nrows() {
            return Err(PersError::Alignment(format!(
                "{} rows but {} ids and {} flags",
                data.nrows(),
                row_ids.len(),
                has_data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(row_ids.len());
        if let Some(dup) = row_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(PersError::Alignment(format!("duplicate row id {dup:?}")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(PersError::NonFiniteInput(format!("{view} feature matrix")));
        }
        Ok(FeatureMatrix {
            data,
            row_ids,
            view,
            has_data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index: std::collections::HashMap<&str, usize> =
            self.row_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| PersError::Alignment(format!("row id {id:?} not in {} matrix", self.view)))
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(FeatureMatrix {
            data: self.data.select(Axis(0), &rows),
            row_ids: ids.to_vec(),
            view: self.view,
            has_data: rows.iter().map(|&r| self.has_data[r]).collect(),
        })
    }

    /// Column-wise concatenation; rows must align exactly.
    pub fn hstack(&self, other: &FeatureMatrix, view: View) -> Result<FeatureMatrix> {
        if self.row_ids != other.row_ids {
            return Err(PersError::Alignment("row ids differ between views".into()));
        }
        let data = ndarray::concatenate(Axis(1), &[self.data.view(), other.data.view()])
            .map_err(|e| PersError::Dimension(e.to_string()))?;
        Ok(FeatureMatrix {
            data,
            row_ids: self.row_ids.clone(),
            view,
            has_data: self.has_data.iter().zip(&other.has_data).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// CSV with a `user_id` column followed by `f0..f{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| PersError::Format(e.to_string()))?;
        let mut header = vec!["user_id".to_string()];
        header.extend((0..self.ncols()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(|e| PersError::Format(e.to_string()))?;
        for (id, row) in self.row_ids.iter().zip(self.data.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| PersError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| PersError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validation_and_selection() {
        let m = FeatureMatrix::new(
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            vec!["a".into(), "b".into(), "c".into()],
            View::Text,
            vec![true; 3],
        )
        .unwrap();
        let s = m.select(&["c".into(), "a".into()]).unwrap();
        assert_eq!(s.data, array![[5.0, 6.0], [1.0, 2.0]]);
        assert!(m.select(&["zz".into()]).is_err());
        assert!(FeatureMatrix::new(array![[1.0]], vec!["a".into(), "b".into()], View::Text, vec![true]).is_err());
        assert!(FeatureMatrix::new(array![[1.0], [2.0]], vec!["a".into(), "a".into()], View::Text, vec![true; 2]).is_err());
        assert!(FeatureMatrix::new(array![[f64::NAN]], vec!["a".into()], View::Text, vec![true]).is_err());
        let f = m.hstack(&m, View::Fused).unwrap();
        assert_eq!(f.ncols(), 4);
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix::new(array![[0.5, -1.0]], vec!["u1".into()], View::Image, vec![false]).unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "user_id,f0,f1\nu1,0.5,-1\n");
    }
}
