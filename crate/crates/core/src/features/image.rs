use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, View};
use crate::archive::Archive;
use crate::corpus::Corpus;
use crate::decomp::{self, Projector};
use crate::error::{PersError, Result};

/// Precomputed per-image concept likelihood vectors (1000 ImageNet concepts
/// for real data; any fixed width is accepted).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageConceptStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl ImageConceptStore {
    pub fn new(dim: usize) -> Self {
        ImageConceptStore {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.vectors.contains_key(image_id)
    }

    pub fn get(&self, image_id: &str) -> Option<&[f64]> {
        self.vectors.get(image_id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, image_id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = image_id.into();
        if vector.len() != self.dim {
            return Err(PersError::Schema(format!(
                "image {id:?} has {} concepts, store expects {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(v) = vector.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(PersError::Schema(format!("image {id:?} has invalid concept value {v}")));
        }
        if self.vectors.insert(id.clone(), vector).is_some() {
            return Err(PersError::Schema(format!("duplicate image id {id:?}")));
        }
        Ok(())
    }

    /// Load one CSV (`image_id,c0,...,c{d-1}`) or every `*.csv` shard in a
    /// directory, in file-name order.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PersError::MissingArtifact(path.to_path_buf()));
        }
        let files = if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| PersError::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            files
        } else {
            vec![path.to_path_buf()]
        };
        let mut store: Option<ImageConceptStore> = None;
        for file in files {
            let mut reader = csv::Reader::from_path(&file)
                .map_err(|e| PersError::Schema(format!("{}: {e}", file.display())))?;
            let headers = reader
                .headers()
                .map_err(|e| PersError::Schema(format!("{}: {e}", file.display())))?
                .clone();
            let dim = headers.len().saturating_sub(1);
            let valid = headers.get(0) == Some("image_id")
                && dim > 0
                && headers.iter().skip(1).enumerate().all(|(j, h)| h == format!("c{j}"));
            if !valid {
                return Err(PersError::Schema(format!(
                    "{}: header must be image_id,c0,...,c{{d-1}}",
                    file.display()
                )));
            }
            let s = store.get_or_insert_with(|| ImageConceptStore::new(dim));
            if s.dim != dim {
                return Err(PersError::Schema(format!(
                    "{}: shard width {dim} differs from {}",
                    file.display(),
                    s.dim
                )));
            }
            for rec in reader.records() {
                let rec = rec.map_err(|e| PersError::Schema(format!("{}: {e}", file.display())))?;
                let values = rec
                    .iter()
                    .skip(1)
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| PersError::Schema(format!("{}: bad number {v:?}", file.display())))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                s.insert(rec[0].to_string(), values)?;
            }
        }
        store.ok_or_else(|| PersError::Schema(format!("{}: no image CSV found", path.display())))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| PersError::Format(e.to_string()))?;
        let mut header = vec!["image_id".to_string()];
        header.extend((0..self.dim).map(|j| format!("c{j}")));
        w.write_record(&header).map_err(|e| PersError::Format(e.to_string()))?;
        for (id, v) in &self.vectors {
            let mut rec = vec![id.clone()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| PersError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| PersError::io(path, e))
    }
}

/// Per-user mean of the user's image vectors. Users without images get a
/// zero row with `has_data = false`.
pub fn aggregate_image_concepts(corpus: &Corpus, store: &ImageConceptStore) -> Result<FeatureMatrix> {
    let d = store.dim();
    let mut data = Array2::<f64>::zeros((corpus.len(), d));
    let mut has_data = Vec::with_capacity(corpus.len());
    for (mut row, u) in data.axis_iter_mut(Axis(0)).zip(&corpus.users) {
        for id in &u.image_ids {
            let v = store.get(id).ok_or_else(|| PersError::DanglingImageRef {
                user_id: u.user_id.clone(),
                image_id: id.clone(),
            })?;
            for (acc, x) in row.iter_mut().zip(v) {
                *acc += x;
            }
        }
        if !u.image_ids.is_empty() {
            let count = u.image_ids.len() as f64;
            row.mapv_inplace(|v| v / count);
        }
        has_data.push(!u.image_ids.is_empty());
    }
    FeatureMatrix::new(data, corpus.ids(), View::Image, has_data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeaturizer {
    pub projector: Projector,
}

#[derive(Serialize, Deserialize)]
struct ImageFeaturizerMeta {
    format: String,
    version: u32,
    k: usize,
    d: usize,
}

/// PCA over the rows that have images.
pub fn fit_image_featurizer(image_matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<ImageFeaturizer> {
    let rows: Vec<usize> = (0..image_matrix.nrows()).filter(|&i| image_matrix.has_data[i]).collect();
    if rows.len() < 2 {
        return Err(PersError::InsufficientData(format!(
            "image PCA needs at least 2 users with images, got {}",
            rows.len()
        )));
    }
    let fit_rows = image_matrix.data.select(Axis(0), &rows);
    let projector = decomp::pca_fit(fit_rows.view(), k, seed)?;
    Ok(ImageFeaturizer { projector })
}

impl ImageFeaturizer {
    pub fn dim(&self) -> usize {
        self.projector.k()
    }

    /// Projects every row, including the zero rows of image-less users.
    pub fn apply(&self, image_matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let data = decomp::project(&self.projector, image_matrix.data.view())?;
        FeatureMatrix::new(data, image_matrix.row_ids.clone(), View::Image, image_matrix.has_data.clone())
    }

    pub fn store(&self, prefix: &str, archive: &mut Archive) -> Result<()> {
        archive.insert_json(
            format!("{prefix}/meta.json"),
            &ImageFeaturizerMeta {
                format: "pers-image-featurizer".into(),
                version: 1,
                k: self.projector.k(),
                d: self.projector.d(),
            },
        )?;
        archive.insert(format!("{prefix}/projector.bin"), self.projector.to_bytes());
        Ok(())
    }

    pub fn load(prefix: &str, archive: &Archive) -> Result<Self> {
        let meta: ImageFeaturizerMeta = archive.get_json(&format!("{prefix}/meta.json"))?;
        let projector = Projector::from_bytes(archive.get(&format!("{prefix}/projector.bin"))?)?;
        if meta.version != 1 || meta.k != projector.k() || meta.d != projector.d() {
            return Err(PersError::Format("image featurizer metadata does not match projector".into()));
        }
        Ok(ImageFeaturizer { projector })
    }
}
