//! Two-step out-of-fold stacking.
//!
//! Each view's features go through J base learners with K-fold out-of-fold
//! predictions (an n×J matrix per view). The per-view matrices are
//! concatenated into H (n×2J), the same J learner specs produce out-of-fold
//! predictions on H (n×J), and a linear SVM is trained on that. Inference
//! replays the chain with learners refit on all training rows.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dimension, MbtiLabel};
use crate::error::{PersError, Result};
use crate::features::{FeatureMatrix, View};
use crate::learners::{fit_learner, fit_linear_svm, LearnerModel, LearnerSpec, SvmModel, SvmParams};
use crate::metrics::{DimensionScores, ReportRow};
use crate::rng::{derive_seed, rng_from};

const STREAM_FOLDS: u64 = 0xF01D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackingConfig {
    pub folds: usize,
    pub base_specs: Vec<LearnerSpec>,
    pub meta: SvmParams,
    pub seed: u64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            folds: 5,
            base_specs: LearnerSpec::default_base_specs(),
            meta: SvmParams::default(),
            seed: 0,
        }
    }
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(PersError::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.base_specs.is_empty() {
            return Err(PersError::Config("at least one base learner is required".into()));
        }
        for s in &self.base_specs {
            s.validate()?;
        }
        if !(self.meta.c > 0.0 && self.meta.c.is_finite()) || self.meta.epochs == 0 {
            return Err(PersError::Config("meta svm needs C > 0 and epochs >= 1".into()));
        }
        Ok(())
    }

    pub fn n_learners(&self) -> usize {
        self.base_specs.len()
    }

    /// SHA-256 over the canonical JSON of the configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

/// Hex SHA-256 of a JSON value serialized with sorted object keys.
pub fn fingerprint_json(value: &serde_json::Value) -> String {
    fn canonical(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let sorted: std::collections::BTreeMap<_, _> = m.iter().map(|(k, v)| (k.clone(), canonical(v))).collect();
                serde_json::Value::Object(sorted.into_iter().collect())
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(canonical).collect()),
            other => other.clone(),
        }
    }
    let bytes = serde_json::to_vec(&canonical(value)).expect("json value serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Fold index per row: rows are shuffled by `seed` and position `p` of the
/// shuffled order lands in fold `p % k`, giving near-equal folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(PersError::Fold(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(PersError::Fold(format!("{k} folds requested for {n} rows")));
    }
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[STREAM_FOLDS]));
    let mut folds = vec![0; n];
    for (p, &row) in order.iter().enumerate() {
        folds[row] = p % k;
    }
    Ok(folds)
}

/// Seed for learner `j` trained on fold `k` of a stage (`k == K` is the
/// full refit).
pub fn learner_seed(seed: u64, stage: u64, j: usize, k: usize) -> u64 {
    derive_seed(seed, &[stage, j as u64, k as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofMatrix {
    pub scores: Array2<f64>,
    pub row_ids: Vec<String>,
    pub folds: Vec<usize>,
    pub k: usize,
}

impl OofMatrix {
    pub fn nrows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.scores.ncols()
    }

    /// Rows whose predictions came from the model of fold `k`; that model was
    /// trained on every other row.
    pub fn held_out_rows(&self, k: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == k).collect()
    }

    pub fn training_rows(&self, k: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != k).collect()
    }

    pub fn to_feature_matrix(&self, view: View) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.scores.clone(), self.row_ids.clone(), view, vec![true; self.nrows()])
    }
}

fn require_aligned(x: &FeatureMatrix, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(PersError::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    Ok(())
}

enum FoldFit {
    Model(LearnerModel),
    Constant(f64),
}

fn fit_fold(x: ArrayView2<f64>, y: &[bool], spec: &LearnerSpec, seed: u64) -> Result<FoldFit> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        // a training fold with one class carries no signal to learn
        return Ok(FoldFit::Constant(if pos == 0 { 0.0 } else { 1.0 }));
    }
    fit_learner(x, y, spec, seed).map(FoldFit::Model)
}

fn oof_stage(x: &FeatureMatrix, y: &[bool], config: &StackingConfig, stage: u64) -> Result<(OofMatrix, Vec<LearnerModel>)> {
    config.validate()?;
    require_aligned(x, y)?;
    let n = x.nrows();
    let k_folds = config.folds;
    let folds = assign_folds(n, k_folds, config.seed)?;
    let j_count = config.n_learners();

    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> = (0..k_folds)
        .map(|k| {
            let train = (0..n).filter(|&i| folds[i] != k).collect();
            let test = (0..n).filter(|&i| folds[i] == k).collect();
            (train, test)
        })
        .collect();

    let tasks: Vec<(usize, usize)> = (0..j_count).flat_map(|j| (0..=k_folds).map(move |k| (j, k))).collect();
    let results: Vec<Result<(usize, usize, Vec<f64>, Option<LearnerModel>)>> = tasks
        .par_iter()
        .map(|&(j, k)| {
            let spec = &config.base_specs[j];
            let seed = learner_seed(config.seed, stage, j, k);
            if k == k_folds {
                let model = fit_learner(x.data.view(), y, spec, seed)?;
                return Ok((j, k, Vec::new(), Some(model)));
            }
            let (train, test) = &fold_rows[k];
            let xt = x.data.select(Axis(0), train);
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let xv = x.data.select(Axis(0), test);
            let scores = match fit_fold(xt.view(), &yt, spec, seed)? {
                FoldFit::Model(m) => m.predict_scores(xv.view())?,
                FoldFit::Constant(c) => vec![c; test.len()],
            };
            Ok((j, k, scores, None))
        })
        .collect();

    let mut scores = Array2::<f64>::zeros((n, j_count));
    let mut full: Vec<Option<LearnerModel>> = vec![None; j_count];
    for r in results {
        let (j, k, s, model) = r?;
        if let Some(m) = model {
            full[j] = Some(m);
        } else {
            for (&row, v) in fold_rows[k].1.iter().zip(s) {
                scores[[row, j]] = v;
            }
        }
    }
    let oof = OofMatrix {
        scores,
        row_ids: x.row_ids.clone(),
        folds,
        k: k_folds,
    };
    Ok((oof, full.into_iter().map(|m| m.expect("every learner has a full fit")).collect()))
}

const STAGE_FIRST: u64 = 1;
const STAGE_SECOND: u64 = 2;

/// Out-of-fold base-learner scores for one view, plus the J learners refit on
/// every row.
pub fn first_stage_oof(x: &FeatureMatrix, y: &[bool], config: &StackingConfig) -> Result<(OofMatrix, Vec<LearnerModel>)> {
    oof_stage(x, y, config, STAGE_FIRST)
}

pub fn second_stage_oof(h: &FeatureMatrix, y: &[bool], config: &StackingConfig) -> Result<(OofMatrix, Vec<LearnerModel>)> {
    oof_stage(h, y, config, STAGE_SECOND)
}

/// Column-wise concatenation, text columns first.
pub fn fuse_views(z_text: &OofMatrix, z_image: &OofMatrix) -> Result<FeatureMatrix> {
    if z_text.row_ids != z_image.row_ids {
        return Err(PersError::Alignment("first-stage matrices have different row ids".into()));
    }
    let data = ndarray::concatenate(Axis(1), &[z_text.scores.view(), z_image.scores.view()])
        .map_err(|e| PersError::Alignment(e.to_string()))?;
    FeatureMatrix::new(data, z_text.row_ids.clone(), View::Fused, vec![true; z_text.nrows()])
}

pub fn fit_meta_classifier(z_second: &OofMatrix, y: &[bool], params: &SvmParams) -> Result<SvmModel> {
    fit_linear_svm(z_second.scores.view(), y, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersModel {
    pub views: Vec<View>,
    pub input_dims: Vec<usize>,
    pub first_stage: Vec<Vec<LearnerModel>>,
    pub second_stage: Vec<LearnerModel>,
    pub meta: SvmModel,
    pub fingerprint: String,
}

/// Intermediate matrices of a fit, for inspection.
#[derive(Debug, Clone)]
pub struct StackTrace {
    pub z_first: Vec<OofMatrix>,
    pub h: FeatureMatrix,
    pub z_second: OofMatrix,
}

fn check_views(views: &[&FeatureMatrix]) -> Result<()> {
    if views.is_empty() || views.len() > 2 {
        return Err(PersError::Config(format!("expected one or two views, got {}", views.len())));
    }
    if views.len() == 2 && views[0].row_ids != views[1].row_ids {
        return Err(PersError::Alignment("views have different row ids".into()));
    }
    Ok(())
}

pub fn pers_fit(views: &[&FeatureMatrix], y: &[bool], config: &StackingConfig) -> Result<PersModel> {
    pers_fit_traced(views, y, config).map(|(m, _)| m)
}

/// Fit on one view (its first-stage matrix is used as H directly) or two
/// views (fused).
pub fn pers_fit_traced(views: &[&FeatureMatrix], y: &[bool], config: &StackingConfig) -> Result<(PersModel, StackTrace)> {
    config.validate()?;
    check_views(views)?;
    let mut z_first = Vec::with_capacity(views.len());
    let mut first_stage = Vec::with_capacity(views.len());
    for v in views {
        let (z, models) = first_stage_oof(v, y, config)?;
        z_first.push(z);
        first_stage.push(models);
    }
    let h = if z_first.len() == 2 {
        fuse_views(&z_first[0], &z_first[1])?
    } else {
        z_first[0].to_feature_matrix(View::Fused)?
    };
    let (z_second, second_stage) = second_stage_oof(&h, y, config)?;
    let meta = fit_meta_classifier(&z_second, y, &config.meta)?;
    let model = PersModel {
        views: views.iter().map(|v| v.view).collect(),
        input_dims: views.iter().map(|v| v.ncols()).collect(),
        first_stage,
        second_stage,
        meta,
        fingerprint: config.fingerprint(),
    };
    Ok((model, StackTrace { z_first, h, z_second }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub label: bool,
    pub score: f64,
}

fn stage_scores(models: &[LearnerModel], x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((x.nrows(), models.len()));
    for (j, m) in models.iter().enumerate() {
        for (i, s) in m.predict_scores(x)?.into_iter().enumerate() {
            out[[i, j]] = s;
        }
    }
    Ok(out)
}

/// Score users through the full-fit chain; `score` is the meta decision value.
pub fn pers_predict(model: &PersModel, views: &[&FeatureMatrix]) -> Result<Vec<Prediction>> {
    check_views(views)?;
    if views.len() != model.views.len() {
        return Err(PersError::Dimension(format!(
            "model was trained on {} view(s), got {}",
            model.views.len(),
            views.len()
        )));
    }
    for (v, &d) in views.iter().zip(&model.input_dims) {
        if v.ncols() != d {
            return Err(PersError::Dimension(format!("{} view has {} columns, model expects {d}", v.view, v.ncols())));
        }
    }
    let firsts = views
        .iter()
        .zip(&model.first_stage)
        .map(|(v, models)| stage_scores(models, v.data.view()))
        .collect::<Result<Vec<_>>>()?;
    let views_h: Vec<ArrayView2<f64>> = firsts.iter().map(|a| a.view()).collect();
    let h = ndarray::concatenate(Axis(1), &views_h).map_err(|e| PersError::Dimension(e.to_string()))?;
    let z = stage_scores(&model.second_stage, h.view())?;
    let decision = model.meta.decision_values(z.view())?;
    Ok(views[0]
        .row_ids
        .iter()
        .zip(decision)
        .map(|(id, d)| Prediction {
            user_id: id.clone(),
            label: d >= 0.0,
            score: d,
        })
        .collect())
}

impl PersModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Binary target for one dimension; the first pole (E, S, T, J) is positive.
pub fn dimension_targets(labels: &[MbtiLabel], dim: Dimension) -> Vec<bool> {
    labels.iter().map(|l| l.pole(dim)).collect()
}

/// Score a set of per-dimension models on held-out users.
pub fn evaluate_dimensions(
    system: &str,
    models: &[(Dimension, &PersModel)],
    views: &[&FeatureMatrix],
    labels: &[MbtiLabel],
) -> Result<ReportRow> {
    let mut dimensions = Vec::with_capacity(models.len());
    for &(dim, model) in models {
        let pred: Vec<bool> = pers_predict(model, views)?.into_iter().map(|p| p.label).collect();
        dimensions.push(DimensionScores::compute(dim, &dimension_targets(labels, dim), &pred)?);
    }
    let views_name = match models.first().map(|m| m.1.views.as_slice()) {
        Some([v]) => v.to_string(),
        _ => "both".to_string(),
    };
    Ok(ReportRow {
        system: system.to_string(),
        views: views_name,
        dimensions,
    })
}

#[cfg(test)]
mod tests;
