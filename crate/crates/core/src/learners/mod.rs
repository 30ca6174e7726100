//! Base classifiers (CART, random forest, second-order boosted trees) and the
//! linear SVM used as meta classifier.
//!
//! Labels are `bool` with `true` for the positive class. Every learner scores
//! rows in `[0, 1]`; the predicted label is `score >= 0.5`.

mod binning;
mod boost;
mod forest;
mod svm;
mod tree;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{PersError, Result};

pub use boost::{fit_gradient_boosted_trees, logistic_grad_hess, logistic_loss, sigmoid};
pub use forest::fit_random_forest;
pub use svm::{fit_linear_svm, ClassWeight, SvmModel, SvmParams};
pub use tree::{fit_decision_tree, Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 12,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Draw `ceil(sqrt(d))` candidate features per node instead of all `d`.
    pub sqrt_features: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: 12,
            min_leaf: 1,
            bootstrap: true,
            sqrt_features: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GossParams {
    pub top_rate: f64,
    pub other_rate: f64,
}

impl Default for GossParams {
    fn default() -> Self {
        GossParams {
            top_rate: 0.2,
            other_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub lambda: f64,
    pub subsample: f64,
    pub colsample: f64,
    /// Quantile-binned split search with `n_bins` bins; otherwise every
    /// distinct training value is a candidate threshold.
    pub histogram: bool,
    pub n_bins: usize,
    pub goss: Option<GossParams>,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 200,
            max_depth: 5,
            learning_rate: 0.1,
            min_leaf: 1,
            lambda: 1.0,
            subsample: 1.0,
            colsample: 1.0,
            histogram: false,
            n_bins: 64,
            goss: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Cart(CartParams),
    RandomForest(ForestParams),
    Gbt(GbtParams),
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(PersError::Config(format!("{name} must lie in (0, 1], got {v}")))
    }
}

fn check_depth(d: usize) -> Result<()> {
    if d == 0 {
        return Err(PersError::Config("max_depth must be at least 1".into()));
    }
    Ok(())
}

impl LearnerSpec {
    /// Random forest over histogram-free CARTs with the stock defaults.
    pub fn forest() -> Self {
        LearnerSpec::RandomForest(ForestParams::default())
    }

    pub fn gbt_exact() -> Self {
        LearnerSpec::Gbt(GbtParams::default())
    }

    pub fn gbt_goss() -> Self {
        LearnerSpec::Gbt(GbtParams {
            histogram: true,
            goss: Some(GossParams::default()),
            ..GbtParams::default()
        })
    }

    /// The three base learners used by default in each stacking stage.
    pub fn default_base_specs() -> Vec<LearnerSpec> {
        vec![Self::forest(), Self::gbt_exact(), Self::gbt_goss()]
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LearnerSpec::Cart(_) => "cart",
            LearnerSpec::RandomForest(_) => "random_forest",
            LearnerSpec::Gbt(_) => "gbt",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Cart(p) => {
                check_depth(p.max_depth)?;
                if p.min_leaf == 0 {
                    return Err(PersError::Config("min_leaf must be at least 1".into()));
                }
            }
            LearnerSpec::RandomForest(p) => {
                check_depth(p.max_depth)?;
                if p.n_trees == 0 {
                    return Err(PersError::Config("n_trees must be at least 1".into()));
                }
                if p.min_leaf == 0 {
                    return Err(PersError::Config("min_leaf must be at least 1".into()));
                }
            }
            LearnerSpec::Gbt(p) => {
                check_depth(p.max_depth)?;
                check_rate("learning_rate", p.learning_rate)?;
                check_rate("subsample", p.subsample)?;
                check_rate("colsample", p.colsample)?;
                if p.min_leaf == 0 {
                    return Err(PersError::Config("min_leaf must be at least 1".into()));
                }
                if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
                    return Err(PersError::Config(format!("lambda must be finite and >= 0, got {}", p.lambda)));
                }
                if p.histogram && p.n_bins < 2 {
                    return Err(PersError::Config("n_bins must be at least 2".into()));
                }
                if let Some(g) = p.goss {
                    check_rate("goss top_rate", g.top_rate)?;
                    check_rate("goss other_rate", g.other_rate)?;
                    if g.top_rate < 1.0 && g.top_rate + g.other_rate > 1.0 {
                        return Err(PersError::Config("goss top_rate + other_rate must not exceed 1".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelBody {
    Tree { tree: Tree },
    Forest { trees: Vec<Tree> },
    Boosted {
        base_margin: f64,
        trees: Vec<Tree>,
        /// Mean training log-loss before the first round and after each round.
        train_loss: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerModel {
    pub spec: LearnerSpec,
    pub seed: u64,
    pub n_features: usize,
    pub body: ModelBody,
}

impl LearnerModel {
    fn score_row(&self, row: &[f64]) -> f64 {
        match &self.body {
            ModelBody::Tree { tree } => tree.predict_row(row),
            ModelBody::Forest { trees } => {
                trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / trees.len() as f64
            }
            ModelBody::Boosted {
                base_margin, trees, ..
            } => sigmoid(base_margin + trees.iter().map(|t| t.predict_row(row)).sum::<f64>()),
        }
    }

    pub fn predict_scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(PersError::Dimension(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        check_finite(x)?;
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(rows.par_iter().map(|r| self.score_row(r)).collect())
    }

    pub fn predict_labels(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.predict_scores(x)?.into_iter().map(|s| s >= 0.5).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VersionedModel {
            format: MODEL_FORMAT.into(),
            version: 1,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: VersionedModel = serde_json::from_str(s)?;
        if v.format != MODEL_FORMAT || v.version != 1 {
            return Err(PersError::Format(format!("unsupported learner format {} v{}", v.format, v.version)));
        }
        Ok(v.model)
    }
}

const MODEL_FORMAT: &str = "pers-learner";

#[derive(Serialize, Deserialize)]
struct VersionedModel {
    format: String,
    version: u32,
    model: LearnerModel,
}

/// Fit whichever learner `spec` names.
pub fn fit_learner(x: ArrayView2<f64>, y: &[bool], spec: &LearnerSpec, seed: u64) -> Result<LearnerModel> {
    match spec {
        LearnerSpec::Cart(p) => fit_decision_tree(x, y, p, seed),
        LearnerSpec::RandomForest(p) => fit_random_forest(x, y, p, seed),
        LearnerSpec::Gbt(p) => fit_gradient_boosted_trees(x, y, p, seed),
    }
}

pub(crate) fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(PersError::NonFiniteInput(format!("x[{i}, {j}] = {v}")));
    }
    Ok(())
}

pub(crate) fn check_training_input(x: ArrayView2<f64>, y: &[bool]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(PersError::DegenerateInput("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(PersError::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    if x.ncols() == 0 {
        return Err(PersError::Dimension("training matrix has no columns".into()));
    }
    check_finite(x)
}

pub(crate) fn require_both_classes(y: &[bool]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(PersError::DegenerateInput("labels contain a single class".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
