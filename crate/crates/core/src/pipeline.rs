//! Batch commands wiring the modules together: stats, preprocess, featurize,
//! train, evaluate, predict and synth.
//!
//! A trained model archive holds the split, the fitted featurizers, one
//! stacked model per dimension and any baseline models. Its manifest carries
//! the fingerprint of the configuration that produced it; evaluation and
//! prediction refuse an archive whose fingerprint differs from the current
//! configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::Archive;
use crate::corpus::{
    corpus_stats, filter_min_posts, ingest_corpus_with_store, stratified_split, Corpus, Dimension, SplitAssignment,
    StatsReport, UserRecord,
};
use crate::decomp::{pca_fit, project, Projector};
use crate::error::{PersError, Result};
use crate::features::{
    aggregate_image_concepts, build_user_documents, fit_image_featurizer, fit_text_featurizer, FeatureMatrix,
    ImageConceptStore, ImageFeaturizer, TextFeaturizer, TextFeaturizerConfig, View, Vocabulary,
};
use crate::learners::{fit_learner, LearnerModel, LearnerSpec};
use crate::metrics::{DimensionScores, EvalReport, ReportRow};
use crate::rng::{derive_seed, derive_seed_str};
use crate::stacking::{
    dimension_targets, evaluate_dimensions, fingerprint_json, pers_fit, pers_predict, PersModel, StackingConfig,
};
use crate::synth::{generate_corpus, write_summary, write_synth, SynthConfig, SynthFiles};
use crate::textprep::{preprocess_or_drop, NormalizerConfig};

const ARCHIVE_FORMAT: &str = "pers-model";
const FEATURIZER_FORMAT: &str = "pers-featurizers";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub users: PathBuf,
    pub images: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Model archive; defaults to `out_dir/model.tar`.
    pub model: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            users: PathBuf::from("users.jsonl"),
            images: None,
            out_dir: PathBuf::from("pers_out"),
            model: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizerOptions {
    pub emoji_table: Option<PathBuf>,
    pub datetime_patterns: Option<PathBuf>,
    pub drop_self_reports: bool,
}

impl NormalizerOptions {
    pub fn build(&self) -> Result<NormalizerConfig> {
        let mut cfg = NormalizerConfig::from_files(self.emoji_table.as_deref(), self.datetime_patterns.as_deref())?;
        cfg.drop_self_reports = self.drop_self_reports;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageOptions {
    pub k: usize,
}

impl Default for ImageOptions {
    fn default() -> Self {
        ImageOptions { k: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub ratio: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { ratio: 0.85 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSelection {
    Text,
    Image,
    Both,
}

impl ViewSelection {
    pub fn uses_text(self) -> bool {
        matches!(self, ViewSelection::Text | ViewSelection::Both)
    }

    pub fn uses_image(self) -> bool {
        matches!(self, ViewSelection::Image | ViewSelection::Both)
    }
}

impl fmt::Display for ViewSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewSelection::Text => "text",
            ViewSelection::Image => "image",
            ViewSelection::Both => "both",
        })
    }
}

impl std::str::FromStr for ViewSelection {
    type Err = PersError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ViewSelection::Text),
            "image" => Ok(ViewSelection::Image),
            "both" => Ok(ViewSelection::Both),
            other => Err(PersError::Config(format!("unknown views {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    None,
    /// Each base learner on each selected view alone.
    Single,
    /// Each base learner on the concatenated text and image features.
    Early,
    /// As `Early`, after PCA on the concatenation.
    EarlyPca,
}

impl std::str::FromStr for BaselineMode {
    type Err = PersError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BaselineMode::None),
            "single" => Ok(BaselineMode::Single),
            "early" => Ok(BaselineMode::Early),
            "early_pca" => Ok(BaselineMode::EarlyPca),
            other => Err(PersError::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub normalizer: NormalizerOptions,
    pub min_posts: usize,
    pub text: TextFeaturizerConfig,
    pub image: ImageOptions,
    /// `stacking.seed` is replaced by a value derived from the top-level seed.
    pub stacking: StackingConfig,
    pub split: SplitOptions,
    pub views: ViewSelection,
    pub dimensions: Vec<Dimension>,
    pub baseline: BaselineMode,
    pub baseline_pca: usize,
    pub synth: SynthConfig,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            normalizer: NormalizerOptions::default(),
            min_posts: 10,
            text: TextFeaturizerConfig::default(),
            image: ImageOptions::default(),
            stacking: StackingConfig::default(),
            split: SplitOptions::default(),
            views: ViewSelection::Both,
            dimensions: Dimension::ALL.to_vec(),
            baseline: BaselineMode::None,
            baseline_pca: 200,
            synth: SynthConfig::default(),
            seed: 0,
            workers: 0,
        }
    }
}

fn file_digest(path: Option<&Path>) -> Result<String> {
    match path {
        None => Ok("bundled".into()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| PersError::io(p, e))?;
            Ok(hex::encode(Sha256::digest(&bytes)))
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text.k == 0 || self.image.k == 0 || self.baseline_pca == 0 {
            return Err(PersError::Config("featurizer dimensions must be at least 1".into()));
        }
        if self.text.min_df == 0 || !(self.text.max_df_ratio > 0.0 && self.text.max_df_ratio <= 1.0) {
            return Err(PersError::Config("text needs min_df >= 1 and max_df_ratio in (0, 1]".into()));
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(PersError::Config(format!("split ratio must lie in (0, 1), got {}", self.split.ratio)));
        }
        if self.dimensions.is_empty() {
            return Err(PersError::Config("no dimensions selected".into()));
        }
        let mut dims = self.dimensions.clone();
        dims.sort();
        dims.dedup();
        if dims.len() != self.dimensions.len() {
            return Err(PersError::Config("dimensions listed more than once".into()));
        }
        if matches!(self.baseline, BaselineMode::Early | BaselineMode::EarlyPca) && self.views != ViewSelection::Both {
            return Err(PersError::Config("early-fusion baselines need views = both".into()));
        }
        self.stacking.validate()
    }

    /// Hash of every setting that shapes a trained model. Paths enter only
    /// through the content of the normalizer resources; worker count, synth
    /// settings, dimension selection and baseline selection are left out.
    pub fn fingerprint(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("config is an object");
        for key in ["paths", "workers", "synth", "dimensions", "baseline"] {
            obj.remove(key);
        }
        obj.insert(
            "normalizer".into(),
            serde_json::json!({
                "emoji_table": file_digest(self.normalizer.emoji_table.as_deref())?,
                "datetime_patterns": file_digest(self.normalizer.datetime_patterns.as_deref())?,
                "drop_self_reports": self.normalizer.drop_self_reports,
            }),
        );
        if let Some(s) = obj.get_mut("stacking").and_then(|s| s.as_object_mut()) {
            s.remove("seed");
        }
        Ok(fingerprint_json(&v))
    }

    /// Stacking settings with the seed derived from the pipeline seed.
    pub fn stacking_config(&self) -> StackingConfig {
        StackingConfig {
            seed: derive_seed_str(self.seed, "stacking"),
            ..self.stacking.clone()
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("model.tar"))
    }
}

/// Run `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PersError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineInput {
    Text,
    Image,
    Early,
    EarlyPca,
}

impl fmt::Display for BaselineInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineInput::Text => "text",
            BaselineInput::Image => "image",
            BaselineInput::Early => "early",
            BaselineInput::EarlyPca => "early_pca",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub system: String,
    pub input: BaselineInput,
    pub learner: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModels {
    pub info: BaselineInfo,
    pub models: BTreeMap<Dimension, LearnerModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub views: ViewSelection,
    pub dimensions: Vec<Dimension>,
    pub text_dim: Option<usize>,
    pub image_dim: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub baselines: Vec<BaselineInfo>,
}

/// Everything `train` produces.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub split: SplitAssignment,
    pub text: Option<TextFeaturizer>,
    pub image: Option<ImageFeaturizer>,
    pub early_pca: Option<Projector>,
    pub models: BTreeMap<Dimension, PersModel>,
    pub baselines: Vec<BaselineModels>,
}

/// Fitted featurizers, shared by `featurize` and `train`.
#[derive(Debug, Clone)]
pub struct Featurizers {
    pub text: Option<TextFeaturizer>,
    pub image: Option<ImageFeaturizer>,
}

/// Feature matrices for one set of users, rows in corpus order.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub text: Option<FeatureMatrix>,
    pub image: Option<FeatureMatrix>,
}

impl ViewFeatures {
    fn stack_inputs(&self) -> Vec<&FeatureMatrix> {
        self.text.iter().chain(self.image.iter()).collect()
    }

    fn early(&self) -> Result<FeatureMatrix> {
        match (&self.text, &self.image) {
            (Some(t), Some(i)) => t.hstack(i, View::Fused),
            _ => Err(PersError::Config("early fusion needs both views".into())),
        }
    }
}

fn require_store<'a>(views: ViewSelection, store: Option<&'a ImageConceptStore>) -> Result<Option<&'a ImageConceptStore>> {
    if views.uses_image() && store.is_none() {
        return Err(PersError::Config(format!("views = {views} needs an image store (paths.images)")));
    }
    Ok(if views.uses_image() { store } else { None })
}

/// Fit the featurizers for `views` on `train` only. Output dimensions are
/// capped by what the training data can support.
pub fn fit_featurizers(
    cfg: &PipelineConfig,
    train: &Corpus,
    store: Option<&ImageConceptStore>,
    normalizer: &NormalizerConfig,
) -> Result<Featurizers> {
    let store = require_store(cfg.views, store)?;
    let text = if cfg.views.uses_text() {
        let docs = build_user_documents(train, normalizer);
        let vocab = Vocabulary::fit(docs.values().map(String::as_str), cfg.text.min_df, cfg.text.max_df_ratio)?;
        let k = cfg.text.k.min(docs.len()).min(vocab.len());
        let text_cfg = TextFeaturizerConfig { k, ..cfg.text };
        Some(fit_text_featurizer(&docs, text_cfg, derive_seed_str(cfg.seed, "text"))?)
    } else {
        None
    };
    let image = match store {
        Some(store) => {
            let agg = aggregate_image_concepts(train, store)?;
            let flagged = agg.has_data.iter().filter(|&&b| b).count();
            let k = cfg.image.k.min(flagged).min(agg.ncols());
            Some(fit_image_featurizer(&agg, k.max(1), derive_seed_str(cfg.seed, "image"))?)
        }
        None => None,
    };
    Ok(Featurizers { text, image })
}

pub fn apply_featurizers(
    feats: &Featurizers,
    corpus: &Corpus,
    store: Option<&ImageConceptStore>,
    normalizer: &NormalizerConfig,
) -> Result<ViewFeatures> {
    let text = match &feats.text {
        Some(f) => Some(f.apply(&build_user_documents(corpus, normalizer))?),
        None => None,
    };
    let image = match &feats.image {
        Some(f) => {
            let store = store.ok_or_else(|| PersError::Config("image featurizer present but no image store".into()))?;
            Some(f.apply(&aggregate_image_concepts(corpus, store)?)?)
        }
        None => None,
    };
    Ok(ViewFeatures { text, image })
}

fn baseline_name(spec: &LearnerSpec) -> &'static str {
    match spec {
        LearnerSpec::Gbt(p) if p.goss.is_some() => "gbt_goss",
        LearnerSpec::Gbt(p) if p.histogram => "gbt_hist",
        other => other.kind_name(),
    }
}

/// System names for the configured base learners, made unique by index.
fn baseline_systems(specs: &[LearnerSpec]) -> Vec<String> {
    let names: Vec<&str> = specs.iter().map(baseline_name).collect();
    names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}_{j}")
            } else {
                n.to_string()
            }
        })
        .collect()
}

fn baseline_inputs(cfg: &PipelineConfig) -> Vec<BaselineInput> {
    match cfg.baseline {
        BaselineMode::None => vec![],
        BaselineMode::Single => {
            let mut v = Vec::new();
            if cfg.views.uses_text() {
                v.push(BaselineInput::Text);
            }
            if cfg.views.uses_image() {
                v.push(BaselineInput::Image);
            }
            v
        }
        BaselineMode::Early => vec![BaselineInput::Early],
        BaselineMode::EarlyPca => vec![BaselineInput::EarlyPca],
    }
}

fn baseline_matrix(input: BaselineInput, feats: &ViewFeatures, pca: Option<&Projector>) -> Result<FeatureMatrix> {
    let missing = || PersError::Config(format!("baseline input {input} is not available"));
    match input {
        BaselineInput::Text => feats.text.clone().ok_or_else(missing),
        BaselineInput::Image => feats.image.clone().ok_or_else(missing),
        BaselineInput::Early => feats.early(),
        BaselineInput::EarlyPca => {
            let early = feats.early()?;
            let proj = pca.ok_or_else(missing)?;
            let data = project(proj, early.data.view())?;
            FeatureMatrix::new(data, early.row_ids, View::Fused, early.has_data)
        }
    }
}

/// Filter, split, featurize and fit every requested model.
pub fn train_bundle(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    store: Option<&ImageConceptStore>,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let normalizer = cfg.normalizer.build()?;
    let store = require_store(cfg.views, store)?;
    let corpus = filter_min_posts(corpus, cfg.min_posts);
    if corpus.is_empty() {
        return Err(PersError::InsufficientData(format!("no user has at least {} posts", cfg.min_posts)));
    }
    let split = stratified_split(&corpus, cfg.split.ratio, cfg.seed)?;
    let train = corpus.subset(&split.train_ids)?;
    let feats = fit_featurizers(cfg, &train, store, &normalizer)?;
    let x = apply_featurizers(&feats, &train, store, &normalizer)?;
    let labels = train.labels();
    let stacking = cfg.stacking_config();

    let inputs = x.stack_inputs();
    let mut models = BTreeMap::new();
    for &dim in &cfg.dimensions {
        let y = dimension_targets(&labels, dim);
        models.insert(dim, pers_fit(&inputs, &y, &stacking)?);
    }

    let baseline_inputs = baseline_inputs(cfg);
    let early_pca = if baseline_inputs.contains(&BaselineInput::EarlyPca) {
        let early = x.early()?;
        let k = cfg.baseline_pca.min(early.nrows()).min(early.ncols());
        Some(pca_fit(early.data.view(), k, derive_seed_str(cfg.seed, "early_pca"))?)
    } else {
        None
    };
    let systems = baseline_systems(&cfg.stacking.base_specs);
    let base_seed = derive_seed_str(cfg.seed, "baseline");
    let mut baselines = Vec::new();
    for &input in &baseline_inputs {
        let m = baseline_matrix(input, &x, early_pca.as_ref())?;
        for (j, spec) in cfg.stacking.base_specs.iter().enumerate() {
            let mut per_dim = BTreeMap::new();
            for &dim in &cfg.dimensions {
                let y = dimension_targets(&labels, dim);
                let seed = derive_seed(base_seed, &[j as u64, dim.index() as u64]);
                per_dim.insert(dim, fit_learner(m.data.view(), &y, spec, seed)?);
            }
            baselines.push(BaselineModels {
                info: BaselineInfo {
                    system: systems[j].clone(),
                    input,
                    learner: j,
                },
                models: per_dim,
            });
        }
    }

    let manifest = Manifest {
        format: ARCHIVE_FORMAT.into(),
        version: 1,
        fingerprint: cfg.fingerprint()?,
        views: cfg.views,
        dimensions: cfg.dimensions.clone(),
        text_dim: feats.text.as_ref().map(TextFeaturizer::dim),
        image_dim: feats.image.as_ref().map(ImageFeaturizer::dim),
        n_train: split.train_ids.len(),
        n_test: split.test_ids.len(),
        baselines: baselines.iter().map(|b| b.info.clone()).collect(),
    };
    Ok(ModelBundle {
        manifest,
        split,
        text: feats.text,
        image: feats.image,
        early_pca,
        models,
        baselines,
    })
}

impl ModelBundle {
    pub fn featurizers(&self) -> Featurizers {
        Featurizers {
            text: self.text.clone(),
            image: self.image.clone(),
        }
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        a.insert_json("manifest.json", &self.manifest)?;
        a.insert_json("split.json", &self.split)?;
        if let Some(t) = &self.text {
            t.store("text", &mut a)?;
        }
        if let Some(i) = &self.image {
            i.store("image", &mut a)?;
        }
        if let Some(p) = &self.early_pca {
            a.insert("baselines/early_pca.bin", p.to_bytes());
        }
        for (dim, m) in &self.models {
            a.insert(format!("pers/{dim}.json"), m.to_json()?.into_bytes());
        }
        for b in &self.baselines {
            for (dim, m) in &b.models {
                a.insert(
                    format!("baselines/{}/{}/{dim}.json", b.info.input, b.info.system),
                    m.to_json()?.into_bytes(),
                );
            }
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let manifest: Manifest = a.get_json("manifest.json")?;
        if manifest.format != ARCHIVE_FORMAT || manifest.version != 1 {
            return Err(PersError::Format(format!(
                "unsupported model archive {} v{}",
                manifest.format, manifest.version
            )));
        }
        let split = a.get_json("split.json")?;
        let text = match manifest.text_dim {
            Some(_) => Some(TextFeaturizer::load("text", a)?),
            None => None,
        };
        let image = match manifest.image_dim {
            Some(_) => Some(ImageFeaturizer::load("image", a)?),
            None => None,
        };
        let early_pca = if a.contains("baselines/early_pca.bin") {
            Some(Projector::from_bytes(a.get("baselines/early_pca.bin")?)?)
        } else {
            None
        };
        let utf8 = |name: &str| -> Result<String> {
            String::from_utf8(a.get(name)?.to_vec()).map_err(|e| PersError::Format(format!("{name}: {e}")))
        };
        let mut models = BTreeMap::new();
        for &dim in &manifest.dimensions {
            let model = PersModel::from_json(&utf8(&format!("pers/{dim}.json"))?)?;
            models.insert(dim, model);
        }
        let mut baselines = Vec::new();
        for info in &manifest.baselines {
            let mut per_dim = BTreeMap::new();
            for &dim in &manifest.dimensions {
                let name = format!("baselines/{}/{}/{dim}.json", info.input, info.system);
                per_dim.insert(dim, LearnerModel::from_json(&utf8(&name)?)?);
            }
            baselines.push(BaselineModels {
                info: info.clone(),
                models: per_dim,
            });
        }
        Ok(ModelBundle {
            manifest,
            split,
            text,
            image,
            early_pca,
            models,
            baselines,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| PersError::io(dir, e))?;
        }
        self.to_archive()?.write_file(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PersError::MissingArtifact(path.to_path_buf()));
        }
        Self::from_archive(&Archive::read_file(path)?)
    }

    /// Refuse a bundle built under a different configuration.
    pub fn check_fingerprint(&self, cfg: &PipelineConfig) -> Result<()> {
        let expected = cfg.fingerprint()?;
        if self.manifest.fingerprint != expected {
            return Err(PersError::FingerprintMismatch {
                expected,
                found: self.manifest.fingerprint.clone(),
            });
        }
        let stacking = cfg.stacking_config().fingerprint();
        for m in self.models.values() {
            if m.fingerprint != stacking {
                return Err(PersError::FingerprintMismatch {
                    expected: stacking,
                    found: m.fingerprint.clone(),
                });
            }
        }
        Ok(())
    }

    fn dims_for(&self, cfg: &PipelineConfig) -> Result<Vec<Dimension>> {
        let dims: Vec<Dimension> = self
            .manifest
            .dimensions
            .iter()
            .copied()
            .filter(|d| cfg.dimensions.contains(d))
            .collect();
        if dims.is_empty() {
            return Err(PersError::Config("none of the requested dimensions was trained".into()));
        }
        Ok(dims)
    }
}

fn source_name(corpus: &Corpus) -> String {
    let mut sources: Vec<&str> = corpus.users.iter().map(|u| u.source.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    match sources.as_slice() {
        [one] => one.to_string(),
        _ => "mixed".to_string(),
    }
}

/// Score the bundle's held-out users. `corpus` must contain every test id.
pub fn evaluate_bundle(
    cfg: &PipelineConfig,
    bundle: &ModelBundle,
    corpus: &Corpus,
    store: Option<&ImageConceptStore>,
) -> Result<EvalReport> {
    bundle.check_fingerprint(cfg)?;
    let normalizer = cfg.normalizer.build()?;
    let test = corpus.subset(&bundle.split.test_ids)?;
    let x = apply_featurizers(&bundle.featurizers(), &test, store, &normalizer)?;
    let labels = test.labels();
    let dims = bundle.dims_for(cfg)?;

    let inputs = x.stack_inputs();
    let pers: Vec<(Dimension, &PersModel)> = dims.iter().map(|d| (*d, &bundle.models[d])).collect();
    let mut pers_row = evaluate_dimensions("pers", &pers, &inputs, &labels)?;
    pers_row.views = bundle.manifest.views.to_string();
    let mut rows = vec![pers_row];

    for b in &bundle.baselines {
        let m = baseline_matrix(b.info.input, &x, bundle.early_pca.as_ref())?;
        let mut dimensions = Vec::new();
        for &dim in &dims {
            let pred = b.models[&dim].predict_labels(m.data.view())?;
            dimensions.push(DimensionScores::compute(dim, &dimension_targets(&labels, dim), &pred)?);
        }
        rows.push(ReportRow {
            system: b.info.system.clone(),
            views: b.info.input.to_string(),
            dimensions,
        });
    }
    Ok(EvalReport {
        source: source_name(&test),
        fingerprint: bundle.manifest.fingerprint.clone(),
        n_test: test.len() as u64,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrediction {
    pub user_id: String,
    #[serde(rename = "EI", skip_serializing_if = "Option::is_none")]
    pub ei: Option<char>,
    #[serde(rename = "SN", skip_serializing_if = "Option::is_none")]
    pub sn: Option<char>,
    #[serde(rename = "TF", skip_serializing_if = "Option::is_none")]
    pub tf: Option<char>,
    #[serde(rename = "JP", skip_serializing_if = "Option::is_none")]
    pub jp: Option<char>,
    /// Meta decision value per dimension; positive favors the first pole.
    pub scores: BTreeMap<Dimension, f64>,
}

impl UserPrediction {
    fn set(&mut self, dim: Dimension, first_pole: bool, score: f64) {
        let (a, b) = dim.poles();
        let letter = Some(if first_pole { a } else { b });
        match dim {
            Dimension::EI => self.ei = letter,
            Dimension::SN => self.sn = letter,
            Dimension::TF => self.tf = letter,
            Dimension::JP => self.jp = letter,
        }
        self.scores.insert(dim, score);
    }
}

/// Predict every user of `corpus` with the stacked models.
pub fn predict_bundle(
    cfg: &PipelineConfig,
    bundle: &ModelBundle,
    corpus: &Corpus,
    store: Option<&ImageConceptStore>,
) -> Result<Vec<UserPrediction>> {
    bundle.check_fingerprint(cfg)?;
    let normalizer = cfg.normalizer.build()?;
    let x = apply_featurizers(&bundle.featurizers(), corpus, store, &normalizer)?;
    let inputs = x.stack_inputs();
    let mut out: Vec<UserPrediction> = corpus
        .users
        .iter()
        .map(|u| UserPrediction {
            user_id: u.user_id.clone(),
            ei: None,
            sn: None,
            tf: None,
            jp: None,
            scores: BTreeMap::new(),
        })
        .collect();
    for dim in bundle.dims_for(cfg)? {
        for (row, p) in out.iter_mut().zip(pers_predict(&bundle.models[&dim], &inputs)?) {
            row.set(dim, p.label, p.score);
        }
    }
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PersError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| PersError::io(path, e))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Corpus, Option<ImageConceptStore>)> {
    let images = if cfg.views.uses_image() {
        let p = cfg.paths.images.as_deref();
        if p.is_none() {
            return Err(PersError::Config(format!("views = {} needs paths.images", cfg.views)));
        }
        p
    } else {
        None
    };
    ingest_corpus_with_store(&cfg.paths.users, images)
}

/// Statistics of the ingested corpus; writes `stats.json` and `stats.txt`.
pub fn run_stats(cfg: &PipelineConfig) -> Result<StatsReport> {
    let (corpus, _) = ingest_corpus_with_store(&cfg.paths.users, None)?;
    let report = corpus_stats(&corpus);
    ensure_dir(&cfg.paths.out_dir)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&cfg.paths.out_dir.join("stats.json"), &json)?;
    write_text(&cfg.paths.out_dir.join("stats.txt"), &report.to_text())?;
    Ok(report)
}

/// Normalize every post and write `preprocessed.jsonl`. Posts that normalize
/// to nothing (or are dropped as self-reports) are removed, as are users left
/// without posts.
pub fn run_preprocess(cfg: &PipelineConfig) -> Result<PathBuf> {
    let (corpus, _) = ingest_corpus_with_store(&cfg.paths.users, None)?;
    let normalizer = cfg.normalizer.build()?;
    let users: Vec<UserRecord> = corpus
        .users
        .iter()
        .filter_map(|u| {
            let posts: Vec<String> = u.posts.iter().filter_map(|p| preprocess_or_drop(p, &normalizer)).collect();
            (!posts.is_empty()).then(|| UserRecord {
                posts,
                ..u.clone()
            })
        })
        .collect();
    ensure_dir(&cfg.paths.out_dir)?;
    let path = cfg.paths.out_dir.join("preprocessed.jsonl");
    Corpus::new(users)?.write_jsonl(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizeOutputs {
    pub featurizers: PathBuf,
    pub text: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

/// Fit featurizers on the training split and write them (`featurizers.tar`)
/// with the feature matrices of all users (`{view}_features.csv`).
pub fn run_featurize(cfg: &PipelineConfig) -> Result<FeaturizeOutputs> {
    cfg.validate()?;
    let (corpus, store) = load_inputs(cfg)?;
    let normalizer = cfg.normalizer.build()?;
    let corpus = filter_min_posts(&corpus, cfg.min_posts);
    let split = stratified_split(&corpus, cfg.split.ratio, cfg.seed)?;
    let train = corpus.subset(&split.train_ids)?;
    let feats = fit_featurizers(cfg, &train, store.as_ref(), &normalizer)?;
    let x = apply_featurizers(&feats, &corpus, store.as_ref(), &normalizer)?;

    let mut a = Archive::new();
    a.insert_json(
        "manifest.json",
        &serde_json::json!({
            "format": FEATURIZER_FORMAT,
            "version": 1,
            "fingerprint": cfg.fingerprint()?,
        }),
    )?;
    a.insert_json("split.json", &split)?;
    if let Some(t) = &feats.text {
        t.store("text", &mut a)?;
    }
    if let Some(i) = &feats.image {
        i.store("image", &mut a)?;
    }
    let dir = &cfg.paths.out_dir;
    ensure_dir(dir)?;
    let featurizers = dir.join("featurizers.tar");
    a.write_file(&featurizers)?;
    let write = |m: &Option<FeatureMatrix>, name: &str| -> Result<Option<PathBuf>> {
        match m {
            Some(m) => {
                let p = dir.join(name);
                m.write_csv(&p)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    };
    let text = write(&x.text, "text_features.csv")?;
    let image = write(&x.image, "image_features.csv")?;
    Ok(FeaturizeOutputs {
        featurizers,
        text,
        image,
    })
}

pub fn run_train(cfg: &PipelineConfig) -> Result<(PathBuf, ModelBundle)> {
    cfg.validate()?;
    let (corpus, store) = load_inputs(cfg)?;
    let bundle = train_bundle(cfg, &corpus, store.as_ref())?;
    let path = cfg.model_path();
    bundle.write(&path)?;
    Ok((path, bundle))
}

/// Evaluate the stored model on its held-out users; writes `report.json` and
/// `report.txt`.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<EvalReport> {
    let bundle = ModelBundle::read(&cfg.model_path())?;
    bundle.check_fingerprint(cfg)?;
    let (corpus, store) = load_inputs(cfg)?;
    let report = evaluate_bundle(cfg, &bundle, &corpus, store.as_ref())?;
    ensure_dir(&cfg.paths.out_dir)?;
    write_text(&cfg.paths.out_dir.join("report.json"), &report.to_json()?)?;
    write_text(&cfg.paths.out_dir.join("report.txt"), &report.to_text())?;
    Ok(report)
}

/// Predict every user in the corpus file; writes `predictions.jsonl`.
pub fn run_predict(cfg: &PipelineConfig) -> Result<PathBuf> {
    let bundle = ModelBundle::read(&cfg.model_path())?;
    bundle.check_fingerprint(cfg)?;
    let (corpus, store) = load_inputs(cfg)?;
    let preds = predict_bundle(cfg, &bundle, &corpus, store.as_ref())?;
    ensure_dir(&cfg.paths.out_dir)?;
    let path = cfg.paths.out_dir.join("predictions.jsonl");
    let mut buf = Vec::new();
    for p in &preds {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(&path).map_err(|e| PersError::io(&path, e))?;
    f.write_all(&buf).map_err(|e| PersError::io(&path, e))?;
    Ok(path)
}

/// Generate a synthetic corpus into `out_dir` (`users.jsonl`, `images.csv`,
/// `synth_summary.json`).
pub fn run_synth(cfg: &PipelineConfig) -> Result<SynthFiles> {
    let (corpus, store) = generate_corpus(&cfg.synth)?;
    ensure_dir(&cfg.paths.out_dir)?;
    let files = write_synth(&corpus, &store, &cfg.paths.out_dir)?;
    write_summary(&cfg.synth, &cfg.paths.out_dir.join("synth_summary.json"))?;
    Ok(files)
}
