//! Multi-view stacked generalization for MBTI personality profiling.
//!
//! The crate covers the full batch pipeline: corpus ingestion and filtering,
//! social-text normalization, TF-IDF/LSA and image-concept/PCA featurization,
//! base learners (CART, random forest, second-order boosted trees with
//! optional GOSS), the two-step out-of-fold stacking ensemble with a linear
//! SVM meta classifier, evaluation metrics, and a seeded synthetic corpus
//! generator with planted signal.

pub mod archive;
pub mod corpus;
pub mod decomp;
pub mod error;
pub mod features;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod stacking;
pub mod synth;
pub mod textprep;

pub use error::{PersError, Result};
