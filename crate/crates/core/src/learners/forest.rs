use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;

use super::binning::bin_exact;
use super::tree::{grow_tree, label_stats, FeatureMode, Gini, GrowParams};
use super::{check_training_input, ForestParams, LearnerModel, LearnerSpec, ModelBody};
use crate::error::Result;
use crate::rng::rng_from;

/// Bagged CARTs; the score is the mean of the tree scores. Tree `t` draws its
/// bootstrap sample and per-node feature subsets from its own stream, so the
/// forest does not depend on how trees are scheduled.
pub fn fit_random_forest(x: ArrayView2<f64>, y: &[bool], params: &ForestParams, seed: u64) -> Result<LearnerModel> {
    let spec = LearnerSpec::RandomForest(*params);
    spec.validate()?;
    check_training_input(x, y)?;
    let n = x.nrows();
    let d = x.ncols();
    let binned = bin_exact(x);
    let (sa, sb) = label_stats(y);
    let features = if params.sqrt_features {
        FeatureMode::Subset((d as f64).sqrt().ceil() as usize)
    } else {
        FeatureMode::All((0..d).collect())
    };
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(seed, &[t as u64]);
            let samples: Vec<u32> = if params.bootstrap {
                let mut s: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
                s.sort_unstable();
                s
            } else {
                (0..n as u32).collect()
            };
            grow_tree(&binned, &sa, &sb, samples, &Gini, &grow, Some(&mut rng))
        })
        .collect();
    Ok(LearnerModel {
        spec,
        seed,
        n_features: d,
        body: ModelBody::Forest { trees },
    })
}
