use ndarray::ArrayView2;
use rand::seq::index::sample;

use super::binning::{bin_exact, bin_quantile};
use super::tree::{grow_tree, Criterion, FeatureMode, GrowParams, Stats};
use super::{check_training_input, require_both_classes, GbtParams, LearnerModel, LearnerSpec, ModelBody};
use crate::error::Result;
use crate::rng::rng_from;

const STREAM_SUBSAMPLE: u64 = 1;
const STREAM_COLSAMPLE: u64 = 2;
const STREAM_GOSS: u64 = 3;

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss `ln(1 + e^m) - y m` at margin `m`.
pub fn logistic_loss(margin: f64, y: bool) -> f64 {
    let softplus = margin.max(0.0) + (-margin.abs()).exp().ln_1p();
    if y {
        softplus - margin
    } else {
        softplus
    }
}

/// First and second derivative of [`logistic_loss`] with respect to the margin.
pub fn logistic_grad_hess(margin: f64, y: bool) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - f64::from(u8::from(y)), p * (1.0 - p))
}

struct Newton {
    lambda: f64,
    learning_rate: f64,
}

impl Newton {
    fn score(&self, s: &Stats) -> f64 {
        let denom = s.b + self.lambda;
        if denom > 0.0 {
            s.a * s.a / denom
        } else {
            0.0
        }
    }
}

impl Criterion for Newton {
    fn leaf_value(&self, s: &Stats) -> f64 {
        let denom = s.b + self.lambda;
        if denom > 0.0 {
            -s.a / denom * self.learning_rate
        } else {
            0.0
        }
    }

    fn gain(&self, parent: &Stats, left: &Stats, right: &Stats) -> f64 {
        0.5 * (self.score(left) + self.score(right) - self.score(parent))
    }

    fn is_terminal(&self, _: &Stats) -> bool {
        false
    }

    fn min_gain(&self) -> Option<f64> {
        Some(0.0)
    }
}

fn mean_loss(margins: &[f64], y: &[bool]) -> f64 {
    margins.iter().zip(y).map(|(&m, &t)| logistic_loss(m, t)).sum::<f64>() / y.len() as f64
}

/// Rows kept this round plus a per-row multiplier applied to g and h.
fn goss_rows(grad: &[f64], top_rate: f64, other_rate: f64, seed: u64, round: usize) -> (Vec<u32>, Vec<f64>) {
    let n = grad.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| grad[j].abs().total_cmp(&grad[i].abs()).then(i.cmp(&j)));
    let n_top = ((top_rate * n as f64).round() as usize).clamp(1, n);
    let rest = &order[n_top..];
    let n_other = ((other_rate * n as f64).round() as usize).min(rest.len());
    let mut rng = rng_from(seed, &[round as u64, STREAM_GOSS]);
    let amplify = (1.0 - top_rate) / other_rate;
    let mut weight = vec![1.0; n];
    let mut rows: Vec<u32> = order[..n_top].iter().map(|&i| i as u32).collect();
    for k in sample(&mut rng, rest.len(), n_other) {
        let i = rest[k];
        weight[i] = amplify;
        rows.push(i as u32);
    }
    rows.sort_unstable();
    (rows, weight)
}

/// Second-order boosted trees under logistic loss. Each round fits a tree to
/// the gradients and hessians at the current margins; leaf weights are
/// `-G / (H + lambda)` shrunk by the learning rate.
pub fn fit_gradient_boosted_trees(x: ArrayView2<f64>, y: &[bool], params: &GbtParams, seed: u64) -> Result<LearnerModel> {
    let spec = LearnerSpec::Gbt(*params);
    spec.validate()?;
    check_training_input(x, y)?;
    require_both_classes(y)?;
    let n = x.nrows();
    let d = x.ncols();
    let binned = if params.histogram {
        bin_quantile(x, params.n_bins)
    } else {
        bin_exact(x)
    };
    let prior = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let base_margin = (prior / (1.0 - prior)).ln();
    let crit = Newton {
        lambda: params.lambda,
        learning_rate: params.learning_rate,
    };
    let goss = params.goss.filter(|g| g.top_rate < 1.0);

    let mut margins = vec![base_margin; n];
    let mut train_loss = vec![mean_loss(&margins, y)];
    let mut trees = Vec::with_capacity(params.n_trees);
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for round in 0..params.n_trees {
        for i in 0..n {
            (grad[i], hess[i]) = logistic_grad_hess(margins[i], y[i]);
        }
        let (samples, sa, sb) = if let Some(g) = goss {
            let (rows, w) = goss_rows(&grad, g.top_rate, g.other_rate, seed, round);
            let sa: Vec<f64> = grad.iter().zip(&w).map(|(a, b)| a * b).collect();
            let sb: Vec<f64> = hess.iter().zip(&w).map(|(a, b)| a * b).collect();
            (rows, sa, sb)
        } else if params.subsample < 1.0 {
            let k = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut rng = rng_from(seed, &[round as u64, STREAM_SUBSAMPLE]);
            let mut rows: Vec<u32> = sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
            rows.sort_unstable();
            (rows, grad.clone(), hess.clone())
        } else {
            ((0..n as u32).collect(), grad.clone(), hess.clone())
        };
        let features = if params.colsample < 1.0 {
            let k = ((params.colsample * d as f64).round() as usize).clamp(1, d);
            let mut rng = rng_from(seed, &[round as u64, STREAM_COLSAMPLE]);
            let mut f = sample(&mut rng, d, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };
        let grow = GrowParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            features: FeatureMode::All(features),
        };
        let tree = grow_tree(&binned, &sa, &sb, samples, &crit, &grow, None);
        for (m, r) in margins.iter_mut().zip(&rows) {
            *m += tree.predict_row(r);
        }
        train_loss.push(mean_loss(&margins, y));
        trees.push(tree);
    }
    Ok(LearnerModel {
        spec,
        seed,
        n_features: d,
        body: ModelBody::Boosted {
            base_margin,
            trees,
            train_loss,
        },
    })
}
