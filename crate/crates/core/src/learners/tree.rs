use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::{bin_exact, BinnedMatrix};
use super::{check_training_input, CartParams, LearnerModel, LearnerSpec, ModelBody};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary tree in pre-order; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Additive node statistics. For Gini `a` is the positive weight and `b`
/// the total weight; for Newton trees they are the gradient and hessian sums.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Stats {
    pub count: usize,
    pub a: f64,
    pub b: f64,
}

impl Stats {
    fn add(&mut self, a: f64, b: f64) {
        self.count += 1;
        self.a += a;
        self.b += b;
    }

    fn plus(&mut self, o: &Stats) {
        self.count += o.count;
        self.a += o.a;
        self.b += o.b;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            count: self.count - o.count,
            a: self.a - o.a,
            b: self.b - o.b,
        }
    }
}

pub(crate) trait Criterion: Sync {
    fn leaf_value(&self, s: &Stats) -> f64;
    fn gain(&self, parent: &Stats, left: &Stats, right: &Stats) -> f64;
    fn is_terminal(&self, s: &Stats) -> bool;
    /// Splits must beat this gain; `None` accepts the best admissible split.
    fn min_gain(&self) -> Option<f64>;
}

pub(crate) struct Gini;

fn gini_mass(s: &Stats) -> f64 {
    if s.b <= 0.0 {
        0.0
    } else {
        2.0 * s.a * (s.b - s.a) / s.b
    }
}

impl Criterion for Gini {
    fn leaf_value(&self, s: &Stats) -> f64 {
        if s.b > 0.0 {
            (s.a / s.b).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn gain(&self, parent: &Stats, left: &Stats, right: &Stats) -> f64 {
        gini_mass(parent) - gini_mass(left) - gini_mass(right)
    }

    fn is_terminal(&self, s: &Stats) -> bool {
        s.a <= 0.0 || s.a >= s.b
    }

    fn min_gain(&self) -> Option<f64> {
        None
    }
}

pub(crate) enum FeatureMode {
    /// Scan this ascending feature list at every node.
    All(Vec<usize>),
    /// Scan a fresh random subset of this size per node, falling back to the
    /// remaining features (in the same random order) when none can split.
    Subset(usize),
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features: FeatureMode,
}

const PARALLEL_WORK: usize = 1 << 15;

struct Grower<'a, C: Criterion> {
    binned: &'a BinnedMatrix,
    sa: &'a [f64],
    sb: &'a [f64],
    crit: &'a C,
    params: &'a GrowParams,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
}

/// Candidate split: gain and the last bin code on the left side.
type Candidate = Option<(f64, u32)>;

impl<C: Criterion> Grower<'_, C> {
    fn bin_stats(&self, feature: usize, samples: &[u32]) -> Vec<(u32, Stats)> {
        let codes = &self.binned.codes[feature];
        let n_bins = self.binned.n_bins(feature);
        if n_bins <= 4 * samples.len() {
            let mut dense = vec![Stats::default(); n_bins];
            for &s in samples {
                let s = s as usize;
                dense[codes[s] as usize].add(self.sa[s], self.sb[s]);
            }
            dense
                .into_iter()
                .enumerate()
                .filter(|(_, st)| st.count > 0)
                .map(|(b, st)| (b as u32, st))
                .collect()
        } else {
            let mut keyed: Vec<(u32, u32)> = samples.iter().map(|&s| (codes[s as usize], s)).collect();
            keyed.sort_by_key(|k| k.0);
            let mut out: Vec<(u32, Stats)> = Vec::new();
            for (code, s) in keyed {
                let s = s as usize;
                match out.last_mut() {
                    Some((c, st)) if *c == code => st.add(self.sa[s], self.sb[s]),
                    _ => {
                        let mut st = Stats::default();
                        st.add(self.sa[s], self.sb[s]);
                        out.push((code, st));
                    }
                }
            }
            out
        }
    }

    fn best_for_feature(&self, feature: usize, samples: &[u32], parent: &Stats) -> Candidate {
        let bins = self.bin_stats(feature, samples);
        let mut left = Stats::default();
        let mut best: Candidate = None;
        for (code, st) in &bins[..bins.len().saturating_sub(1)] {
            left.plus(st);
            let right = parent.minus(&left);
            if left.count < self.params.min_leaf || right.count < self.params.min_leaf {
                continue;
            }
            let gain = self.crit.gain(parent, &left, &right);
            if let Some(min) = self.crit.min_gain() {
                if gain.is_nan() || gain <= min {
                    continue;
                }
            }
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, *code));
            }
        }
        best
    }

    /// Best split over `features` (ascending), ties to the earliest feature.
    fn best_among(&self, features: &[usize], samples: &[u32], parent: &Stats) -> Option<(f64, usize, u32)> {
        let evals: Vec<Candidate> = if features.len() * samples.len() >= PARALLEL_WORK {
            features
                .par_iter()
                .map(|&f| self.best_for_feature(f, samples, parent))
                .collect()
        } else {
            features
                .iter()
                .map(|&f| self.best_for_feature(f, samples, parent))
                .collect()
        };
        let mut best: Option<(f64, usize, u32)> = None;
        for (&f, cand) in features.iter().zip(evals) {
            if let Some((g, code)) = cand {
                if best.is_none_or(|(bg, _, _)| g > bg) {
                    best = Some((g, f, code));
                }
            }
        }
        best
    }

    fn find_split(&mut self, samples: &[u32], parent: &Stats) -> Option<(f64, usize, u32)> {
        match &self.params.features {
            FeatureMode::All(list) => self.best_among(list, samples, parent),
            FeatureMode::Subset(m_try) => {
                let m_try = *m_try;
                let mut order: Vec<usize> = (0..self.binned.n_features()).collect();
                if let Some(rng) = self.rng.as_deref_mut() {
                    order.shuffle(rng);
                }
                for chunk in order.chunks(m_try.max(1)) {
                    let mut chunk = chunk.to_vec();
                    chunk.sort_unstable();
                    if let Some(found) = self.best_among(&chunk, samples, parent) {
                        return Some(found);
                    }
                }
                None
            }
        }
    }

    fn grow(&mut self, samples: Vec<u32>, depth: usize) -> usize {
        let mut stats = Stats::default();
        for &s in &samples {
            stats.add(self.sa[s as usize], self.sb[s as usize]);
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.crit.leaf_value(&stats),
        });
        if depth >= self.params.max_depth
            || samples.len() < 2 * self.params.min_leaf
            || self.crit.is_terminal(&stats)
        {
            return idx;
        }
        let Some((_, feature, code)) = self.find_split(&samples, &stats) else {
            return idx;
        };
        let codes = &self.binned.codes[feature];
        let (left, right): (Vec<u32>, Vec<u32>) = samples.iter().partition(|&&s| codes[s as usize] <= code);
        let threshold = self.binned.cuts[feature][code as usize];
        drop(samples);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        idx
    }
}

/// Grow one tree on the given sample multiset (row indices may repeat).
pub(crate) fn grow_tree<C: Criterion>(
    binned: &BinnedMatrix,
    sa: &[f64],
    sb: &[f64],
    samples: Vec<u32>,
    crit: &C,
    params: &GrowParams,
    rng: Option<&mut ChaCha8Rng>,
) -> Tree {
    let mut g = Grower {
        binned,
        sa,
        sb,
        crit,
        params,
        rng,
        nodes: Vec::new(),
    };
    g.grow(samples, 0);
    Tree { nodes: g.nodes }
}

pub(crate) fn label_stats(y: &[bool]) -> (Vec<f64>, Vec<f64>) {
    (y.iter().map(|&v| f64::from(u8::from(v))).collect(), vec![1.0; y.len()])
}

/// Greedy CART on Gini impurity using every feature at every node.
pub fn fit_decision_tree(x: ArrayView2<f64>, y: &[bool], params: &CartParams, seed: u64) -> Result<LearnerModel> {
    let spec = LearnerSpec::Cart(*params);
    spec.validate()?;
    check_training_input(x, y)?;
    let binned = bin_exact(x);
    let (sa, sb) = label_stats(y);
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features: FeatureMode::All((0..x.ncols()).collect()),
    };
    let tree = grow_tree(&binned, &sa, &sb, (0..x.nrows() as u32).collect(), &Gini, &grow, None);
    Ok(LearnerModel {
        spec,
        seed,
        n_features: x.ncols(),
        body: ModelBody::Tree { tree },
    })
}
