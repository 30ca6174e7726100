use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::rng::rng_from;

fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<bool>) {
    let mut rng = rng_from(seed, &[]);
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let x = Array2::from_shape_fn((n, d), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        let shift = if j < 2 { if y[i] { sep } else { -sep } } else { 0.0 };
        z + shift
    });
    (x, y)
}

fn accuracy(scores: &[f64], y: &[bool]) -> f64 {
    scores.iter().zip(y).filter(|(s, t)| (**s >= 0.5) == **t).count() as f64 / y.len() as f64
}

fn deep_cart() -> CartParams {
    CartParams {
        max_depth: 64,
        min_leaf: 1,
    }
}

#[test]
fn stump_on_four_points() {
    let x = array![[0.0], [1.0], [2.0], [3.0]];
    let y = [false, false, true, true];
    let m = fit_decision_tree(x.view(), &y, &CartParams { max_depth: 1, min_leaf: 1 }, 0).unwrap();
    let ModelBody::Tree { tree } = &m.body else { panic!() };
    match tree.nodes[0] {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(feature, 0);
            assert!(threshold > 1.0 && threshold <= 2.0);
        }
        _ => panic!("expected a split"),
    }
    assert_eq!(accuracy(&m.predict_scores(x.view()).unwrap(), &y), 1.0);
}

/// Exhaustive Gini stump oracle: every feature, every midpoint.
fn best_stump(x: &Array2<f64>, y: &[bool]) -> (usize, f64, f64) {
    let gini = |ys: &[bool]| {
        let n = ys.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let p = ys.iter().filter(|&&v| v).count() as f64 / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    };
    let parent = gini(y);
    let mut best = (usize::MAX, f64::NAN, f64::NEG_INFINITY);
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = x.column(f).to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<bool> = (0..y.len()).filter(|&i| x[[i, f]] <= t).map(|i| y[i]).collect();
            let r: Vec<bool> = (0..y.len()).filter(|&i| x[[i, f]] > t).map(|i| y[i]).collect();
            let gain = parent - gini(&l) - gini(&r);
            if gain > best.2 + 1e-12 {
                best = (f, t, gain);
            }
        }
    }
    best
}

#[test]
fn root_split_matches_exhaustive_oracle() {
    for seed in 0..20 {
        let mut rng = rng_from(seed, &[9]);
        let x = Array2::from_shape_fn((30, 4), |_| f64::from(rng.random_range(0..8u8)));
        let y: Vec<bool> = (0..30).map(|i| x[[i, 1]] + x[[i, 2]] > 7.0 || i % 7 == 0).collect();
        if y.iter().all(|&v| v) || !y.iter().any(|&v| v) {
            continue;
        }
        let m = fit_decision_tree(x.view(), &y, &CartParams { max_depth: 1, min_leaf: 1 }, 0).unwrap();
        let ModelBody::Tree { tree } = &m.body else { panic!() };
        let (f, t, _) = best_stump(&x, &y);
        match tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!((feature, threshold), (f, t), "seed {seed}");
            }
            _ => panic!("expected a split"),
        }
    }
}

#[test]
fn single_class_and_conflicting_duplicates() {
    let x = array![[0.0], [1.0], [2.0]];
    let m = fit_decision_tree(x.view(), &[true, true, true], &deep_cart(), 0).unwrap();
    let ModelBody::Tree { tree } = &m.body else { panic!() };
    assert_eq!(tree.nodes, vec![Node::Leaf { value: 1.0 }]);

    let x = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
    let m = fit_decision_tree(x.view(), &[true, false, false, false], &deep_cart(), 0).unwrap();
    assert_eq!(m.predict_scores(x.view()).unwrap(), vec![0.25; 4]);

    let empty = Array2::<f64>::zeros((0, 2));
    assert!(matches!(
        fit_decision_tree(empty.view(), &[], &deep_cart(), 0),
        Err(PersError::DegenerateInput(_))
    ));
    let m = fit_decision_tree(array![[0.0, 1.0], [1.0, 0.0]].view(), &[true, false], &deep_cart(), 0).unwrap();
    assert!(matches!(
        m.predict_scores(array![[0.0]].view()),
        Err(PersError::Dimension(_))
    ));
}

#[test]
fn deep_tree_memorizes_training_rows() {
    let mut rng = rng_from(5, &[]);
    let x = Array2::from_shape_fn((200, 5), |_| rng.random::<f64>());
    let y: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
    let m = fit_decision_tree(x.view(), &y, &deep_cart(), 0).unwrap();
    let s = m.predict_scores(x.view()).unwrap();
    for (si, &yi) in s.iter().zip(&y) {
        assert_eq!(*si, if yi { 1.0 } else { 0.0 });
    }
}

#[test]
fn forest_reduces_to_single_tree() {
    let (x, y) = blobs(80, 5, 0.7, 3);
    let cart = fit_decision_tree(x.view(), &y, &CartParams { max_depth: 6, min_leaf: 1 }, 0).unwrap();
    let forest = fit_random_forest(
        x.view(),
        &y,
        &ForestParams {
            n_trees: 1,
            max_depth: 6,
            min_leaf: 1,
            bootstrap: false,
            sqrt_features: false,
        },
        11,
    )
    .unwrap();
    let (ModelBody::Tree { tree }, ModelBody::Forest { trees }) = (&cart.body, &forest.body) else { panic!() };
    assert_eq!(&trees[0], tree);
    assert_eq!(cart.predict_scores(x.view()).unwrap(), forest.predict_scores(x.view()).unwrap());
}

fn small_forest(n_trees: usize) -> ForestParams {
    ForestParams {
        n_trees,
        max_depth: 8,
        ..ForestParams::default()
    }
}

#[test]
fn forest_is_mean_of_trees_and_deterministic() {
    let (x, y) = blobs(200, 6, 1.5, 4);
    let a = fit_random_forest(x.view(), &y, &small_forest(30), 7).unwrap();
    let b = fit_random_forest(x.view(), &y, &small_forest(30), 7).unwrap();
    assert_eq!(a, b);
    let scores = a.predict_scores(x.view()).unwrap();
    assert!(accuracy(&scores, &y) >= 0.95);
    let ModelBody::Forest { trees } = &a.body else { panic!() };
    for (i, row) in x.rows().into_iter().enumerate() {
        let r = row.to_vec();
        let mean = trees.iter().map(|t| t.predict_row(&r)).sum::<f64>() / trees.len() as f64;
        assert!((mean - scores[i]).abs() <= 1e-12);
    }
    let c = fit_random_forest(x.view(), &y, &small_forest(30), 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn forest_beats_median_tree_on_held_out_data() {
    let mut wins = 0;
    for seed in 0..5 {
        let (x, y) = blobs(600, 8, 0.5, 100 + seed);
        let (xtr, xte) = (x.slice(ndarray::s![..300, ..]), x.slice(ndarray::s![300.., ..]));
        let (ytr, yte) = (&y[..300], &y[300..]);
        let f = fit_random_forest(xtr, ytr, &small_forest(25), seed).unwrap();
        let forest_acc = accuracy(&f.predict_scores(xte).unwrap(), yte);
        let ModelBody::Forest { trees } = &f.body else { panic!() };
        let mut tree_accs: Vec<f64> = trees
            .iter()
            .map(|t| {
                let s: Vec<f64> = xte.rows().into_iter().map(|r| t.predict_row(&r.to_vec())).collect();
                accuracy(&s, yte)
            })
            .collect();
        tree_accs.sort_by(f64::total_cmp);
        if forest_acc >= tree_accs[tree_accs.len() / 2] {
            wins += 1;
        }
    }
    assert!(wins >= 3, "forest beat the median tree in only {wins}/5 seeds");
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = rng_from(77, &[]);
    let step = 1e-6;
    for _ in 0..100 {
        let m: f64 = rng.random_range(-6.0..6.0);
        let y: bool = rng.random();
        let (g, h) = logistic_grad_hess(m, y);
        let fd_g = (logistic_loss(m + step, y) - logistic_loss(m - step, y)) / (2.0 * step);
        let fd_h = (logistic_grad_hess(m + step, y).0 - logistic_grad_hess(m - step, y).0) / (2.0 * step);
        assert!((g - fd_g).abs() <= 1e-5 * g.abs().max(1e-3), "g {g} vs {fd_g}");
        assert!((h - fd_h).abs() <= 1e-5 * h.abs().max(1e-3), "h {h} vs {fd_h}");
    }
}

fn gbt(n_trees: usize, depth: usize, lr: f64) -> GbtParams {
    GbtParams {
        n_trees,
        max_depth: depth,
        learning_rate: lr,
        ..GbtParams::default()
    }
}

#[test]
fn zero_rounds_give_prior() {
    let x = array![[0.0], [1.0], [2.0], [3.0]];
    let m = fit_gradient_boosted_trees(x.view(), &[false, true, false, true], &gbt(0, 1, 0.1), 0).unwrap();
    assert_eq!(m.predict_scores(x.view()).unwrap(), vec![0.5; 4]);
    let m = fit_gradient_boosted_trees(x.view(), &[false, true, true, true], &gbt(0, 1, 0.1), 0).unwrap();
    assert!(m.predict_scores(x.view()).unwrap().iter().all(|&s| (s - 0.75).abs() < 1e-12));
    assert!(matches!(
        fit_gradient_boosted_trees(x.view(), &[true; 4], &gbt(5, 1, 0.1), 0),
        Err(PersError::DegenerateInput(_))
    ));
}

#[test]
fn boosting_four_points() {
    let x = array![[0.0], [1.0], [2.0], [3.0]];
    let y = [false, false, true, true];
    // frozen values from iterating the symmetric two-leaf Newton update by hand
    for (lambda, want) in [(0.0, 0.0011051873426940727), (1.0, 0.11465902933142165)] {
        let p = GbtParams { lambda, ..gbt(20, 1, 0.3) };
        let m = fit_gradient_boosted_trees(x.view(), &y, &p, 0).unwrap();
        let s = m.predict_scores(x.view()).unwrap();
        assert_eq!(accuracy(&s, &y), 1.0);
        let ModelBody::Boosted { train_loss, .. } = &m.body else { panic!() };
        let last = *train_loss.last().unwrap();
        assert!((last - want).abs() < 1e-9, "lambda {lambda}: {last}");
        let direct = s.iter().zip(&y).map(|(&p, &t)| if t { -p.ln() } else { -(1.0 - p).ln() }).sum::<f64>() / 4.0;
        assert!((direct - last).abs() < 1e-12);
    }
}

#[test]
fn training_loss_never_increases() {
    let (x, y) = blobs(300, 6, 0.6, 21);
    for histogram in [false, true] {
        let p = GbtParams {
            histogram,
            n_bins: 16,
            ..gbt(60, 3, 0.1)
        };
        let m = fit_gradient_boosted_trees(x.view(), &y, &p, 3).unwrap();
        let ModelBody::Boosted { train_loss, .. } = &m.body else { panic!() };
        assert_eq!(train_loss.len(), 61);
        for w in train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn goss_with_full_top_rate_is_plain_histogram() {
    let (x, y) = blobs(200, 5, 0.5, 8);
    let hist = GbtParams {
        histogram: true,
        n_bins: 32,
        ..gbt(20, 3, 0.2)
    };
    let goss = GbtParams {
        goss: Some(GossParams {
            top_rate: 1.0,
            other_rate: 0.1,
        }),
        ..hist
    };
    let a = fit_gradient_boosted_trees(x.view(), &y, &hist, 1).unwrap();
    let b = fit_gradient_boosted_trees(x.view(), &y, &goss, 1).unwrap();
    assert_eq!(a.body, b.body);
    let sampled = GbtParams {
        goss: Some(GossParams::default()),
        ..hist
    };
    let c = fit_gradient_boosted_trees(x.view(), &y, &sampled, 1).unwrap();
    assert_ne!(a.body, c.body);
    assert!(accuracy(&c.predict_scores(x.view()).unwrap(), &y) > 0.8);
}

#[test]
fn spec_validation() {
    let bad = [
        LearnerSpec::Cart(CartParams { max_depth: 0, min_leaf: 1 }),
        LearnerSpec::RandomForest(ForestParams {
            n_trees: 0,
            ..ForestParams::default()
        }),
        LearnerSpec::Gbt(GbtParams {
            learning_rate: 0.0,
            ..GbtParams::default()
        }),
        LearnerSpec::Gbt(GbtParams {
            subsample: 1.5,
            ..GbtParams::default()
        }),
        LearnerSpec::Gbt(GbtParams {
            goss: Some(GossParams {
                top_rate: 0.8,
                other_rate: 0.5,
            }),
            ..GbtParams::default()
        }),
    ];
    for s in bad {
        assert!(matches!(s.validate(), Err(PersError::Config(_))), "{s:?}");
    }
    for s in LearnerSpec::default_base_specs() {
        s.validate().unwrap();
    }
}

#[test]
fn models_round_trip_through_json() {
    let (x, y) = blobs(100, 4, 0.8, 2);
    for spec in [
        LearnerSpec::Cart(CartParams::default()),
        LearnerSpec::RandomForest(small_forest(5)),
        LearnerSpec::Gbt(GbtParams {
            subsample: 0.7,
            colsample: 0.5,
            ..gbt(10, 3, 0.1)
        }),
    ] {
        let m = fit_learner(x.view(), &y, &spec, 13).unwrap();
        let back = LearnerModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict_scores(x.view()).unwrap(), m.predict_scores(x.view()).unwrap());
    }
    assert!(LearnerModel::from_json("{\"format\":\"other\",\"version\":1}").is_err());
}

#[test]
fn fits_are_independent_of_thread_count() {
    let (x, y) = blobs(400, 12, 0.4, 6);
    let specs = [
        LearnerSpec::RandomForest(small_forest(16)),
        LearnerSpec::Gbt(gbt(15, 4, 0.1)),
        LearnerSpec::Gbt(GbtParams {
            histogram: true,
            goss: Some(GossParams::default()),
            ..gbt(15, 4, 0.1)
        }),
    ];
    let run = |threads: usize| -> Vec<String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            specs
                .iter()
                .map(|s| fit_learner(x.view(), &y, s, 99).unwrap().to_json().unwrap())
                .collect()
        })
    };
    assert_eq!(run(1), run(6));
}

#[test]
fn svm_symmetric_pair() {
    let x = array![[-1.0], [1.0]];
    for c in [1.0, 10.0] {
        let m = fit_linear_svm(x.view(), &[false, true], &SvmParams { c, ..SvmParams::default() }).unwrap();
        let d = m.decision_values(x.view()).unwrap();
        assert!(d[0] < 0.0 && d[1] > 0.0, "{d:?}");
    }
}

#[test]
fn svm_labels_survive_scaling_and_duplication() {
    let (x, y) = blobs(120, 3, 2.5, 12);
    let p = SvmParams::default();
    let base = fit_linear_svm(x.view(), &y, &p).unwrap().predict(x.view()).unwrap();
    assert!(base.iter().zip(&y).filter(|(a, b)| a == b).count() >= 115);

    let scaled = &x * 2.0;
    let m2 = fit_linear_svm(scaled.view(), &y, &p).unwrap();
    assert_eq!(m2.predict(scaled.view()).unwrap(), base);

    let doubled = ndarray::concatenate![ndarray::Axis(0), x, x];
    let y2: Vec<bool> = y.iter().chain(&y).copied().collect();
    let m3 = fit_linear_svm(doubled.view(), &y2, &p).unwrap();
    assert_eq!(m3.predict(x.view()).unwrap(), base);
}

#[test]
fn svm_constant_features_predict_majority() {
    let x = Array2::from_elem((10, 3), 0.4);
    let uniform = SvmParams {
        class_weight: ClassWeight::Uniform,
        ..SvmParams::default()
    };
    let y: Vec<bool> = (0..10).map(|i| i < 7).collect();
    let m = fit_linear_svm(x.view(), &y, &uniform).unwrap();
    assert!(m.predict(x.view()).unwrap().iter().all(|&v| v));
    let y: Vec<bool> = (0..10).map(|i| i < 3).collect();
    let m = fit_linear_svm(x.view(), &y, &uniform).unwrap();
    assert!(m.predict(x.view()).unwrap().iter().all(|&v| !v));

    // balanced weights cancel the pull of the majority on the bias
    let m = fit_linear_svm(x.view(), &y, &SvmParams::default()).unwrap();
    assert!(m.bias.abs() < 1e-9, "{}", m.bias);
    assert!(matches!(
        fit_linear_svm(x.view(), &[true; 10], &SvmParams::default()),
        Err(PersError::DegenerateInput(_))
    ));
}

#[test]
fn svm_single_score_is_a_threshold() {
    let mut rng = rng_from(31, &[]);
    let y: Vec<bool> = (0..300).map(|i| i % 3 != 0).collect();
    let s: Vec<f64> = y
        .iter()
        .map(|&t| (if t { 0.65 } else { 0.35 } + 0.2 * rng.random::<f64>() - 0.1).clamp(0.0, 1.0))
        .collect();
    let x = Array2::from_shape_vec((300, 1), s.clone()).unwrap();
    let uniform = SvmParams {
        class_weight: ClassWeight::Uniform,
        ..SvmParams::default()
    };
    let m = fit_linear_svm(x.view(), &y, &uniform).unwrap();
    let labels = m.predict(x.view()).unwrap();
    assert!(m.weights[0] > 0.0);
    let mut order: Vec<usize> = (0..300).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let first_pos = order.iter().position(|&i| labels[i]).unwrap();
    assert!(order[first_pos..].iter().all(|&i| labels[i]));
    assert!(order[..first_pos].iter().all(|&i| !labels[i]));

    // best-threshold oracle
    let best = (0..=300)
        .map(|k| {
            order
                .iter()
                .enumerate()
                .filter(|&(r, &i)| (r >= k) == y[i])
                .count()
        })
        .max()
        .unwrap();
    let got = labels.iter().zip(&y).filter(|(a, b)| a == b).count();
    assert!(got + 6 >= best, "svm {got} vs oracle {best}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn scores_are_finite_probabilities(n in 4usize..40, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = rng_from(seed, &[]);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
        let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        y[0] = true;
        y[1] = false;
        for spec in [
            LearnerSpec::Cart(CartParams::default()),
            LearnerSpec::RandomForest(small_forest(4)),
            LearnerSpec::Gbt(gbt(8, 3, 0.3)),
            LearnerSpec::Gbt(GbtParams { histogram: true, n_bins: 4, goss: Some(GossParams::default()), ..gbt(8, 3, 0.3) }),
        ] {
            let m = fit_learner(x.view(), &y, &spec, seed).unwrap();
            for s in m.predict_scores(x.view()).unwrap() {
                prop_assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            }
        }
    }
}
