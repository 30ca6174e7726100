use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::learners::{CartParams, ForestParams, GbtParams, GossParams};

fn light_config(seed: u64) -> StackingConfig {
    StackingConfig {
        folds: 5,
        base_specs: vec![
            LearnerSpec::RandomForest(ForestParams {
                n_trees: 15,
                max_depth: 6,
                ..ForestParams::default()
            }),
            LearnerSpec::Gbt(GbtParams {
                n_trees: 15,
                max_depth: 3,
                ..GbtParams::default()
            }),
            LearnerSpec::Gbt(GbtParams {
                n_trees: 15,
                max_depth: 3,
                histogram: true,
                n_bins: 16,
                goss: Some(GossParams::default()),
                ..GbtParams::default()
            }),
        ],
        meta: SvmParams::default(),
        seed,
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i:04}")).collect()
}

/// Two views whose first columns shift with the label.
fn views(n: usize, sep: f64, seed: u64) -> (FeatureMatrix, FeatureMatrix, Vec<bool>) {
    let mut rng = rng_from(seed, &[]);
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
    let mut make = |d: usize, view: View| {
        let data = Array2::from_shape_fn((n, d), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if j == 0 { if y[i] { sep } else { -sep } } else { 0.0 }
        });
        FeatureMatrix::new(data, ids(n), view, vec![true; n]).unwrap()
    };
    let t = make(6, View::Text);
    let i = make(4, View::Image);
    (t, i, y)
}

#[test]
fn folds_are_near_equal_and_shared() {
    let f = assign_folds(10, 5, 3).unwrap();
    for k in 0..5 {
        assert_eq!(f.iter().filter(|&&v| v == k).count(), 2);
    }
    assert_eq!(f, assign_folds(10, 5, 3).unwrap());
    assert_ne!(f, assign_folds(10, 5, 4).unwrap());
    let f = assign_folds(13, 5, 1).unwrap();
    let sizes: Vec<usize> = (0..5).map(|k| f.iter().filter(|&&v| v == k).count()).collect();
    assert_eq!(sizes, vec![3, 3, 3, 2, 2]);
    assert!(matches!(assign_folds(3, 5, 0), Err(PersError::Fold(_))));
    assert!(matches!(assign_folds(3, 1, 0), Err(PersError::Fold(_))));
}

#[test]
fn stage_shapes_and_fold_bookkeeping() {
    let (t, _, y) = views(10, 2.0, 1);
    let cfg = light_config(7);
    let (z, full) = first_stage_oof(&t, &y, &cfg).unwrap();
    assert_eq!(z.scores.dim(), (10, 3));
    assert_eq!(full.len(), 3);
    for k in 0..5 {
        assert_eq!(z.held_out_rows(k).len(), 2);
        let train = z.training_rows(k);
        assert!(z.held_out_rows(k).iter().all(|r| !train.contains(r)));
    }
    assert!(z.scores.iter().all(|s| (0.0..=1.0).contains(s)));

    let h = fuse_views(&z, &z).unwrap();
    assert_eq!(h.data.dim(), (10, 6));
    assert_eq!(h.data.slice(ndarray::s![.., ..3]), h.data.slice(ndarray::s![.., 3..]));
    let (z2, _) = second_stage_oof(&h, &y, &cfg).unwrap();
    assert_eq!(z2.scores.dim(), (10, 3));
    assert_eq!(z2.folds, z.folds);
}

#[test]
fn leave_one_out_and_errors() {
    let (t, _, y) = views(8, 2.0, 2);
    let cfg = StackingConfig {
        folds: 8,
        ..light_config(1)
    };
    let (z, _) = first_stage_oof(&t, &y, &cfg).unwrap();
    for k in 0..8 {
        assert_eq!(z.held_out_rows(k).len(), 1);
        assert_eq!(z.training_rows(k).len(), 7);
    }
    let cfg = StackingConfig {
        folds: 9,
        ..light_config(1)
    };
    assert!(matches!(first_stage_oof(&t, &y, &cfg), Err(PersError::Fold(_))));
    assert!(matches!(
        first_stage_oof(&t, &y[..5], &light_config(1)),
        Err(PersError::LengthMismatch { .. })
    ));
}

#[test]
fn fusion_alignment_and_permutation() {
    let (t, i, y) = views(30, 1.0, 3);
    let cfg = light_config(2);
    let (zt, _) = first_stage_oof(&t, &y, &cfg).unwrap();
    let (zi, _) = first_stage_oof(&i, &y, &cfg).unwrap();
    let h = fuse_views(&zt, &zi).unwrap();
    assert_eq!(h.view, View::Fused);
    assert_eq!(h.data.slice(ndarray::s![.., ..3]), zt.scores);
    assert_eq!(h.data.slice(ndarray::s![.., 3..]), zi.scores);

    let perm: Vec<usize> = (0..30).rev().collect();
    let permute = |z: &OofMatrix| OofMatrix {
        scores: z.scores.select(Axis(0), &perm),
        row_ids: perm.iter().map(|&p| z.row_ids[p].clone()).collect(),
        folds: perm.iter().map(|&p| z.folds[p]).collect(),
        k: z.k,
    };
    let hp = fuse_views(&permute(&zt), &permute(&zi)).unwrap();
    assert_eq!(hp.data, h.data.select(Axis(0), &perm));

    let mut other = zi.clone();
    other.row_ids[0] = "someone".into();
    assert!(matches!(fuse_views(&zt, &other), Err(PersError::Alignment(_))));
}

#[test]
fn constant_inputs_give_identical_rows() {
    let n = 20;
    let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let h = FeatureMatrix::new(Array2::from_elem((n, 6), 0.3), ids(n), View::Fused, vec![true; n]).unwrap();
    let (z, full) = second_stage_oof(&h, &y, &light_config(5)).unwrap();
    // each fold model is constant; folds differ only through their class rates
    for k in 0..z.k {
        let rows = z.held_out_rows(k);
        for &r in &rows[1..] {
            assert_eq!(z.scores.row(r), z.scores.row(rows[0]));
        }
    }
    let probe = Array2::from_elem((3, 6), 0.3);
    let inference = stage_scores(&full, probe.view()).unwrap();
    for r in 1..3 {
        assert_eq!(inference.row(r), inference.row(0));
    }
}

#[test]
fn meta_on_exact_label_column() {
    let n = 40;
    let y: Vec<bool> = (0..n).map(|i| i % 4 != 0).collect();
    let mut rng = rng_from(8, &[]);
    let scores = Array2::from_shape_fn((n, 3), |(i, j)| if j == 0 { f64::from(u8::from(y[i])) } else { rng.random() });
    let z = OofMatrix {
        scores,
        row_ids: ids(n),
        folds: vec![0; n],
        k: 5,
    };
    let m = fit_meta_classifier(&z, &y, &SvmParams::default()).unwrap();
    assert_eq!(m.predict(z.scores.view()).unwrap(), y);
}

#[test]
fn random_labels_do_not_leak_through_folds() {
    let n = 500;
    let mut rng = rng_from(17, &[]);
    let data = Array2::from_shape_fn((n, 5), |_| rng.random::<f64>());
    let mut y: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    use rand::seq::SliceRandom;
    y.shuffle(&mut rng);
    let x = FeatureMatrix::new(data, ids(n), View::Text, vec![true; n]).unwrap();
    let memorize = LearnerSpec::Cart(CartParams {
        max_depth: 1000,
        min_leaf: 1,
    });
    let cfg = StackingConfig {
        base_specs: vec![memorize],
        ..light_config(3)
    };
    let (z, _) = first_stage_oof(&x, &y, &cfg).unwrap();
    let acc = (0..n).filter(|&i| (z.scores[[i, 0]] >= 0.5) == y[i]).count() as f64 / n as f64;
    assert!((0.4..=0.6).contains(&acc), "oof accuracy {acc}");
    for k in 0..cfg.folds {
        let train = z.training_rows(k);
        let xt = x.data.select(Axis(0), &train);
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let m = fit_learner(xt.view(), &yt, &memorize, learner_seed(cfg.seed, 1, 0, k)).unwrap();
        assert_eq!(m.predict_labels(xt.view()).unwrap(), yt);
    }
}

#[test]
fn fit_predict_end_to_end() {
    let (t, i, y) = views(200, 2.0, 4);
    let cfg = light_config(9);
    let (model, trace) = pers_fit_traced(&[&t, &i], &y, &cfg).unwrap();
    assert_eq!(trace.z_first[0].scores.dim(), (200, 3));
    assert_eq!(trace.z_first[1].scores.dim(), (200, 3));
    assert_eq!(trace.h.data.dim(), (200, 6));
    assert_eq!(trace.z_second.scores.dim(), (200, 3));
    let pred = pers_predict(&model, &[&t, &i]).unwrap();
    let acc = pred.iter().zip(&y).filter(|(p, &t)| p.label == t).count() as f64 / 200.0;
    assert!(acc >= 0.95, "training accuracy {acc}");

    let again = pers_fit(&[&t, &i], &y, &cfg).unwrap();
    assert_eq!(again.to_json().unwrap(), model.to_json().unwrap());
    assert_eq!(PersModel::from_json(&model.to_json().unwrap()).unwrap(), model);

    // identical rows score identically
    let dup = FeatureMatrix::new(
        t.data.select(Axis(0), &[3, 3]),
        vec!["a".into(), "b".into()],
        View::Text,
        vec![true; 2],
    )
    .unwrap();
    let dup_i = FeatureMatrix::new(
        i.data.select(Axis(0), &[3, 3]),
        vec!["a".into(), "b".into()],
        View::Image,
        vec![true; 2],
    )
    .unwrap();
    let p = pers_predict(&model, &[&dup, &dup_i]).unwrap();
    assert_eq!(p[0].score, p[1].score);

    assert!(matches!(pers_predict(&model, &[&t]), Err(PersError::Dimension(_))));
    assert!(matches!(pers_predict(&model, &[&i, &t]), Err(PersError::Dimension(_))));
}

#[test]
fn single_view_uses_first_stage_as_h() {
    let (t, _, y) = views(60, 2.0, 5);
    let (model, trace) = pers_fit_traced(&[&t], &y, &light_config(1)).unwrap();
    assert_eq!(trace.h.data, trace.z_first[0].scores);
    assert_eq!(model.views, vec![View::Text]);
    assert_eq!(pers_predict(&model, &[&t]).unwrap().len(), 60);
}

#[test]
fn fingerprint_tracks_every_hyperparameter() {
    let base = light_config(1);
    let fp = base.fingerprint();
    assert_eq!(fp, light_config(1).fingerprint());
    assert_eq!(fp.len(), 64);
    let mut variants = vec![
        StackingConfig { folds: 4, ..base.clone() },
        StackingConfig { seed: 2, ..base.clone() },
        StackingConfig {
            meta: SvmParams { c: 2.0, ..base.meta },
            ..base.clone()
        },
    ];
    let mut v = base.clone();
    if let LearnerSpec::Gbt(p) = &mut v.base_specs[1] {
        p.lambda = 0.5;
    }
    variants.push(v);
    let mut v = base.clone();
    v.base_specs.pop();
    variants.push(v);
    for v in variants {
        assert_ne!(v.fingerprint(), fp);
    }
}

#[test]
fn evaluation_row_covers_requested_dimensions() {
    let (t, i, y) = views(80, 3.0, 6);
    let labels: Vec<MbtiLabel> = y
        .iter()
        .map(|&e| MbtiLabel::from_bits(0).with_pole(Dimension::EI, e))
        .collect();
    let model = pers_fit(&[&t, &i], &dimension_targets(&labels, Dimension::EI), &light_config(2)).unwrap();
    let row = evaluate_dimensions("PERS", &[(Dimension::EI, &model)], &[&t, &i], &labels).unwrap();
    assert_eq!(row.views, "both");
    assert_eq!(row.dimensions.len(), 1);
    assert!(row.dimensions[0].f1_macro > 0.9);
}
