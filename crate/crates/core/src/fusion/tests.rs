use std::collections::BTreeSet;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::seed;

fn sm(ids: Vec<u64>, scores: Array2<f64>) -> ScoreMatrix {
    ScoreMatrix::new(ids, scores).unwrap()
}

fn cfg(thresholds: Vec<f64>, fallback: bool) -> FusionConfig {
    FusionConfig {
        group_map: (0..thresholds.len()).collect(),
        thresholds,
        fallback_argmax: fallback,
    }
}

/// Set-based reference F1, written independently of the counting version.
fn brute_force_f1(preds: &Array2<u8>, labels: &Array2<u8>) -> (f64, f64, f64) {
    let (n, c) = preds.dim();
    let set = |m: &Array2<u8>, i: usize| -> BTreeSet<usize> { (0..c).filter(|&j| m[[i, j]] == 1).collect() };
    let mut sample = 0.0;
    let mut all_pred = BTreeSet::new();
    let mut all_true = BTreeSet::new();
    for i in 0..n {
        let (p, t) = (set(preds, i), set(labels, i));
        sample += if p.is_empty() && t.is_empty() {
            1.0
        } else {
            2.0 * p.intersection(&t).count() as f64 / (p.len() + t.len()) as f64
        };
        all_pred.extend(p.iter().map(|&j| (i, j)));
        all_true.extend(t.iter().map(|&j| (i, j)));
    }
    let pair_f1 = |p: &BTreeSet<(usize, usize)>, t: &BTreeSet<(usize, usize)>| {
        if p.is_empty() && t.is_empty() {
            None
        } else {
            Some(2.0 * p.intersection(t).count() as f64 / (p.len() + t.len()) as f64)
        }
    };
    let micro = pair_f1(&all_pred, &all_true).unwrap_or(0.0);
    let macro_ = (0..c)
        .map(|j| {
            let p: BTreeSet<_> = all_pred.iter().copied().filter(|&(_, k)| k == j).collect();
            let t: BTreeSet<_> = all_true.iter().copied().filter(|&(_, k)| k == j).collect();
            pair_f1(&p, &t).unwrap_or(0.0)
        })
        .sum::<f64>()
        / c as f64;
    (sample / n as f64, micro, macro_)
}

#[test]
fn ensemble_examples() {
    let a = sm(vec![1, 2], array![[0.2, 0.9], [0.5, 0.1]]);
    assert_eq!(ensemble_scores(&[a.clone()], None).unwrap(), a);
    let b = sm(vec![2, 1], array![[0.4, 0.4], [0.4, 0.3]]);
    let mean = ensemble_scores(&[a.clone(), b.clone()], None).unwrap();
    assert_eq!(mean.ids, vec![1, 2]);
    assert!((mean.scores[[0, 0]] - 0.3).abs() < 1e-15);
    assert_eq!(ensemble_scores(&[a.clone(), b.clone()], Some(&[1.0, 0.0])).unwrap(), a);
}

#[test]
fn ensemble_errors() {
    let a = sm(vec![1, 2], array![[0.2], [0.5]]);
    let other_ids = sm(vec![1, 3], array![[0.2], [0.5]]);
    let other_c = sm(vec![1, 2], array![[0.2, 0.1], [0.5, 0.1]]);
    assert!(ensemble_scores(&[], None).is_err());
    assert!(ensemble_scores(&[a.clone(), other_ids], None).is_err());
    assert!(ensemble_scores(&[a.clone(), other_c], None).is_err());
    assert!(ensemble_scores(&[a.clone(), a.clone()], Some(&[0.0, 0.0])).is_err());
    assert!(ensemble_scores(&[a.clone()], Some(&[1.0, 2.0])).is_err());
}

#[test]
fn score_matrix_validation() {
    assert!(ScoreMatrix::new(vec![1, 1], Array2::zeros((2, 1))).is_err());
    assert!(ScoreMatrix::new(vec![1], array![[1.5]]).is_err());
    assert!(ScoreMatrix::new(vec![1], array![[f64::NAN]]).is_err());
    assert!(LabelMatrix::new(vec![1], array![[2]]).is_err());
}

#[test]
fn calibration_picks_lowest_perfect_threshold() {
    let scores = sm(vec![0, 1, 2, 3], array![[0.9], [0.8], [0.2], [0.1]]);
    let labels = LabelMatrix::new(vec![0, 1, 2, 3], array![[1], [1], [0], [0]]).unwrap();
    let cal = calibrate_thresholds(&scores, &labels, &[2], &default_threshold_grid()).unwrap();
    assert_eq!(cal.thresholds, vec![0.25]);
}

#[test]
fn calibration_all_positive_and_singleton_grid() {
    let scores = sm(vec![0, 1, 2], array![[0.9, 0.3], [0.6, 0.7], [0.4, 0.1]]);
    let labels = LabelMatrix::new(vec![0, 1, 2], array![[1, 0], [1, 1], [1, 0]]).unwrap();
    let cal = calibrate_thresholds(&scores, &labels, &[3, 1], &default_threshold_grid()).unwrap();
    assert_eq!(cal.thresholds[0], 0.05);
    let single = calibrate_thresholds(&scores, &labels, &[3, 1], &[0.5]).unwrap();
    assert_eq!(single.thresholds, vec![0.5, 0.5]);
}

#[test]
fn calibration_errors_and_row_order_invariance() {
    let empty = ScoreMatrix::new(vec![], Array2::zeros((0, 2))).unwrap();
    let no_labels = LabelMatrix::new(vec![], Array2::zeros((0, 2))).unwrap();
    assert!(calibrate_thresholds(&empty, &no_labels, &[1, 1], &[0.5]).is_err());

    let mut rng = seed::Rng::seed_from_u64(5);
    let n = 30;
    let scores = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.0..1.0));
    let labels = Array2::from_shape_fn((n, 3), |_| rng.random_range(0..2u8));
    let ids: Vec<u64> = (0..n as u64).collect();
    let s = sm(ids.clone(), scores);
    let l = LabelMatrix::new(ids.clone(), labels).unwrap();
    let grid = default_threshold_grid();
    let base = calibrate_thresholds(&s, &l, &[5, 3, 1], &grid).unwrap();
    let reversed: Vec<u64> = ids.iter().rev().copied().collect();
    let s_rev = s.aligned_to(&reversed).unwrap();
    assert_eq!(calibrate_thresholds(&s_rev, &l, &[5, 3, 1], &grid).unwrap(), base);
    assert!(calibrate_thresholds(&s, &l, &[5, 3, 1], &[0.6, 0.5]).is_err());
}

#[test]
fn spearman_diagnostic() {
    let scores = sm(vec![0, 1], array![[0.9, 0.2], [0.1, 0.6]]);
    let labels = LabelMatrix::new(vec![0, 1], array![[1, 0], [0, 1]]).unwrap();
    let cal = calibrate_thresholds(&scores, &labels, &[10, 1], &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
    // class 0 -> 0.3, class 1 -> 0.3: constant thresholds, undefined correlation
    assert_eq!(cal.thresholds, vec![0.3, 0.3]);
    assert_eq!(cal.count_threshold_correlation, None);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]), Some(1.0));
}

#[test]
fn threshold_examples() {
    let s = sm(vec![7], array![[0.4, 0.6]]);
    assert_eq!(apply_thresholds(&s, &cfg(vec![0.5, 0.5], false)).unwrap(), array![[0, 1]]);
    assert_eq!(apply_thresholds(&s, &cfg(vec![0.0, 0.0], false)).unwrap(), array![[1, 1]]);
    let low = sm(vec![7], array![[0.3, 0.2]]);
    assert_eq!(apply_thresholds(&low, &cfg(vec![0.5, 0.5], true)).unwrap(), array![[1, 0]]);
    assert_eq!(apply_thresholds(&low, &cfg(vec![0.5, 0.5], false)).unwrap(), array![[0, 0]]);
    let tie = sm(vec![7], array![[0.3, 0.3]]);
    assert_eq!(apply_thresholds(&tie, &cfg(vec![0.5, 0.5], true)).unwrap(), array![[1, 0]]);
    assert!(apply_thresholds(&s, &cfg(vec![0.5], false)).is_err());
}

#[test]
fn suppression_examples() {
    let s = sm(vec![0], array![[0.9, 0.7]]);
    let out = group_suppress(&s, array![[1u8, 1]].view(), &[0, 0]).unwrap();
    assert_eq!(out, array![[1, 0]]);
    let out = group_suppress(&s, array![[1u8, 1]].view(), &[0, 1]).unwrap();
    assert_eq!(out, array![[1, 1]]);
    let tie = sm(vec![0], array![[0.8, 0.8, 0.1]]);
    let out = group_suppress(&tie, array![[1u8, 1, 1]].view(), &[1, 1, 1]).unwrap();
    assert_eq!(out, array![[1, 0, 0]]);
    // The higher score is ignored when that class was not predicted.
    let s = sm(vec![0], array![[0.9, 0.7, 0.6]]);
    let out = group_suppress(&s, array![[0u8, 1, 1]].view(), &[0, 0, 0]).unwrap();
    assert_eq!(out, array![[0, 1, 0]]);
    assert!(group_suppress(&s, array![[0u8, 1, 1]].view(), &[0, 0]).is_err());
}

#[test]
fn f1_examples() {
    let labels = array![[1u8, 0], [0, 1], [1, 1]];
    let perfect = f1_scores(labels.view(), labels.view()).unwrap();
    assert_eq!((perfect.sample, perfect.micro, perfect.macro_), (1.0, 1.0, 1.0));
    let inv = array![[0u8, 1], [1, 0]];
    let miss = f1_scores(inv.view(), array![[1u8, 0], [0, 1]].view()).unwrap();
    assert_eq!((miss.sample, miss.micro, miss.macro_), (0.0, 0.0, 0.0));
    let worked = f1_scores(array![[1u8, 0], [1, 1]].view(), array![[1u8, 1], [0, 1]].view()).unwrap();
    assert!((worked.sample - 2.0 / 3.0).abs() < 1e-15);
    assert!(f1_scores(inv.view(), array![[1u8, 0]].view()).is_err());
}

#[test]
fn f1_matches_brute_force_oracle() {
    let mut rng = seed::Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let c = rng.random_range(1..=6);
        let p = Array2::from_shape_fn((n, c), |_| rng.random_range(0..2u8));
        let y = Array2::from_shape_fn((n, c), |_| rng.random_range(0..2u8));
        let got = f1_scores(p.view(), y.view()).unwrap();
        let (s, mi, ma) = brute_force_f1(&p, &y);
        assert_eq!((got.sample, got.micro, got.macro_), (s, mi, ma));
    }
}

#[test]
fn file_round_trips_and_header_check() {
    let dir = tempfile::tempdir().unwrap();
    let s = sm(vec![3, 1], array![[0.1, 1.0 / 3.0], [0.0, 1.0]]);
    let p = dir.path().join("s.csv");
    write_score_csv(&p, &s).unwrap();
    assert_eq!(read_score_csv(&p).unwrap(), s);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("sample_id,class_0,class_1\n3,1.0000000000000001e-1,3.3333333333333331e-1\n"));

    let l = LabelMatrix::new(vec![3, 1], array![[1, 0], [0, 1]]).unwrap();
    let lp = dir.path().join("l.csv");
    write_label_csv(&lp, &l).unwrap();
    assert_eq!(read_label_csv(&lp).unwrap(), l);

    std::fs::write(&p, "id,c0\n1,0.5\n").unwrap();
    let err = read_score_csv(&p).unwrap_err().to_string();
    assert!(err.contains("sample_id,class_0"), "{err}");

    let gp = dir.path().join("groups.txt");
    write_group_map(&gp, &[0, 1, 0]).unwrap();
    assert_eq!(read_group_map(&gp).unwrap(), vec![0, 1, 0]);
    std::fs::write(&gp, "0,0\n2,1\n").unwrap();
    assert!(read_group_map(&gp).is_err());

    let tp = dir.path().join("thr.txt");
    write_thresholds(&tp, &[0.25, 0.05]).unwrap();
    assert_eq!(read_thresholds(&tp).unwrap(), vec![0.25, 0.05]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ensemble_is_convex(
        cells in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 3), 1..5),
        weights in proptest::collection::vec(0.0f64..5.0, 3),
    ) {
        let mats: Vec<ScoreMatrix> = (0..3)
            .map(|k| sm((0..cells.len() as u64).collect(), Array2::from_shape_fn((cells.len(), 1), |(i, _)| cells[i][k])))
            .collect();
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let out = ensemble_scores(&mats, Some(&weights)).unwrap();
        for (i, row) in cells.iter().enumerate() {
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.scores[[i, 0]] >= lo && out.scores[[i, 0]] <= hi);
        }
    }

    #[test]
    fn suppression_idempotent_and_never_adds(
        scores in proptest::collection::vec(0.0f64..=1.0, 12),
        preds in proptest::collection::vec(0u8..2, 12),
        groups in proptest::collection::vec(0usize..3, 4),
    ) {
        let s = sm(vec![0, 1, 2], Array2::from_shape_vec((3, 4), scores).unwrap());
        let p = Array2::from_shape_vec((3, 4), preds).unwrap();
        let once = group_suppress(&s, p.view(), &groups).unwrap();
        let twice = group_suppress(&s, once.view(), &groups).unwrap();
        prop_assert_eq!(&once, &twice);
        for (a, b) in once.iter().zip(p.iter()) {
            prop_assert!(*a <= *b);
        }
    }

    #[test]
    fn thresholding_invariant_under_monotone_maps(
        scores in proptest::collection::vec(0.0f64..=1.0, 8),
        thresholds in proptest::collection::vec(0.0f64..=1.0, 4),
        fallback in any::<bool>(),
    ) {
        // Halving is exact in binary floating point, so no ties are created.
        let f = |v: f64| v * 0.5;
        let s = sm(vec![0, 1], Array2::from_shape_vec((2, 4), scores).unwrap());
        let mapped = sm(vec![0, 1], s.scores.mapv(f));
        let a = apply_thresholds(&s, &cfg(thresholds.clone(), fallback)).unwrap();
        let b = apply_thresholds(&mapped, &cfg(thresholds.iter().map(|&t| f(t)).collect(), fallback)).unwrap();
        prop_assert_eq!(a, b);
    }
}
