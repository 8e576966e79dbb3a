mod common;

use common::*;
use misd_core::metrics::{
    accuracy, aupr, auroc, decide, fpr_at_95_tpr, full_report, predict, risk_coverage, Decision, Polarity,
    ScoredPrediction, ScoresKind,
};
use misd_core::{Embedding, MisdError};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn b(pairs: &[(f64, bool)]) -> Vec<ScoredPrediction> {
    pairs.iter().map(|&(c, ok)| ScoredPrediction::binary(c, ok)).collect()
}

#[test]
fn worked_vector() {
    let r = full_report(&worked_example(), ScoresKind::Classified).unwrap();
    assert_eq!(round2(r.acc.unwrap()), 75.00);
    assert_eq!(round2(r.fpr95.unwrap()), 100.00);
    assert_eq!(round2(r.aurc.unwrap()), 270.83);
    assert_eq!(round2(r.e_aurc.unwrap()), 208.33);
    assert_eq!(round2(r.auroc.unwrap()), 33.33);
    assert_eq!(round2(r.aupr_success.unwrap()), 80.56);
    assert_eq!(round2(r.aupr_error.unwrap()), 33.33);
    // per-coverage enumeration by hand: risks 0, 1/2, 1/3, 1/4
    assert!(close(r.aurc.unwrap() / 1000.0, (0.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0, 1e-15));
    assert!(close(r.e_aurc.unwrap() / 1000.0, (0.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0 - 0.0625, 1e-15));
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&b(&[(0.9, true), (0.8, true), (0.1, false)])).unwrap(), 1.0);
    assert_eq!(auroc(&b(&[(0.5, true), (0.5, false), (0.5, true)])).unwrap(), 0.5);
    assert_eq!(auroc(&b(&[(0.9, true), (0.4, true), (0.6, false)])).unwrap(), 0.5);
    assert!(matches!(auroc(&b(&[(0.9, true)])), Err(MisdError::UndefinedMetric { metric: "auroc", .. })));
}

#[test]
fn fpr95_examples() {
    assert_eq!(fpr_at_95_tpr(&b(&[(0.9, true), (0.8, true), (0.1, false)])).unwrap(), 0.0);
    assert_eq!(fpr_at_95_tpr(&b(&[(0.9, true), (0.7, true), (0.6, true), (0.8, false)])).unwrap(), 1.0);
    assert_eq!(fpr_at_95_tpr(&b(&[(0.5, true), (0.5, false), (0.5, false)])).unwrap(), 1.0);
}

#[test]
fn risk_coverage_examples() {
    let all_ok = b(&[(0.9, true), (0.3, true)]);
    let rc = risk_coverage(&all_ok).unwrap();
    assert_eq!((rc.aurc, rc.e_aurc), (0.0, 0.0));
    let all_bad = b(&[(0.9, false), (0.3, false), (0.2, false)]);
    let rc = risk_coverage(&all_bad).unwrap();
    assert!(close(rc.aurc, 1.0, 1e-15) && close(rc.e_aurc, 0.0, 1e-15));
    assert!(risk_coverage(&[]).is_err());
}

#[test]
fn aupr_examples() {
    let w = worked_example();
    assert!(close(aupr(&w, Polarity::Success).unwrap(), (1.0 + 2.0 / 3.0 + 0.75) / 3.0, 1e-15));
    assert!(close(aupr(&w, Polarity::Error).unwrap(), 1.0 / 3.0, 1e-15));
    assert_eq!(aupr(&b(&[(0.9, true), (0.2, false)]), Polarity::Success).unwrap(), 1.0);
    assert!(aupr(&b(&[(0.9, true)]), Polarity::Error).is_err());
}

#[test]
fn perfect_predictor_report() {
    let preds: Vec<ScoredPrediction> = (0..5).map(|i| ScoredPrediction::classified(0.5 + i as f64 / 10.0, i, i)).collect();
    let r = full_report(&preds, ScoresKind::Classified).unwrap();
    assert_eq!(r.acc, Some(100.0));
    assert_eq!((r.auroc, r.fpr95, r.aupr_error), (None, None, None));
    assert_eq!((r.aurc, r.e_aurc, r.aupr_success), (Some(0.0), Some(0.0), Some(100.0)));
    assert!(matches!(r.require("auroc"), Err(MisdError::UndefinedMetric { metric: "auroc", .. })));
    assert!(r.within_bounds());
}

#[test]
fn binary_kind_reports_only_ranking_metrics() {
    let r = full_report(&b(&[(0.9, true), (0.4, false), (0.6, true)]), ScoresKind::Binary).unwrap();
    assert!(r.auroc.is_some() && r.fpr95.is_some());
    assert_eq!((r.acc, r.aurc, r.e_aurc, r.aupr_success, r.aupr_error), (None, None, None, None, None));
}

#[test]
fn decision_rule() {
    assert_eq!(decide(0.9, 0.5), Decision::AcceptAsCorrect);
    assert_eq!(decide(0.5, 0.5), Decision::AcceptAsCorrect);
    assert_eq!(decide(0.49, 0.5), Decision::FlagAsMisclassified);
}

#[test]
fn predict_matches_scan() {
    let mut r = rng(3);
    for _ in 0..200 {
        let classes: Vec<Embedding> = (0..6).map(|_| random_embedding(&mut r, 8)).collect();
        let q = random_embedding(&mut r, 8);
        let p = predict(&q, &classes, 1.0).unwrap();
        let sims: Vec<f64> = classes.iter().map(|c| misd_core::losses::cosine_sim(&q, c).unwrap()).collect();
        let mut best = 0;
        for (i, s) in sims.iter().enumerate() {
            if *s > sims[best] {
                best = i;
            }
        }
        assert_eq!(p.predicted, best);
        assert!(close(p.probabilities.iter().sum::<f64>(), 1.0, 1e-12));
    }
    // self-similarity and full ties
    let classes: Vec<Embedding> = (0..4).map(|i| {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }).collect();
    assert_eq!(predict(&classes[3], &classes, 1.0).unwrap().predicted, 3);
    let tied = predict(&Embedding::new(vec![0.0, 0.0, 0.0, 0.0]).unwrap(), &classes, 1.0);
    assert!(matches!(tied, Err(MisdError::UndefinedSimilarity(_))));
    let eq = [Embedding::new(vec![1.0, 0.0]).unwrap(), Embedding::new(vec![0.0, 1.0]).unwrap()];
    let p = predict(&Embedding::new(vec![1.0, 1.0]).unwrap(), &eq, 1.0).unwrap();
    assert_eq!((p.predicted, p.confidence), (0, 0.5));
}

/// Expected AURC over all orderings of each tie group equals the averaged
/// AURC of every permutation consistent with the confidences.
#[test]
fn aurc_tie_convention_is_the_permutation_average() {
    let mut r = rng(11);
    for _ in 0..60 {
        let n = r.random_range(2..=7);
        let preds: Vec<ScoredPrediction> = (0..n)
            .map(|_| ScoredPrediction::binary([0.2, 0.5, 0.8][r.random_range(0..3)], r.random_bool(0.5)))
            .collect();
        let mut total = 0.0;
        let mut count = 0;
        for perm in permutations(&preds) {
            let consistent = perm.windows(2).all(|w| w[0].confidence >= w[1].confidence);
            if consistent {
                total += aurc_of_order(&perm.iter().map(|p| p.correct).collect::<Vec<_>>());
                count += 1;
            }
        }
        let rc = risk_coverage(&preds).unwrap();
        assert!(close(rc.aurc, total / count as f64, 1e-12), "{preds:?}");
        assert!(close(rc.aurc, aurc_oracle(&preds), 1e-12));
    }
}

#[test]
fn oracle_equivalence_on_random_tied_sets() {
    let mut r = rng(2024);
    for _ in 0..1000 {
        let n = r.random_range(1..=256);
        let preds = random_scores(&mut r, n, 0.3);
        match auroc_oracle(&preds) {
            Some(o) => assert!(close(auroc(&preds).unwrap(), o, 1e-12)),
            None => assert!(auroc(&preds).is_err()),
        }
        match fpr95_oracle(&preds) {
            Some(o) => assert!(close(fpr_at_95_tpr(&preds).unwrap(), o, 1e-12)),
            None => assert!(fpr_at_95_tpr(&preds).is_err()),
        }
        let rc = risk_coverage(&preds).unwrap();
        assert!(close(rc.aurc, aurc_oracle(&preds), 1e-12));
        assert!(close(rc.optimal_aurc, optimal_aurc_oracle(&preds), 1e-12));
        assert!(close(rc.e_aurc, aurc_oracle(&preds) - optimal_aurc_oracle(&preds), 1e-12));
        for (polarity, success) in [(Polarity::Success, true), (Polarity::Error, false)] {
            match aupr_oracle(&preds, success) {
                Some(o) => assert!(close(aupr(&preds, polarity).unwrap(), o, 1e-12)),
                None => assert!(aupr(&preds, polarity).is_err()),
            }
        }
    }
}

#[test]
fn label_swap_complements_auroc_without_ties() {
    let mut r = rng(5);
    for _ in 0..200 {
        let n = r.random_range(2..100);
        let preds = random_scores(&mut r, n, 0.0);
        let mut confs: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
        confs.sort_by(f64::total_cmp);
        confs.dedup();
        if confs.len() != n {
            continue;
        }
        let swapped: Vec<ScoredPrediction> = preds.iter().map(|p| ScoredPrediction::binary(p.confidence, !p.correct)).collect();
        if let (Ok(a), Ok(s)) = (auroc(&preds), auroc(&swapped)) {
            assert!(close(a + s, 1.0, 1e-12));
        }
    }
}

#[test]
fn rank_invariance_under_monotone_maps() {
    let mut r = rng(77);
    for _ in 0..200 {
        let n = r.random_range(1..=256);
        let preds = classified_set(&mut r, n);
        let base = full_report(&preds, ScoresKind::Classified).unwrap();
        for f in [|x: f64| x.powi(3), |x: f64| x.exp()] {
            let mapped: Vec<ScoredPrediction> = preds.iter().map(|p| p.with_confidence(f(p.confidence))).collect();
            let other = full_report(&mapped, ScoresKind::Classified).unwrap();
            assert!(reports_match(&base, &other, 1e-12), "{base:?} vs {other:?}");
        }
    }
}

#[test]
fn order_invariance() {
    let mut r = rng(99);
    for _ in 0..200 {
        let n = r.random_range(1..=128);
        let mut preds = classified_set(&mut r, n);
        let base = full_report(&preds, ScoresKind::Classified).unwrap();
        preds.shuffle(&mut r);
        assert!(reports_match(&base, &full_report(&preds, ScoresKind::Classified).unwrap(), 1e-12));
    }
}

proptest! {
    #[test]
    fn reports_are_within_bounds(
        items in prop::collection::vec((1u32..=40, any::<bool>()), 1..120)
    ) {
        let preds: Vec<ScoredPrediction> = items.iter().map(|&(c, ok)| ScoredPrediction::binary(c as f64 / 40.0, ok)).collect();
        let report = full_report(&preds, ScoresKind::Classified).unwrap();
        prop_assert!(report.within_bounds());
        let rc = risk_coverage(&preds).unwrap();
        prop_assert!(rc.optimal_aurc <= rc.aurc + 1e-15);
        prop_assert!(rc.e_aurc >= -1e-15);
        prop_assert!(close(accuracy(&preds).unwrap() * 100.0, report.acc.unwrap(), 1e-12));
        if let Ok(a) = auroc(&preds) {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn duplicating_every_sample_keeps_auroc_and_fpr(
        items in prop::collection::vec((1u32..=20, any::<bool>()), 2..60)
    ) {
        let preds: Vec<ScoredPrediction> = items.iter().map(|&(c, ok)| ScoredPrediction::binary(c as f64 / 20.0, ok)).collect();
        let doubled: Vec<ScoredPrediction> = preds.iter().chain(preds.iter()).copied().collect();
        prop_assert_eq!(auroc(&preds).ok(), auroc(&doubled).ok());
        prop_assert_eq!(fpr_at_95_tpr(&preds).ok(), fpr_at_95_tpr(&doubled).ok());
    }
}
