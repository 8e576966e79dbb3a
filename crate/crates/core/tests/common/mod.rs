//! Brute-force oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use misd_core::metrics::{MisDReport, ScoredPrediction};
use misd_core::model::Embedding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_embedding(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
    Embedding::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random scored set of size `n` where roughly `tie_rate` of the samples reuse
/// an earlier confidence. Confidences lie in (0, 1].
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, tie_rate: f64) -> Vec<ScoredPrediction> {
    let mut out: Vec<ScoredPrediction> = Vec::with_capacity(n);
    let p_correct = rng.random_range(0.1..0.9);
    for _ in 0..n {
        let confidence = if !out.is_empty() && rng.random_bool(tie_rate) {
            out[rng.random_range(0..out.len())].confidence
        } else {
            // coarse grid on half the instances so ties also arise naturally
            let raw: f64 = rng.random_range(0.01..=1.0);
            if rng.random_bool(0.5) { (raw * 20.0).ceil() / 20.0 } else { raw }
        };
        out.push(ScoredPrediction::binary(confidence, rng.random_bool(p_correct)));
    }
    out
}

/// Mann-Whitney pair count: O(n²) over every (correct, error) pair.
pub fn auroc_oracle(preds: &[ScoredPrediction]) -> Option<f64> {
    let correct: Vec<f64> = preds.iter().filter(|p| p.correct).map(|p| p.confidence).collect();
    let errors: Vec<f64> = preds.iter().filter(|p| !p.correct).map(|p| p.confidence).collect();
    if correct.is_empty() || errors.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &c in &correct {
        for &e in &errors {
            wins += if c > e { 1.0 } else if c == e { 0.5 } else { 0.0 };
        }
    }
    Some(wins / (correct.len() * errors.len()) as f64)
}

/// Scans every observed confidence as a threshold δ (accept iff ξ ≥ δ).
pub fn fpr95_oracle(preds: &[ScoredPrediction]) -> Option<f64> {
    let n_c = preds.iter().filter(|p| p.correct).count();
    let n_e = preds.len() - n_c;
    if n_c == 0 || n_e == 0 {
        return None;
    }
    let mut best: Option<f64> = None;
    for t in preds.iter().map(|p| p.confidence) {
        let tp = preds.iter().filter(|p| p.correct && p.confidence >= t).count();
        let fp = preds.iter().filter(|p| !p.correct && p.confidence >= t).count();
        // TPR >= 0.95 in exact rational arithmetic
        if 100 * tp >= 95 * n_c {
            let fpr = fp as f64 / n_e as f64;
            best = Some(best.map_or(fpr, |b: f64| b.min(fpr)));
        }
    }
    best
}

/// AURC over the n coverage points. The top `m` predictions take every
/// sample strictly more confident than the m-th, plus a share of the tie
/// group at the boundary; that share carries the group's error rate,
/// which is the expectation over all orderings of the group.
pub fn aurc_oracle(preds: &[ScoredPrediction]) -> f64 {
    let mut conf: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    conf.sort_by(|a, b| b.total_cmp(a));
    let n = preds.len();
    let mut total = 0.0;
    for m in 1..=n {
        let t = conf[m - 1];
        let above: Vec<&ScoredPrediction> = preds.iter().filter(|p| p.confidence > t).collect();
        let tied: Vec<&ScoredPrediction> = preds.iter().filter(|p| p.confidence == t).collect();
        let take = m - above.len();
        let errors_above = above.iter().filter(|p| !p.correct).count() as f64;
        let tied_errors = tied.iter().filter(|p| !p.correct).count() as f64;
        let expected = errors_above + tied_errors * take as f64 / tied.len() as f64;
        total += expected / m as f64;
    }
    total / n as f64
}

/// AURC of one explicit ordering (no ties involved).
pub fn aurc_of_order(correct_in_order: &[bool]) -> f64 {
    let mut errors = 0;
    let mut total = 0.0;
    for (i, &c) in correct_in_order.iter().enumerate() {
        errors += (!c) as usize;
        total += errors as f64 / (i + 1) as f64;
    }
    total / correct_in_order.len() as f64
}

/// Best achievable AURC: every correct prediction ranked first.
pub fn optimal_aurc_oracle(preds: &[ScoredPrediction]) -> f64 {
    let mut order: Vec<bool> = preds.iter().map(|p| p.correct).collect();
    order.sort_by(|a, b| b.cmp(a));
    aurc_of_order(&order)
}

/// Average precision from the per-threshold precision/recall table:
/// Σ over distinct thresholds of (recall gain) × (precision at threshold).
pub fn aupr_oracle(preds: &[ScoredPrediction], success: bool) -> Option<f64> {
    let items: Vec<(f64, bool)> = preds
        .iter()
        .map(|p| if success { (p.confidence, p.correct) } else { (-p.confidence, !p.correct) })
        .collect();
    let positives = items.iter().filter(|i| i.1).count();
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<&(f64, bool)> = items.iter().filter(|i| i.0 >= t).collect();
        let tp = selected.iter().filter(|i| i.1).count();
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Every permutation of `items` (Heap's algorithm).
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    fn heap<T: Clone>(k: usize, a: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) { a.swap(i, k - 1) } else { a.swap(0, k - 1) }
            heap(k - 1, a, out);
        }
    }
    let mut a = items.to_vec();
    let mut out = Vec::new();
    heap(a.len(), &mut a, &mut out);
    out
}

/// The hand-worked four-sample set: 0.9 correct, 0.8 error, 0.7 correct, 0.6 correct.
pub fn worked_example() -> Vec<ScoredPrediction> {
    vec![
        ScoredPrediction::classified(0.9, 0, 0),
        ScoredPrediction::classified(0.8, 1, 0),
        ScoredPrediction::classified(0.7, 2, 2),
        ScoredPrediction::classified(0.6, 3, 3),
    ]
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn reports_match(a: &MisDReport, b: &MisDReport, tol: f64) -> bool {
    a.values().iter().zip(b.values()).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => close(*x, y, tol),
        (None, None) => true,
        _ => false,
    })
}

/// Four-class predictions over [`random_scores`] confidences.
pub fn classified_set(r: &mut ChaCha8Rng, n: usize) -> Vec<ScoredPrediction> {
    random_scores(r, n, 0.3)
        .into_iter()
        .map(|p| {
            let label = r.random_range(0..4);
            let predicted = if p.correct { label } else { (label + 1 + r.random_range(0..3)) % 4 };
            ScoredPrediction::classified(p.confidence, predicted, label)
        })
        .collect()
}
