//! Maximum-softmax confidence, the accept/flag decision rule, and the
//! misclassification-detection metrics.
//!
//! Tie conventions, chosen so that every metric depends only on the multiset
//! of `(confidence, correct)` pairs and never on input order:
//!
//! * AUROC gives half credit to tied correct/error pairs.
//! * FPR95 and AUPR evaluate thresholds only at observed confidence values,
//!   so a tie group is accepted or rejected as a whole. AUPR is the
//!   step-wise (non-interpolated) average precision.
//! * AURC averages the risk at each of the `n` coverage points; inside a
//!   group of tied confidences the errors are spread evenly, which is the
//!   expectation of the risk over all orderings of the group.
//!
//! Without ties every metric reduces to its textbook per-rank form.

use serde::{Deserialize, Serialize};

use crate::losses::class_probabilities;
use crate::model::Embedding;
use crate::{MisdError, Result};

/// Confidence plus, when known, the predicted and true class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub confidence: f64,
    pub predicted: Option<usize>,
    pub label: Option<usize>,
    pub correct: bool,
}

impl ScoredPrediction {
    pub fn classified(confidence: f64, predicted: usize, label: usize) -> Self {
        Self { confidence, predicted: Some(predicted), label: Some(label), correct: predicted == label }
    }

    /// Binary outcome without class information (e.g. in- vs out-of-distribution).
    pub fn binary(confidence: f64, correct: bool) -> Self {
        Self { confidence, predicted: None, label: None, correct }
    }

    pub fn with_confidence(self, confidence: f64) -> Self {
        Self { confidence, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted: usize,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// Softmax over cosine similarities; argmax with lowest index on ties, and
/// the maximum probability as confidence.
pub fn predict(q: &Embedding, class_features: &[Embedding], temperature: f64) -> Result<Prediction> {
    if class_features.len() < 2 {
        return Err(MisdError::DegenerateTask("prediction needs at least 2 classes".into()));
    }
    let probabilities = class_probabilities(q, class_features, temperature)?;
    let mut predicted = 0;
    for (c, &p) in probabilities.iter().enumerate() {
        if p > probabilities[predicted] {
            predicted = c;
        }
    }
    Ok(Prediction { predicted, confidence: probabilities[predicted], probabilities })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    AcceptAsCorrect,
    FlagAsMisclassified,
}

pub fn decide(confidence: f64, threshold: f64) -> Decision {
    if confidence >= threshold {
        Decision::AcceptAsCorrect
    } else {
        Decision::FlagAsMisclassified
    }
}

struct Counts {
    correct: usize,
    errors: usize,
}

fn counts(preds: &[ScoredPrediction]) -> Counts {
    let correct = preds.iter().filter(|p| p.correct).count();
    Counts { correct, errors: preds.len() - correct }
}

fn require_both(preds: &[ScoredPrediction], metric: &'static str) -> Result<Counts> {
    let c = counts(preds);
    if c.correct == 0 || c.errors == 0 {
        return Err(MisdError::UndefinedMetric {
            metric,
            reason: format!("needs both outcomes, got {} correct and {} errors", c.correct, c.errors),
        });
    }
    Ok(c)
}

/// `(score, positive)` groups of equal score, highest score first.
/// Each group is `(size, positives)`.
fn descending_groups(items: impl Iterator<Item = (f64, bool)>) -> Vec<(usize, usize)> {
    let mut v: Vec<(f64, bool)> = items.collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for (s, pos) in v {
        if groups.is_empty() || s != last {
            groups.push((0, 0));
            last = s;
        }
        let g = groups.last_mut().expect("non-empty");
        g.0 += 1;
        g.1 += pos as usize;
    }
    groups
}

fn check_confidences(preds: &[ScoredPrediction]) -> Result<()> {
    if let Some(p) = preds.iter().find(|p| p.confidence.is_nan()) {
        return Err(MisdError::Data(format!("confidence {} is not a number", p.confidence)));
    }
    Ok(())
}

/// Probability that a random correct prediction is more confident than a
/// random error, ties counted one half.
pub fn auroc(preds: &[ScoredPrediction]) -> Result<f64> {
    check_confidences(preds)?;
    let c = require_both(preds, "auroc")?;
    let groups = descending_groups(preds.iter().map(|p| (p.confidence, p.correct)));
    // walk from the lowest score up, counting errors strictly below
    let mut errors_below = 0usize;
    let mut wins = 0.0;
    for &(size, correct) in groups.iter().rev() {
        let errors = size - correct;
        wins += correct as f64 * errors_below as f64 + 0.5 * (correct * errors) as f64;
        errors_below += errors;
    }
    Ok(wins / (c.correct as f64 * c.errors as f64))
}

/// Whether `accepted` of `total` correct predictions reaches 95% recall.
pub(crate) fn reaches_tpr95(accepted: usize, total: usize) -> bool {
    accepted * 100 >= total * 95
}

/// Smallest error acceptance rate over thresholds (taken at observed
/// confidences) that still accept at least 95% of the correct predictions.
pub fn fpr_at_95_tpr(preds: &[ScoredPrediction]) -> Result<f64> {
    check_confidences(preds)?;
    let c = require_both(preds, "fpr95")?;
    let mut tp = 0;
    let mut fp = 0;
    for (size, correct) in descending_groups(preds.iter().map(|p| (p.confidence, p.correct))) {
        tp += correct;
        fp += size - correct;
        if reaches_tpr95(tp, c.correct) {
            return Ok(fp as f64 / c.errors as f64);
        }
    }
    unreachable!("the lowest threshold accepts every prediction")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverage {
    pub aurc: f64,
    /// AURC of the ordering that ranks every correct prediction first.
    pub optimal_aurc: f64,
    pub e_aurc: f64,
}

pub fn risk_coverage(preds: &[ScoredPrediction]) -> Result<RiskCoverage> {
    check_confidences(preds)?;
    if preds.is_empty() {
        return Err(MisdError::UndefinedMetric { metric: "aurc", reason: "no predictions".into() });
    }
    let n = preds.len();
    let mut seen = 0usize;
    let mut errors_seen = 0usize;
    let mut aurc = 0.0;
    for (size, correct) in descending_groups(preds.iter().map(|p| (p.confidence, p.correct))) {
        let errors = size - correct;
        for j in 1..=size {
            let expected_errors = errors_seen as f64 + errors as f64 * j as f64 / size as f64;
            aurc += expected_errors / (seen + j) as f64;
        }
        seen += size;
        errors_seen += errors;
    }
    aurc /= n as f64;

    let n_correct = counts(preds).correct;
    let optimal_aurc = (n_correct + 1..=n).map(|i| (i - n_correct) as f64 / i as f64).sum::<f64>() / n as f64;
    Ok(RiskCoverage { aurc, optimal_aurc, e_aurc: aurc - optimal_aurc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Correct predictions are positives, ranked by confidence.
    Success,
    /// Errors are positives, ranked by negated confidence.
    Error,
}

/// Step-wise average precision.
pub fn aupr(preds: &[ScoredPrediction], polarity: Polarity) -> Result<f64> {
    check_confidences(preds)?;
    let (metric, items): (&'static str, Vec<(f64, bool)>) = match polarity {
        Polarity::Success => ("aupr_success", preds.iter().map(|p| (p.confidence, p.correct)).collect()),
        Polarity::Error => ("aupr_error", preds.iter().map(|p| (-p.confidence, !p.correct)).collect()),
    };
    let positives = items.iter().filter(|i| i.1).count();
    if positives == 0 {
        return Err(MisdError::UndefinedMetric { metric, reason: "no positive samples".into() });
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (size, pos) in descending_groups(items.into_iter()) {
        tp += pos;
        seen += size;
        if pos > 0 {
            ap += (pos as f64 / positives as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

pub fn accuracy(preds: &[ScoredPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(MisdError::UndefinedMetric { metric: "acc", reason: "no predictions".into() });
    }
    Ok(counts(preds).correct as f64 / preds.len() as f64)
}

/// Whether a scores set carries class information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoresKind {
    Classified,
    Binary,
}

/// The seven-number evaluation record. Percentages except AURC and E-AURC,
/// which are scaled by 1000. `None` marks a metric that is not applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisDReport {
    pub acc: Option<f64>,
    pub fpr95: Option<f64>,
    pub aurc: Option<f64>,
    pub e_aurc: Option<f64>,
    pub auroc: Option<f64>,
    pub aupr_success: Option<f64>,
    pub aupr_error: Option<f64>,
}

pub const REPORT_FIELDS: [&str; 7] = ["acc", "fpr95", "aurc", "e_aurc", "auroc", "aupr_success", "aupr_error"];

impl MisDReport {
    pub fn values(&self) -> [Option<f64>; 7] {
        [self.acc, self.fpr95, self.aurc, self.e_aurc, self.auroc, self.aupr_success, self.aupr_error]
    }

    pub fn from_values(v: [Option<f64>; 7]) -> Self {
        Self { acc: v[0], fpr95: v[1], aurc: v[2], e_aurc: v[3], auroc: v[4], aupr_success: v[5], aupr_error: v[6] }
    }

    /// The value of `metric`, or an undefined-metric error naming it.
    pub fn require(&self, metric: &'static str) -> Result<f64> {
        let idx = REPORT_FIELDS
            .iter()
            .position(|f| *f == metric)
            .ok_or_else(|| MisdError::Config(format!("unknown metric `{metric}`")))?;
        self.values()[idx]
            .ok_or_else(|| MisdError::UndefinedMetric { metric, reason: "not applicable to this input".into() })
    }

    pub fn csv_header() -> String {
        REPORT_FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Range checks every report must satisfy.
    pub fn within_bounds(&self) -> bool {
        let pct = |v: Option<f64>| v.is_none_or(|x| (0.0..=100.0).contains(&x));
        let rc = match (self.aurc, self.e_aurc) {
            (Some(a), Some(e)) => a >= e && e >= -1e-9,
            _ => true,
        };
        pct(self.acc) && pct(self.fpr95) && pct(self.auroc) && pct(self.aupr_success) && pct(self.aupr_error) && rc
    }
}

/// Every applicable metric; inapplicable ones are `None`.
pub fn full_report(preds: &[ScoredPrediction], kind: ScoresKind) -> Result<MisDReport> {
    check_confidences(preds)?;
    if preds.is_empty() {
        return Err(MisdError::UndefinedMetric { metric: "acc", reason: "no predictions".into() });
    }
    let pct = |r: Result<f64>| r.ok().map(|v| v * 100.0);
    let mut report = MisDReport {
        acc: None,
        fpr95: pct(fpr_at_95_tpr(preds)),
        aurc: None,
        e_aurc: None,
        auroc: pct(auroc(preds)),
        aupr_success: None,
        aupr_error: None,
    };
    if kind == ScoresKind::Classified {
        let rc = risk_coverage(preds)?;
        report.acc = pct(accuracy(preds));
        report.aurc = Some(rc.aurc * 1000.0);
        report.e_aurc = Some(rc.e_aurc * 1000.0);
        report.aupr_success = pct(aupr(preds, Polarity::Success));
        report.aupr_error = pct(aupr(preds, Polarity::Error));
    }
    Ok(report)
}
