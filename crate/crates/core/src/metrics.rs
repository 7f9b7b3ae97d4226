//! Binary classification metrics and resampling-based uncertainty.
//!
//! Labels and predictions are ±1 with +1 as the positive class. The ROC
//! sweep walks thresholds over the distinct scores in descending order with
//! ties grouped, so the curve has one vertex per unique score; its
//! trapezoidal area equals the normalized Mann–Whitney U statistic (pairs
//! won plus half the ties, over `n₊·n₋`). Confidence intervals come from
//! percentile bootstrap over seeded resamples; resamples that lose one of
//! the classes are redrawn and counted rather than silently kept.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("no samples")]
    Empty,
    #[error("labels and predictions must be -1 or +1, got {0}")]
    BadLabel(i8),
    #[error("need both classes present")]
    SingleClass,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("permutation importance needs at least one repeat")]
    ZeroRepeats,
    #[error("rows are ragged: row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("prediction callback failed: {0}")]
    PredictionFailed(String),
}

fn check_labels(values: &[i8]) -> Result<(), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = values.iter().find(|&&v| v != 1 && v != -1) {
        return Err(MetricsError::BadLabel(bad));
    }
    Ok(())
}

fn check_paired(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch { a, b });
    }
    Ok(())
}

/// Fraction of matching prediction/label pairs.
pub fn accuracy(preds: &[i8], labels: &[i8]) -> Result<f64, MetricsError> {
    check_paired(preds.len(), labels.len())?;
    check_labels(preds)?;
    check_labels(labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Counts as `[[TN, FP], [FN, TP]]`: row = true class, column = predicted,
/// with the negative class first.
pub fn confusion(preds: &[i8], labels: &[i8]) -> Result<[[usize; 2]; 2], MetricsError> {
    check_paired(preds.len(), labels.len())?;
    check_labels(preds)?;
    check_labels(labels)?;
    let mut m = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels) {
        let row = usize::from(l > 0);
        let col = usize::from(p > 0);
        m[row][col] += 1;
    }
    Ok(m)
}

/// Per-class precision and recall, `[negative, positive]`; `None` where the
/// denominator is zero.
pub fn precision_recall(confusion: &[[usize; 2]; 2]) -> ([Option<f64>; 2], [Option<f64>; 2]) {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let [[tn, fp], [fn_, tp]] = *confusion;
    let precision = [ratio(tn, tn + fn_), ratio(tp, tp + fp)];
    let recall = [ratio(tn, tn + fp), ratio(tp, tp + fn_)];
    (precision, recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep with grouped ties: predict positive at score ≥ threshold,
/// one vertex per distinct score, plus the (0,0) origin.
pub fn roc_curve(scores: &[f64], labels: &[i8]) -> Result<Vec<RocPoint>, MetricsError> {
    check_paired(scores.len(), labels.len())?;
    check_labels(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn auc_trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) * 0.5)
        .sum()
}

/// Full sweep plus area in one call.
pub fn roc_auc(scores: &[f64], labels: &[i8]) -> Result<(Vec<RocPoint>, f64), MetricsError> {
    let points = roc_curve(scores, labels)?;
    let auc = auc_trapezoid(&points);
    Ok((points, auc))
}

/// Evaluation summary for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// `[[TN, FP], [FN, TP]]`
    pub confusion: [[usize; 2]; 2],
    /// `[negative class, positive class]`
    pub precision: [Option<f64>; 2],
    pub recall: [Option<f64>; 2],
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Assemble the standard report from scores, hard predictions and labels.
/// Predictions are taken as given rather than re-derived from the scores, so
/// models whose decision rule is not `score ≥ 0` stay faithful.
pub fn evaluate(scores: &[f64], preds: &[i8], labels: &[i8]) -> Result<EvalReport, MetricsError> {
    check_paired(scores.len(), preds.len())?;
    let accuracy = accuracy(preds, labels)?;
    let confusion = confusion(preds, labels)?;
    let (precision, recall) = precision_recall(&confusion);
    let (roc, auc) = roc_auc(scores, labels)?;
    Ok(EvalReport { n: labels.len(), accuracy, confusion, precision, recall, roc, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Values are sign-coded predictions (±1, or any score whose sign is the
    /// predicted class).
    Accuracy,
    /// Values are ranking scores.
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Point estimate of the metric on the full sample.
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub b: usize,
    pub seed: u64,
    /// Resamples discarded for being single-class before `b` good ones were
    /// collected.
    pub degenerate_redraws: usize,
}

fn metric_value(values: &[f64], labels: &[i8], metric: MetricKind) -> Result<f64, MetricsError> {
    match metric {
        MetricKind::Accuracy => {
            let preds: Vec<i8> = values.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
            accuracy(&preds, labels)
        }
        MetricKind::Auc => roc_auc(values, labels).map(|(_, a)| a),
    }
}

/// 95% percentile interval from `b` seeded resamples with replacement.
pub fn bootstrap_ci(
    values: &[f64],
    labels: &[i8],
    metric: MetricKind,
    b: usize,
    seed: u64,
) -> Result<BootstrapCi, MetricsError> {
    check_paired(values.len(), labels.len())?;
    check_labels(labels)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    if b < 100 {
        return Err(MetricsError::TooFewResamples(b));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(MetricsError::SingleClass);
    }
    let mean = metric_value(values, labels, metric)?;
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(b);
    let mut degenerate_redraws = 0usize;
    let mut rv = vec![0.0; n];
    let mut rl = vec![0i8; n];
    while stats.len() < b {
        for k in 0..n {
            let idx = rng.random_range(0..n);
            rv[k] = values[idx];
            rl[k] = labels[idx];
        }
        if rl.iter().all(|&l| l == rl[0]) {
            degenerate_redraws += 1;
            continue;
        }
        stats.push(metric_value(&rv, &rl, metric)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // nearest-rank percentiles: ⌈q·B⌉-th order statistic
    let rank = |q: f64| ((q * b as f64).ceil() as usize).clamp(1, b) - 1;
    Ok(BootstrapCi {
        mean,
        lower: stats[rank(0.025)],
        upper: stats[rank(0.975)],
        b,
        seed,
        degenerate_redraws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub index: usize,
    /// Mean of `baseline_accuracy − permuted_accuracy` over the repeats.
    pub mean_drop: f64,
    /// Population standard deviation over the repeats.
    pub std_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermImportance {
    pub baseline_accuracy: f64,
    pub repeats: usize,
    pub seed: u64,
    pub features: Vec<FeatureImportance>,
}

/// Accuracy drop when one feature column is shuffled, repeated `repeats`
/// times per feature with a fixed column/repeat order so results are
/// reproducible per seed.
pub fn permutation_importance<F>(
    x: &[Vec<f64>],
    labels: &[i8],
    mut predict: F,
    repeats: usize,
    seed: u64,
) -> Result<PermImportance, MetricsError>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<i8>, MetricsError>,
{
    check_paired(x.len(), labels.len())?;
    check_labels(labels)?;
    if repeats == 0 {
        return Err(MetricsError::ZeroRepeats);
    }
    let width = x.first().map(Vec::len).unwrap_or(0);
    for (row, r) in x.iter().enumerate() {
        if r.len() != width {
            return Err(MetricsError::RaggedRow { row, got: r.len(), expected: width });
        }
    }
    let baseline_accuracy = accuracy(&predict(x)?, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(width);
    for j in 0..width {
        let mut drops = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut column: Vec<f64> = x.iter().map(|r| r[j]).collect();
            column.shuffle(&mut rng);
            let permuted: Vec<Vec<f64>> = x
                .iter()
                .zip(&column)
                .map(|(r, &v)| {
                    let mut row = r.clone();
                    row[j] = v;
                    row
                })
                .collect();
            let acc = accuracy(&predict(&permuted)?, labels)?;
            drops.push(baseline_accuracy - acc);
        }
        let mean = drops.iter().sum::<f64>() / repeats as f64;
        let var = drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / repeats as f64;
        features.push(FeatureImportance { index: j, mean_drop: mean, std_drop: var.sqrt() });
    }
    Ok(PermImportance { baseline_accuracy, repeats, seed, features })
}
