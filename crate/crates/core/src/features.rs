//! Column-wise feature conditioning and feature ranking.
//!
//! Each raw descriptor column is made roughly Gaussian before kernel methods
//! see it: a Box-Cox power transform
//!
//! ```text
//! w = (z^λ − 1)/λ   (λ ≠ 0),    w = ln z   (λ = 0),    z = x + shift > 0,
//! ```
//!
//! followed by standardization to zero mean and unit variance. The shift is
//! the smallest nudge that makes the training column positive
//! (`max(0, ε − min)`, `ε = 1e-12`); `λ` maximizes the profile log-likelihood
//!
//! ```text
//! LL(λ) = −(N/2)·ln σ̂²(λ) + (λ − 1)·Σ ln z_i
//! ```
//!
//! over `λ ∈ [−5, 5]` via a coarse scan plus golden-section refinement to
//! `|Δλ| ≤ 1e-5`. Means, variances and the fitted `λ` all come from the
//! training split only; transforming later data reuses them verbatim.
//!
//! Ranking trains a linear soft-margin classifier on the standardized
//! columns and orders features by `|w_f|` of the primal weight vector,
//! largest first, lower index on ties.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{self, KernelSpec, SvmError, SvmParams};

/// Smallest admissible shifted value: `shift = max(0, ε − min)`.
const SHIFT_EPS: f64 = 1e-12;
/// Box-Cox exponents are searched over `[−LAMBDA_RANGE, +LAMBDA_RANGE]`.
const LAMBDA_RANGE: f64 = 5.0;
/// Width at which golden-section refinement of `λ` stops.
const LAMBDA_TOL: f64 = 1e-6;
/// Below this magnitude the power transform takes its `ln` limit.
const LAMBDA_ZERO: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("no rows to fit")]
    EmptyInput,
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("features must be finite")]
    NonFinite,
    #[error("column {0} is constant; it carries no information to transform")]
    ConstantColumn(usize),
    #[error("value {value} in column {column} is not positive after shift {shift}")]
    NonPositive { column: usize, value: f64, shift: f64 },
    #[error("power transform needs z > 0, got {0}")]
    NonPositiveArgument(f64),
    #[error("expected {expected} columns, got {got}")]
    ColumnCountMismatch { got: usize, expected: usize },
    #[error("asked for top {k} of {available} features")]
    TopKOutOfRange { k: usize, available: usize },
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("pipeline (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// The power transform itself; `z` must be strictly positive.
pub fn boxcox(z: f64, lambda: f64) -> Result<f64, FeaturesError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(FeaturesError::NonPositiveArgument(z));
    }
    if lambda.abs() < LAMBDA_ZERO {
        Ok(z.ln())
    } else {
        // (z^λ − 1)/λ computed as expm1(λ·ln z)/λ, which stays accurate
        // through the λ → 0 crossover
        Ok((lambda * z.ln()).exp_m1() / lambda)
    }
}

/// Profile log-likelihood of the transformed sample, up to the constant term.
fn profile_log_likelihood(shifted: &[f64], log_sum: f64, lambda: f64) -> f64 {
    let n = shifted.len() as f64;
    let mut mean = 0.0;
    let mut transformed = Vec::with_capacity(shifted.len());
    for &z in shifted {
        let w = if lambda.abs() < LAMBDA_ZERO {
            z.ln()
        } else {
            (lambda * z.ln()).exp_m1() / lambda
        };
        if !w.is_finite() {
            return f64::NEG_INFINITY;
        }
        mean += w;
        transformed.push(w);
    }
    mean /= n;
    let var = transformed.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * log_sum
}

/// A fitted per-column Box-Cox transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    lambda: f64,
    shift: f64,
}

impl BoxCox {
    /// Fit shift and exponent to one column by maximum likelihood.
    pub fn fit(column: &[f64]) -> Result<Self, FeaturesError> {
        if column.is_empty() {
            return Err(FeaturesError::EmptyInput);
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(FeaturesError::NonFinite);
        }
        let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Err(FeaturesError::ConstantColumn(0));
        }
        let shift = (SHIFT_EPS - min).max(0.0);
        let shifted: Vec<f64> = column.iter().map(|v| v + shift).collect();
        if let Some(&bad) = shifted.iter().find(|&&z| !(z > 0.0)) {
            return Err(FeaturesError::NonPositive { column: 0, value: bad - shift, shift });
        }
        let log_sum: f64 = shifted.iter().map(|z| z.ln()).sum();
        let ll = |lambda: f64| profile_log_likelihood(&shifted, log_sum, lambda);

        // coarse scan pins the basin, golden-section polishes inside it
        let steps = 101;
        let mut best_idx: usize = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for i in 0..steps {
            let lambda = -LAMBDA_RANGE + 2.0 * LAMBDA_RANGE * i as f64 / (steps - 1) as f64;
            let v = ll(lambda);
            if v > best_ll {
                best_ll = v;
                best_idx = i;
            }
        }
        let step = 2.0 * LAMBDA_RANGE / (steps - 1) as f64;
        let mut a = -LAMBDA_RANGE + step * best_idx.saturating_sub(1) as f64;
        let mut b = (-LAMBDA_RANGE + step * (best_idx + 1) as f64).min(LAMBDA_RANGE);
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = ll(c);
        let mut fd = ll(d);
        while b - a > LAMBDA_TOL {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = ll(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = ll(d);
            }
        }
        let lambda = 0.5 * (a + b);
        Ok(Self { lambda, shift })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn apply_value(&self, x: f64) -> Result<f64, FeaturesError> {
        boxcox(x + self.shift, self.lambda)
    }

    pub fn apply(&self, column: &[f64]) -> Result<Vec<f64>, FeaturesError> {
        column.iter().map(|&x| self.apply_value(x)).collect()
    }
}

/// Zero-mean, unit-variance scaling with population statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: f64,
    std: f64,
}

impl Standardizer {
    pub fn fit(column: &[f64]) -> Result<Self, FeaturesError> {
        if column.is_empty() {
            return Err(FeaturesError::EmptyInput);
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(FeaturesError::NonFinite);
        }
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(FeaturesError::ConstantColumn(0));
        }
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn apply_value(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Everything needed to replay one column's conditioning on new data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub lambda: f64,
    pub shift: f64,
    pub mean: f64,
    pub std: f64,
}

/// Fixed stage order, spelled out in the serialized form so readers of the
/// JSON don't have to guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOrder {
    BoxcoxThenStandardize,
}

/// Per-column Box-Cox + standardization, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    order: TransformOrder,
    columns: Vec<ColumnTransform>,
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize, FeaturesError> {
    if x.is_empty() || x[0].is_empty() {
        return Err(FeaturesError::EmptyInput);
    }
    let width = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != width {
            return Err(FeaturesError::RaggedRow { row, got: r.len(), expected: width });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(FeaturesError::NonFinite);
        }
    }
    Ok(width)
}

impl FeaturePipeline {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self, FeaturesError> {
        let width = check_matrix(x)?;
        let mut columns = Vec::with_capacity(width);
        for j in 0..width {
            let column: Vec<f64> = x.iter().map(|r| r[j]).collect();
            let relabel = |e| match e {
                FeaturesError::ConstantColumn(_) => FeaturesError::ConstantColumn(j),
                FeaturesError::NonPositive { value, shift, .. } => {
                    FeaturesError::NonPositive { column: j, value, shift }
                }
                other => other,
            };
            let bc = BoxCox::fit(&column).map_err(relabel)?;
            let transformed = bc.apply(&column).map_err(relabel)?;
            let std = Standardizer::fit(&transformed).map_err(relabel)?;
            columns.push(ColumnTransform {
                lambda: bc.lambda(),
                shift: bc.shift(),
                mean: std.mean(),
                std: std.std(),
            });
        }
        Ok(Self { order: TransformOrder::BoxcoxThenStandardize, columns })
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnTransform] {
        &self.columns
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, FeaturesError> {
        if row.len() != self.columns.len() {
            return Err(FeaturesError::ColumnCountMismatch {
                got: row.len(),
                expected: self.columns.len(),
            });
        }
        row.iter()
            .zip(&self.columns)
            .enumerate()
            .map(|(j, (&x, t))| {
                let z = x + t.shift;
                if !(z > 0.0) {
                    return Err(FeaturesError::NonPositive { column: j, value: x, shift: t.shift });
                }
                let w = boxcox(z, t.lambda)?;
                Ok((w - t.mean) / t.std)
            })
            .collect()
    }

    pub fn transform(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FeaturesError> {
        x.iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), FeaturesError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, FeaturesError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// One feature's position in the importance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub index: usize,
    /// `|w_f|` of the separating hyperplane on standardized inputs.
    pub weight: f64,
}

/// Rank features by linear separating-plane weight magnitude at box bound
/// `c`. `x` should already be standardized; `y` holds ±1 labels.
pub fn rank_features(x: &[Vec<f64>], y: &[i8], c: f64) -> Result<Vec<FeatureRank>, FeaturesError> {
    check_matrix(x)?;
    let params = SvmParams { kernel: KernelSpec::Linear, c, ..SvmParams::default() };
    let model = svm::train(x, y, &params)?;
    let weights = model.linear_weights()?;
    let mut ranking: Vec<FeatureRank> = weights
        .into_iter()
        .enumerate()
        .map(|(index, w)| FeatureRank { index, weight: w.abs() })
        .collect();
    ranking.sort_by(|a, b| {
        b.weight.partial_cmp(&a.weight).unwrap().then(a.index.cmp(&b.index))
    });
    Ok(ranking)
}

/// Keep the `k` highest-ranked columns, in ranking order.
pub fn select_top_k(
    x: &[Vec<f64>],
    ranking: &[FeatureRank],
    k: usize,
) -> Result<Vec<Vec<f64>>, FeaturesError> {
    let width = check_matrix(x)?;
    if k == 0 || k > ranking.len() || k > width {
        return Err(FeaturesError::TopKOutOfRange { k, available: ranking.len().min(width) });
    }
    let picked: Vec<usize> = ranking[..k].iter().map(|r| r.index).collect();
    if let Some(&bad) = picked.iter().find(|&&j| j >= width) {
        return Err(FeaturesError::TopKOutOfRange { k: bad, available: width });
    }
    Ok(x.iter().map(|row| picked.iter().map(|&j| row[j]).collect()).collect())
}
