//! Soft-margin support vector classification.
//!
//! Training solves the dual problem
//!
//! ```text
//! min_α  (1/2) αᵀQα − eᵀα    s.t.  0 ≤ α_i ≤ C,  yᵀα = 0,
//! ```
//!
//! with `Q_ij = y_i y_j K(x_i, x_j)`, by sequential minimal optimization:
//! repeatedly pick the maximal-violating pair `(i, j)` — `i` maximizing
//! `−y_t G_t` over the upward-feasible set, `j` minimizing it over the
//! downward-feasible set, lowest index on ties — and solve the two-variable
//! subproblem analytically, clipping to the box. `G = Qα − e` is kept
//! incrementally. Convergence is declared when the violation gap drops to
//! `tol`; hitting `max_iter` first surfaces the final iterate inside the
//! error so callers can inspect (or keep) the partial solution.
//!
//! Kernels: RBF `exp(−γ‖x−z‖²)` with `γ` given or derived from the data
//! (`1 / (n_features · Var(X))`, variance over all matrix entries), plain
//! dot product, or a caller-supplied Gram matrix for kernels computed
//! elsewhere (e.g. sampled on a quantum simulator).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qkernel::GramMatrix;

/// Guard for vanishing curvature in the two-variable subproblem.
const TAU: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("got {labels} labels for {rows} rows")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("labels must be -1 or +1, got {0}")]
    BadLabel(i8),
    #[error("training needs both classes")]
    SingleClass,
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("features must be finite")]
    NonFiniteFeature,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("gamma=scale is undefined on constant features")]
    ZeroVariance,
    #[error("iteration cap {max_iter} hit with violation gap {gap:.3e}; final iterate attached")]
    MaxIterReached { max_iter: usize, gap: f64, model: Box<SvmModel> },
    #[error("model was trained on a precomputed kernel; pass kernel rows, not feature vectors")]
    NeedsKernelRows,
    #[error("model computes its own kernel; pass feature vectors, not kernel rows")]
    NeedsFeatureVectors,
    #[error("kernel matrix is missing a column for support vector `{0}`")]
    MissingKernelColumn(String),
    #[error("kernel spec is `precomputed`; train via a Gram matrix")]
    PrecomputedNeedsGram,
    #[error("Gram training needs a square matrix, got {rows}x{cols}")]
    GramNotSquare { rows: usize, cols: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// How to pick the RBF bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    /// `1 / (n_features · Var(X))`, population variance over every entry.
    Scale,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: GammaSpec },
    Linear,
    /// Kernel values arrive as a Gram matrix; the model never sees features.
    Precomputed,
}

/// Kernel with any data-dependent choices pinned down at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum ResolvedKernel {
    Rbf { gamma: f64 },
    Linear,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: KernelSpec,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::Rbf { gamma: GammaSpec::Scale },
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.c > 0.0) {
            return Err(SvmError::BadParameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(SvmError::BadParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SvmError::BadParameter("max_iter must be at least 1".into()));
        }
        if let KernelSpec::Rbf { gamma: GammaSpec::Value(g) } = self.kernel {
            if !(g > 0.0) {
                return Err(SvmError::BadParameter(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

/// `γ = 1 / (n_features · Var(X))` with the population variance taken over
/// all entries of the feature matrix.
pub fn gamma_scale(x: &[Vec<f64>]) -> Result<f64, SvmError> {
    if x.is_empty() || x[0].is_empty() {
        return Err(SvmError::EmptyTrainingSet);
    }
    let n_features = x[0].len();
    let count = (x.len() * n_features) as f64;
    let mean = x.iter().flatten().sum::<f64>() / count;
    let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    if var <= 0.0 {
        return Err(SvmError::ZeroVariance);
    }
    Ok(1.0 / (n_features as f64 * var))
}

fn kernel_value(kernel: &ResolvedKernel, a: &[f64], b: &[f64]) -> f64 {
    match *kernel {
        ResolvedKernel::Rbf { gamma } => {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            (-gamma * d2).exp()
        }
        ResolvedKernel::Linear => a.iter().zip(b).map(|(u, v)| u * v).sum(),
        ResolvedKernel::Precomputed => unreachable!("precomputed kernels never evaluate features"),
    }
}

/// A trained classifier. Keeps the full dual solution (not just the support
/// set) so the optimality conditions can be audited after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    kernel: ResolvedKernel,
    c: f64,
    bias: f64,
    /// True when no interior dual variables existed and the bias came from
    /// the midpoint of the class-wise margin extremes.
    bias_fallback: bool,
    alpha: Vec<f64>,
    labels: Vec<i8>,
    support: Vec<usize>,
    /// Training rows, present unless the kernel was precomputed.
    vectors: Option<Vec<Vec<f64>>>,
    /// Training-row ids, present only for precomputed kernels; prediction
    /// matches kernel columns against these.
    train_ids: Option<Vec<String>>,
    iterations: usize,
    gap: f64,
    dual_objective: f64,
}

struct SmoOutcome {
    alpha: Vec<f64>,
    grad: Vec<f64>,
    iterations: usize,
    gap: f64,
    converged: bool,
}

/// Core pair-update loop over a dense kernel matrix.
fn smo(k: &[f64], y: &[i8], c: f64, tol: f64, max_iter: usize) -> SmoOutcome {
    let n = y.len();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let q = |i: usize, j: usize| yf[i] * yf[j] * k[i * n + j];
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;

    while iterations < max_iter {
        // maximal-violating pair: i over I_up, j over I_low, lowest index wins ties
        let mut i = usize::MAX;
        let mut m_up = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -yf[t] * grad[t];
            let in_up = (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0 && alpha[t] > 0.0) || (y[t] < 0 && alpha[t] < c);
            if in_up && v > m_up {
                m_up = v;
                i = t;
            }
            if in_low && v < m_low {
                m_low = v;
                j = t;
            }
        }
        gap = m_up - m_low;
        if gap <= tol {
            converged = true;
            break;
        }

        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(TAU);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        iterations += 1;
    }

    if converged {
        SmoOutcome { alpha, grad, iterations, gap, converged }
    } else {
        // recompute the gap at the final iterate for honest reporting
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -yf[t] * grad[t];
            if (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0.0) {
                m_up = m_up.max(v);
            }
            if (y[t] > 0 && alpha[t] > 0.0) || (y[t] < 0 && alpha[t] < c) {
                m_low = m_low.min(v);
            }
        }
        SmoOutcome { alpha, grad, iterations, gap: m_up - m_low, converged }
    }
}

fn validate_labels(y: &[i8], rows: usize) -> Result<(), SvmError> {
    if rows == 0 {
        return Err(SvmError::EmptyTrainingSet);
    }
    if y.len() != rows {
        return Err(SvmError::LabelCountMismatch { labels: y.len(), rows });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(SvmError::BadLabel(bad));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(SvmError::SingleClass);
    }
    Ok(())
}

/// Bias from the converged gradient. Interior (0 < α < C) points give
/// `y_i − g_i = −y_i G_i` exactly; their mean is the bias. With no interior
/// point, fall back to the midpoint rule over `g_i = Σ_j α_j y_j K_ij`:
/// `b = −(max_{y=−1} g + min_{y=+1} g) / 2`, and flag it.
fn bias_from_gradient(alpha: &[f64], grad: &[f64], y: &[i8], c: f64) -> (f64, bool) {
    let mut sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..y.len() {
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += -(y[t] as f64) * grad[t];
            n_free += 1;
        }
    }
    if n_free > 0 {
        return (sum / n_free as f64, false);
    }
    let mut max_neg = f64::NEG_INFINITY;
    let mut min_pos = f64::INFINITY;
    for t in 0..y.len() {
        // g_t = y_t·(G_t + 1)
        let g = (y[t] as f64) * (grad[t] + 1.0);
        if y[t] < 0 {
            max_neg = max_neg.max(g);
        } else {
            min_pos = min_pos.min(g);
        }
    }
    (-(max_neg + min_pos) / 2.0, true)
}

fn finish(
    outcome: SmoOutcome,
    kernel: ResolvedKernel,
    y: &[i8],
    c: f64,
    max_iter: usize,
    vectors: Option<Vec<Vec<f64>>>,
    train_ids: Option<Vec<String>>,
) -> Result<SvmModel, SvmError> {
    let (bias, bias_fallback) = bias_from_gradient(&outcome.alpha, &outcome.grad, y, c);
    // (1/2)αᵀQα − eᵀα == (1/2)·Σ α_i (G_i − 1)
    let dual_objective = 0.5
        * outcome
            .alpha
            .iter()
            .zip(&outcome.grad)
            .map(|(&a, &g)| a * (g - 1.0))
            .sum::<f64>();
    let support: Vec<usize> =
        (0..y.len()).filter(|&t| outcome.alpha[t] > 0.0).collect();
    let model = SvmModel {
        kernel,
        c,
        bias,
        bias_fallback,
        alpha: outcome.alpha,
        labels: y.to_vec(),
        support,
        vectors,
        train_ids,
        iterations: outcome.iterations,
        gap: outcome.gap,
        dual_objective,
    };
    if outcome.converged {
        Ok(model)
    } else {
        Err(SvmError::MaxIterReached { max_iter, gap: model.gap, model: Box::new(model) })
    }
}

/// Train on feature vectors with an RBF or linear kernel.
pub fn train(x: &[Vec<f64>], y: &[i8], params: &SvmParams) -> Result<SvmModel, SvmError> {
    params.validate()?;
    validate_labels(y, x.len())?;
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(SvmError::EmptyTrainingSet);
    }
    for (row, r) in x.iter().enumerate() {
        if r.len() != n_features {
            return Err(SvmError::RaggedRow { row, got: r.len(), expected: n_features });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteFeature);
        }
    }
    let kernel = match params.kernel {
        KernelSpec::Rbf { gamma: GammaSpec::Scale } => ResolvedKernel::Rbf { gamma: gamma_scale(x)? },
        KernelSpec::Rbf { gamma: GammaSpec::Value(g) } => ResolvedKernel::Rbf { gamma: g },
        KernelSpec::Linear => ResolvedKernel::Linear,
        KernelSpec::Precomputed => return Err(SvmError::PrecomputedNeedsGram),
    };
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel_value(&kernel, &x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let outcome = smo(&k, y, params.c, params.tol, params.max_iter);
    finish(outcome, kernel, y, params.c, params.max_iter, Some(x.to_vec()), None)
}

/// Train against a precomputed square Gram matrix; the model remembers the
/// training-row ids and later reads kernel columns by id.
pub fn train_precomputed(gram: &GramMatrix, y: &[i8], params: &SvmParams) -> Result<SvmModel, SvmError> {
    params.validate()?;
    if !matches!(params.kernel, KernelSpec::Precomputed) {
        return Err(SvmError::BadParameter(
            "training from a Gram matrix requires kernel = precomputed".into(),
        ));
    }
    let n = gram.n_rows();
    if gram.n_cols() != n {
        return Err(SvmError::GramNotSquare { rows: n, cols: gram.n_cols() });
    }
    validate_labels(y, n)?;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = gram.get(i, j);
            if !v.is_finite() {
                return Err(SvmError::NonFiniteFeature);
            }
            k[i * n + j] = v;
        }
    }
    let outcome = smo(&k, y, params.c, params.tol, params.max_iter);
    finish(
        outcome,
        ResolvedKernel::Precomputed,
        y,
        params.c,
        params.max_iter,
        None,
        Some(gram.row_ids().to_vec()),
    )
}

impl SvmModel {
    pub fn kernel(&self) -> &ResolvedKernel {
        &self.kernel
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn bias_fallback(&self) -> bool {
        self.bias_fallback
    }

    /// Full dual solution, one coefficient per training row.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Indices of training rows with strictly positive dual coefficient.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Violation gap at the final iterate.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn dual_objective(&self) -> f64 {
        self.dual_objective
    }

    pub fn vectors(&self) -> Option<&[Vec<f64>]> {
        self.vectors.as_deref()
    }

    pub fn train_ids(&self) -> Option<&[String]> {
        self.train_ids.as_deref()
    }

    /// Primal weight vector `w = Σ α_i y_i x_i`; linear kernel only.
    pub fn linear_weights(&self) -> Result<Vec<f64>, SvmError> {
        if !matches!(self.kernel, ResolvedKernel::Linear) {
            return Err(SvmError::BadParameter("weights are only defined for the linear kernel".into()));
        }
        let x = self.vectors.as_ref().expect("linear models keep their vectors");
        let mut w = vec![0.0; x[0].len()];
        for &s in &self.support {
            let coef = self.alpha[s] * self.labels[s] as f64;
            for (wf, xf) in w.iter_mut().zip(&x[s]) {
                *wf += coef * xf;
            }
        }
        Ok(w)
    }

    pub fn decision_function(&self, x: &[f64]) -> Result<f64, SvmError> {
        let vectors = self.vectors.as_ref().ok_or(SvmError::NeedsKernelRows)?;
        if x.len() != vectors[0].len() {
            return Err(SvmError::RaggedRow { row: 0, got: x.len(), expected: vectors[0].len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFiniteFeature);
        }
        let mut f = self.bias;
        for &s in &self.support {
            f += self.alpha[s] * self.labels[s] as f64 * kernel_value(&self.kernel, x, &vectors[s]);
        }
        Ok(f)
    }

    /// Class of `x`; the boundary itself goes to +1.
    pub fn predict(&self, x: &[f64]) -> Result<i8, SvmError> {
        Ok(label_of(self.decision_function(x)?))
    }

    pub fn decision_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, SvmError> {
        xs.iter().map(|x| self.decision_function(x)).collect()
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<i8>, SvmError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Decision values for a precomputed model: `gram` holds kernel values
    /// between prediction rows and training samples, with training ids as
    /// column names. Every support vector's column must be present.
    pub fn decision_from_gram(&self, gram: &GramMatrix) -> Result<Vec<f64>, SvmError> {
        let train_ids = self.train_ids.as_ref().ok_or(SvmError::NeedsFeatureVectors)?;
        let col_of: HashMap<&str, usize> =
            gram.col_ids().iter().enumerate().map(|(c, id)| (id.as_str(), c)).collect();
        let mut support_cols = Vec::with_capacity(self.support.len());
        for &s in &self.support {
            let id = &train_ids[s];
            let col = col_of
                .get(id.as_str())
                .copied()
                .ok_or_else(|| SvmError::MissingKernelColumn(id.clone()))?;
            support_cols.push((s, col));
        }
        Ok((0..gram.n_rows())
            .map(|r| {
                let mut f = self.bias;
                for &(s, col) in &support_cols {
                    f += self.alpha[s] * self.labels[s] as f64 * gram.get(r, col);
                }
                f
            })
            .collect())
    }

    pub fn predict_from_gram(&self, gram: &GramMatrix) -> Result<Vec<i8>, SvmError> {
        Ok(self.decision_from_gram(gram)?.into_iter().map(label_of).collect())
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SvmError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, SvmError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

fn label_of(decision: f64) -> i8 {
    if decision >= 0.0 {
        1
    } else {
        -1
    }
}
