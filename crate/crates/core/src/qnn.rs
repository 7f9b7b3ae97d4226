//! Hybrid variational classifier: ZZ feature map, layered two-local ansatz,
//! parity readout, and a 2×2 linear head.
//!
//! The trainable circuit applies, per layer `l = 0…L−1`,
//!
//! ```text
//! [ RY(θʸ_{l,j}) RZ(θᶻ_{l,j}) on each qubit j ]  then  [ CX(j,k) for all j<k ],
//! ```
//!
//! giving `2·n·L` angles (24 at the default n=3, L=4); an optional trailing
//! rotation layer adds `2n` more. Measurement collapses the `2ⁿ` basis
//! probabilities to two classes by bit parity, the head maps them to logits
//! `z = W·p + b`, and training minimizes the softmax cross-entropy.
//!
//! Gradients for the angles use the parameter-shift rule on the exact state,
//! `∂p/∂θ = (p(θ+π/2) − p(θ−π/2))/2`, chained analytically through the head;
//! head gradients are closed-form. Updates are Adam with the AMSGrad cap,
//! the learning rate halves after `P_LR` stagnant validation epochs, and
//! training stops once the last `P_ES` validation losses show no improvement
//! `> δ` over the best earlier loss (never before `E_min` epochs). The
//! checkpoint is the parameter set at the best validation loss.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qkernel::{feature_map_circuit, FeatureMapSpec, QkernelError};
use crate::qsim::{self, Circuit, QsimError, StateVector};

#[derive(Debug, Error)]
pub enum QnnError {
    #[error("ansatz expects {expected} parameters, got {got}")]
    ParamCountMismatch { expected: usize, got: usize },
    #[error("feature map and ansatz disagree on qubit count: {map} vs {ansatz}")]
    QubitMismatch { map: usize, ansatz: usize },
    #[error("ansatz needs at least one layer")]
    ZeroLayers,
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("got {labels} labels for {rows} rows")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("training and validation sets must be non-empty")]
    EmptySet,
    #[error("invalid training control: {0}")]
    BadControl(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient component")]
    NonFiniteGradient,
    #[error("basis index {index} out of range for {n_qubits} qubits")]
    IndexOutOfRange { index: usize, n_qubits: usize },
    #[error(transparent)]
    Map(#[from] QkernelError),
    #[error(transparent)]
    Sim(#[from] QsimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model (de)serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Shape of the trainable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    n_qubits: usize,
    layers: usize,
    /// Append one more RY/RZ rotation layer after the last entangler.
    final_rotation_layer: bool,
}

impl AnsatzSpec {
    pub fn new(n_qubits: usize, layers: usize, final_rotation_layer: bool) -> Result<Self, QnnError> {
        if n_qubits == 0 || n_qubits > qsim::MAX_QUBITS {
            return Err(QsimError::BadQubitCount(n_qubits).into());
        }
        if layers == 0 {
            return Err(QnnError::ZeroLayers);
        }
        Ok(Self { n_qubits, layers, final_rotation_layer })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn final_rotation_layer(&self) -> bool {
        self.final_rotation_layer
    }

    /// `2·n·L`, plus `2·n` when the trailing rotation layer is enabled.
    pub fn param_count(&self) -> usize {
        2 * self.n_qubits * (self.layers + usize::from(self.final_rotation_layer))
    }

    /// Parameter layout per layer `l`: RY angles at `l·2n + j`, RZ angles at
    /// `l·2n + n + j`. Returns the circuit together with each parameter's
    /// gate position, so shifted re-evaluations can patch angles in place.
    pub fn circuit_with_positions(&self, theta: &[f64]) -> Result<(Circuit, Vec<usize>), QnnError> {
        if theta.len() != self.param_count() {
            return Err(QnnError::ParamCountMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let n = self.n_qubits;
        let mut circuit = Circuit::new(n)?;
        let mut positions = vec![0usize; theta.len()];
        let rotations = self.layers + usize::from(self.final_rotation_layer);
        for l in 0..rotations {
            let base = l * 2 * n;
            for j in 0..n {
                positions[base + j] = circuit.len();
                circuit.ry(j, theta[base + j])?;
            }
            for j in 0..n {
                positions[base + n + j] = circuit.len();
                circuit.rz(j, theta[base + n + j])?;
            }
            if l < self.layers {
                for j in 0..n {
                    for k in (j + 1)..n {
                        circuit.cx(j, k)?;
                    }
                }
            }
        }
        Ok((circuit, positions))
    }

    pub fn circuit(&self, theta: &[f64]) -> Result<Circuit, QnnError> {
        Ok(self.circuit_with_positions(theta)?.0)
    }
}

impl Default for AnsatzSpec {
    fn default() -> Self {
        Self { n_qubits: 3, layers: 4, final_rotation_layer: false }
    }
}

/// Class of a basis state: number of set bits mod 2.
pub fn parity(index: usize, n_qubits: usize) -> Result<usize, QnnError> {
    if n_qubits > qsim::MAX_QUBITS || index >= (1usize << n_qubits) {
        return Err(QnnError::IndexOutOfRange { index, n_qubits });
    }
    Ok(index.count_ones() as usize % 2)
}

/// Collapse basis probabilities to `[p_even, p_odd]`.
pub fn parity_probabilities(state: &StateVector) -> [f64; 2] {
    let mut p = [0.0; 2];
    for (i, amp) in state.amplitudes().iter().enumerate() {
        p[i.count_ones() as usize % 2] += amp.norm_sqr();
    }
    p
}

/// Encode `x`, run the ansatz at `theta`, read out parity probabilities.
pub fn qnn_forward(
    x: &[f64],
    theta: &[f64],
    map: &FeatureMapSpec,
    ansatz: &AnsatzSpec,
) -> Result<[f64; 2], QnnError> {
    if map.n_qubits() != ansatz.n_qubits() {
        return Err(QnnError::QubitMismatch { map: map.n_qubits(), ansatz: ansatz.n_qubits() });
    }
    let mut circuit = feature_map_circuit(x, map)?;
    circuit.extend(&ansatz.circuit(theta)?)?;
    Ok(parity_probabilities(&qsim::run_statevector(&circuit)))
}

/// `z = W·p + b`.
pub fn head_forward(probs: [f64; 2], w: &[[f64; 2]; 2], b: &[f64; 2]) -> [f64; 2] {
    [
        w[0][0] * probs[0] + w[0][1] * probs[1] + b[0],
        w[1][0] * probs[0] + w[1][1] * probs[1] + b[1],
    ]
}

/// Softmax with max-subtraction.
pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Mean categorical cross-entropy of a batch of logit pairs.
pub fn ce_loss(logits: &[[f64; 2]], labels: &[u8]) -> Result<f64, QnnError> {
    if logits.is_empty() {
        return Err(QnnError::EmptySet);
    }
    if logits.len() != labels.len() {
        return Err(QnnError::LabelCountMismatch { labels: labels.len(), rows: logits.len() });
    }
    let mut total = 0.0;
    for (z, &label) in logits.iter().zip(labels) {
        if label > 1 {
            return Err(QnnError::BadLabel(label));
        }
        let m = z[0].max(z[1]);
        // −log softmax(z)[label], stabilized
        let log_norm = ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        total += -(z[label as usize] - m - log_norm);
    }
    Ok(total / labels.len() as f64)
}

/// Flat trainable vector: `[θ…, W row-major, b]`.
fn pack(theta: &[f64], w: &[[f64; 2]; 2], b: &[f64; 2]) -> Vec<f64> {
    let mut flat = theta.to_vec();
    flat.extend([w[0][0], w[0][1], w[1][0], w[1][1], b[0], b[1]]);
    flat
}

fn unpack(flat: &[f64]) -> (&[f64], [[f64; 2]; 2], [f64; 2]) {
    let p = flat.len() - 6;
    let theta = &flat[..p];
    let w = [[flat[p], flat[p + 1]], [flat[p + 2], flat[p + 3]]];
    let b = [flat[p + 4], flat[p + 5]];
    (theta, w, b)
}

/// Loss and full gradient for one sample: angles by parameter shift on the
/// parity probabilities, head by the analytic softmax/CE chain.
fn sample_loss_grad(
    x: &[f64],
    label: u8,
    flat: &[f64],
    map: &FeatureMapSpec,
    ansatz: &AnsatzSpec,
    state: &mut StateVector,
) -> Result<(f64, Vec<f64>), QnnError> {
    if label > 1 {
        return Err(QnnError::BadLabel(label));
    }
    let (theta, w, b) = unpack(flat);
    let mut circuit = feature_map_circuit(x, map)?;
    let offset = circuit.len();
    let (ansatz_circuit, positions) = ansatz.circuit_with_positions(theta)?;
    circuit.extend(&ansatz_circuit)?;

    qsim::run_statevector_into(&circuit, state);
    let probs = parity_probabilities(state);
    let z = head_forward(probs, &w, &b);
    let s = softmax2(z);
    let loss = ce_loss(&[z], &[label])?;

    // dL/dz = softmax − onehot
    let dz = [s[0] - f64::from(label == 0), s[1] - f64::from(label == 1)];
    // dL/dp = Wᵀ·dz
    let dp = [w[0][0] * dz[0] + w[1][0] * dz[1], w[0][1] * dz[0] + w[1][1] * dz[1]];

    let mut grad = vec![0.0; flat.len()];
    for (k, &pos) in positions.iter().enumerate() {
        let gate = pos + offset;
        circuit.set_angle(gate, theta[k] + FRAC_PI_2);
        qsim::run_statevector_into(&circuit, state);
        let plus = parity_probabilities(state);
        circuit.set_angle(gate, theta[k] - FRAC_PI_2);
        qsim::run_statevector_into(&circuit, state);
        let minus = parity_probabilities(state);
        circuit.set_angle(gate, theta[k]);
        let dp0 = (plus[0] - minus[0]) / 2.0;
        let dp1 = (plus[1] - minus[1]) / 2.0;
        grad[k] = dp[0] * dp0 + dp[1] * dp1;
    }
    let p = theta.len();
    grad[p] = dz[0] * probs[0];
    grad[p + 1] = dz[0] * probs[1];
    grad[p + 2] = dz[1] * probs[0];
    grad[p + 3] = dz[1] * probs[1];
    grad[p + 4] = dz[0];
    grad[p + 5] = dz[1];
    Ok((loss, grad))
}

/// Cross-entropy loss and its full gradient for one sample, differentiated
/// with respect to the flat trainable vector `[θ…, W row-major, b]`. Angle
/// components use the parameter-shift rule on exact parity probabilities;
/// head components use the analytic softmax chain.
pub fn loss_grad(
    x: &[f64],
    label: u8,
    flat: &[f64],
    map: &FeatureMapSpec,
    ansatz: &AnsatzSpec,
) -> Result<(f64, Vec<f64>), QnnError> {
    let expected = ansatz.param_count() + 6;
    if flat.len() != expected {
        return Err(QnnError::ParamCountMismatch { expected, got: flat.len() });
    }
    let mut state = StateVector::zero(map.n_qubits())?;
    sample_loss_grad(x, label, flat, map, ansatz, &mut state)
}

/// Adam moment estimates with the AMSGrad running maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            v_max: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: true,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Bias-corrected second-moment cap, non-decreasing elementwise.
    pub fn v_max(&self) -> &[f64] {
        &self.v_max
    }
}

/// One optimizer update in place.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<(), QnnError> {
    if grads.len() != params.len() || grads.len() != state.m.len() {
        return Err(QnnError::ParamCountMismatch { expected: state.m.len(), got: grads.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(QnnError::NonFiniteGradient);
    }
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        let denom = if state.amsgrad {
            state.v_max[i] = state.v_max[i].max(v_hat);
            state.v_max[i]
        } else {
            v_hat
        };
        params[i] -= lr * m_hat / (denom.sqrt() + state.eps);
    }
    Ok(())
}

/// Schedule and stopping constants for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainControl {
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub es_patience: usize,
    pub es_min_delta: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainControl {
    fn default() -> Self {
        Self {
            initial_lr: 0.01,
            lr_factor: 0.5,
            lr_patience: 2,
            es_patience: 10,
            es_min_delta: 1e-4,
            min_epochs: 15,
            max_epochs: 50,
            batch_size: 32,
        }
    }
}

impl TrainControl {
    fn validate(&self) -> Result<(), QnnError> {
        if !(self.initial_lr > 0.0) {
            return Err(QnnError::BadControl("initial_lr must be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(QnnError::BadControl("lr_factor must lie in (0, 1)".into()));
        }
        if self.lr_patience == 0 || self.es_patience == 0 {
            return Err(QnnError::BadControl("patience values must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(QnnError::BadControl("max_epochs and batch_size must be at least 1".into()));
        }
        if !(self.es_min_delta >= 0.0) {
            return Err(QnnError::BadControl("es_min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Validation-loss plateau tracker: halve the rate once the loss fails to
/// improve by more than `δ` for `lr_patience` consecutive epochs; the
/// counter resets on improvement or reduction.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64) -> Self {
        Self { lr: initial_lr, best: f64::INFINITY, stagnant: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's validation loss and return the rate for the next.
    pub fn observe(&mut self, val_loss: f64, control: &TrainControl) -> f64 {
        if val_loss < self.best - control.es_min_delta {
            self.best = val_loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= control.lr_patience {
                self.lr *= control.lr_factor;
                self.stagnant = 0;
            }
        }
        self.lr
    }
}

/// True when training should stop after the epoch that produced the last
/// entry of `val_losses`: at least `min_epochs` recorded, and the best of
/// the trailing `es_patience` losses is no better than the best earlier loss
/// by more than `δ`.
pub fn early_stop(val_losses: &[f64], control: &TrainControl) -> bool {
    let epoch = val_losses.len();
    if epoch < control.min_epochs || epoch <= control.es_patience {
        return false;
    }
    let split = epoch - control.es_patience;
    let window_best = val_losses[split..].iter().cloned().fold(f64::INFINITY, f64::min);
    let earlier_best = val_losses[..split].iter().cloned().fold(f64::INFINITY, f64::min);
    window_best >= earlier_best - control.es_min_delta
}

/// Trained classifier checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnnModel {
    pub map: FeatureMapSpec,
    pub ansatz: AnsatzSpec,
    pub theta: Vec<f64>,
    pub head_w: [[f64; 2]; 2],
    pub head_b: [f64; 2],
    pub control: TrainControl,
    pub seed: u64,
}

impl QnnModel {
    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 2], QnnError> {
        qnn_forward(x, &self.theta, &self.map, &self.ansatz)
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2], QnnError> {
        Ok(head_forward(self.probabilities(x)?, &self.head_w, &self.head_b))
    }

    /// Softmax probability of class 1 — the ranking score.
    pub fn score(&self, x: &[f64]) -> Result<f64, QnnError> {
        Ok(softmax2(self.logits(x)?)[1])
    }

    /// Predicted class; ties go to class 0.
    pub fn predict(&self, x: &[f64]) -> Result<u8, QnnError> {
        let z = self.logits(x)?;
        Ok(u8::from(z[1] > z[0]))
    }

    pub fn save_json(&self, path: &Path) -> Result<(), QnnError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, QnnError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: QnnModel,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters the checkpoint holds.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// `epoch,train_loss,val_loss,train_acc,val_acc,lr` rows.
pub fn write_history_csv<W: Write>(history: &[EpochStats], writer: W) -> Result<(), QnnError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr"])
        .map_err(|e| QnnError::Io(std::io::Error::other(e)))?;
    for row in history {
        w.write_record([
            row.epoch.to_string(),
            row.train_loss.to_string(),
            row.val_loss.to_string(),
            row.train_acc.to_string(),
            row.val_acc.to_string(),
            row.lr.to_string(),
        ])
        .map_err(|e| QnnError::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate_split(
    x: &[Vec<f64>],
    y: &[u8],
    flat: &[f64],
    map: &FeatureMapSpec,
    ansatz: &AnsatzSpec,
    state: &mut StateVector,
) -> Result<(f64, f64), QnnError> {
    let (theta, w, b) = unpack(flat);
    let mut logits = Vec::with_capacity(x.len());
    let mut correct = 0usize;
    for (row, &label) in x.iter().zip(y) {
        let mut circuit = feature_map_circuit(row, map)?;
        circuit.extend(&ansatz.circuit(theta)?)?;
        qsim::run_statevector_into(&circuit, state);
        let z = head_forward(parity_probabilities(state), &w, &b);
        if u8::from(z[1] > z[0]) == label {
            correct += 1;
        }
        logits.push(z);
    }
    let loss = ce_loss(&logits, y)?;
    Ok((loss, correct as f64 / y.len() as f64))
}

/// Full training loop. Deterministic for a fixed seed: initialization,
/// shuffling, and batch reduction order all flow from one stream.
pub fn train(
    x_train: &[Vec<f64>],
    y_train: &[u8],
    x_val: &[Vec<f64>],
    y_val: &[u8],
    map: &FeatureMapSpec,
    ansatz: &AnsatzSpec,
    control: &TrainControl,
    seed: u64,
) -> Result<TrainOutcome, QnnError> {
    control.validate()?;
    if x_train.is_empty() || x_val.is_empty() {
        return Err(QnnError::EmptySet);
    }
    if x_train.len() != y_train.len() {
        return Err(QnnError::LabelCountMismatch { labels: y_train.len(), rows: x_train.len() });
    }
    if x_val.len() != y_val.len() {
        return Err(QnnError::LabelCountMismatch { labels: y_val.len(), rows: x_val.len() });
    }
    if let Some(&bad) = y_train.iter().chain(y_val).find(|&&l| l > 1) {
        return Err(QnnError::BadLabel(bad));
    }
    if map.n_qubits() != ansatz.n_qubits() {
        return Err(QnnError::QubitMismatch { map: map.n_qubits(), ansatz: ansatz.n_qubits() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ansatz.param_count();
    let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-PI..PI)).collect();
    let half_sqrt2 = 1.0 / 2.0f64.sqrt();
    let w = [
        [rng.random_range(-half_sqrt2..half_sqrt2), rng.random_range(-half_sqrt2..half_sqrt2)],
        [rng.random_range(-half_sqrt2..half_sqrt2), rng.random_range(-half_sqrt2..half_sqrt2)],
    ];
    let mut flat = pack(&theta, &w, &[0.0, 0.0]);

    let mut state = StateVector::zero(map.n_qubits())?;
    let mut optimizer = OptimizerState::new(flat.len());
    let mut scheduler = PlateauScheduler::new(control.initial_lr);
    let mut history: Vec<EpochStats> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0usize;
    let mut stopped_early = false;
    let mut indices: Vec<usize> = (0..x_train.len()).collect();

    for epoch in 1..=control.max_epochs {
        let lr = scheduler.lr();
        indices.shuffle(&mut rng);
        for (batch_no, batch) in indices.chunks(control.batch_size).enumerate() {
            let mut grad_sum = vec![0.0; flat.len()];
            let mut loss_sum = 0.0;
            for &i in batch {
                let (loss, grad) =
                    sample_loss_grad(&x_train[i], y_train[i], &flat, map, ansatz, &mut state)?;
                loss_sum += loss;
                for (g, s) in grad.iter().zip(grad_sum.iter_mut()) {
                    *s += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if !(loss_sum * scale).is_finite() {
                return Err(QnnError::NonFiniteLoss { epoch, batch: batch_no });
            }
            for g in grad_sum.iter_mut() {
                *g *= scale;
            }
            adam_step(&mut optimizer, &mut flat, &grad_sum, lr)?;
        }

        let (train_loss, train_acc) =
            evaluate_split(x_train, y_train, &flat, map, ansatz, &mut state)?;
        let (val_loss, val_acc) = evaluate_split(x_val, y_val, &flat, map, ansatz, &mut state)?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(QnnError::NonFiniteLoss { epoch, batch: 0 });
        }
        history.push(EpochStats { epoch, train_loss, val_loss, train_acc, val_acc, lr });
        if val_loss < best_val {
            best_val = val_loss;
            best_flat = flat.clone();
            best_epoch = epoch;
        }
        scheduler.observe(val_loss, control);
        let val_losses: Vec<f64> = history.iter().map(|h| h.val_loss).collect();
        if early_stop(&val_losses, control) {
            stopped_early = true;
            break;
        }
    }

    let (theta, head_w, head_b) = unpack(&best_flat);
    Ok(TrainOutcome {
        model: QnnModel {
            map: *map,
            ansatz: *ansatz,
            theta: theta.to_vec(),
            head_w,
            head_b,
            control: *control,
            seed,
        },
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn map3() -> FeatureMapSpec {
        FeatureMapSpec::new(3, 1).unwrap()
    }

    fn random_draw(rng: &mut ChaCha8Rng, spec: &AnsatzSpec) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-PI..PI)).collect();
        (x, theta)
    }

    #[test]
    fn parity_matches_popcount() {
        assert_eq!(parity(0b101, 3).unwrap(), 0);
        assert_eq!(parity(0b111, 3).unwrap(), 1);
        let class0: Vec<usize> = (0..8).filter(|&i| parity(i, 3).unwrap() == 0).collect();
        assert_eq!(class0, vec![0b000, 0b011, 0b101, 0b110]);
        assert!(parity(8, 3).is_err());
    }

    #[test]
    fn ansatz_has_the_documented_shape() {
        let spec = AnsatzSpec::default();
        assert_eq!(spec.param_count(), 24);
        let with_final = AnsatzSpec::new(3, 4, true).unwrap();
        assert_eq!(with_final.param_count(), 30);
        let theta = vec![0.1; 24];
        let (circuit, positions) = spec.circuit_with_positions(&theta).unwrap();
        // per layer: 3 RY + 3 RZ + 3 CX
        assert_eq!(circuit.len(), 4 * 9);
        assert_eq!(positions.len(), 24);
        // the positions point at rotation gates, in parameter order
        let rendered = circuit.to_string();
        assert_eq!(rendered.lines().count(), 36);
        assert!(spec.circuit(&vec![0.0; 23]).is_err());
    }

    #[test]
    fn forward_probabilities_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = AnsatzSpec::default();
        for _ in 0..20 {
            let (x, theta) = random_draw(&mut rng, &spec);
            let p = qnn_forward(&x, &theta, &map3(), &spec).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }

    #[test]
    fn zero_ansatz_at_pi_inputs_gives_even_parity_split() {
        // x = π kills the pair phases and reduces the map to H⊗3 up to
        // phase; |+++⟩ is a CX fixed point, so the readout is uniform.
        let p = qnn_forward(&[PI, PI, PI], &vec![0.0; 24], &map3(), &AnsatzSpec::default()).unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rotations_are_two_pi_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = AnsatzSpec::default();
        let (x, theta) = random_draw(&mut rng, &spec);
        let base = qnn_forward(&x, &theta, &map3(), &spec).unwrap();
        for k in [0usize, 7, 23] {
            let mut shifted = theta.clone();
            shifted[k] += 2.0 * PI;
            let p = qnn_forward(&x, &shifted, &map3(), &spec).unwrap();
            assert!((p[0] - base[0]).abs() <= 1e-10);
            assert!((p[1] - base[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn head_and_loss_closed_forms() {
        let probs = [0.3, 0.7];
        let z = head_forward(probs, &[[1.0, 0.0], [0.0, 1.0]], &[0.0, 0.0]);
        assert_eq!(z, probs);
        let s = softmax2([3.0, -1.0]);
        assert!((s[0] + s[1] - 1.0).abs() <= 1e-15);
        assert!((ce_loss(&[[0.0, 0.0]], &[1]).unwrap() - 2.0f64.ln()).abs() <= 1e-15);
        assert!(ce_loss(&[[20.0, -20.0]], &[0]).unwrap() <= 1e-8);
        // mean over a batch is the mean of the individual losses
        let a = ce_loss(&[[1.0, -1.0]], &[0]).unwrap();
        let b = ce_loss(&[[-0.5, 2.0]], &[1]).unwrap();
        let both = ce_loss(&[[1.0, -1.0], [-0.5, 2.0]], &[0, 1]).unwrap();
        assert_relative_eq!(both, (a + b) / 2.0, epsilon = 1e-15);
        assert!(ce_loss(&[[0.0, 0.0]], &[2]).is_err());
    }

    fn finite_difference_grad(
        x: &[f64],
        label: u8,
        flat: &[f64],
        map: &FeatureMapSpec,
        spec: &AnsatzSpec,
    ) -> Vec<f64> {
        let h = 1e-4;
        let loss_at = |flat: &[f64]| {
            let (theta, w, b) = unpack(flat);
            let p = qnn_forward(x, theta, map, spec).unwrap();
            let z = head_forward(p, &w, &b);
            ce_loss(&[z], &[label]).unwrap()
        };
        (0..flat.len())
            .map(|k| {
                let mut plus = flat.to_vec();
                plus[k] += h;
                let mut minus = flat.to_vec();
                minus[k] -= h;
                (loss_at(&plus) - loss_at(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn parameter_shift_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = AnsatzSpec::default();
        let mut state = StateVector::zero(3).unwrap();
        for trial in 0..5 {
            let (x, theta) = random_draw(&mut rng, &spec);
            let w = [
                [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)],
                [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)],
            ];
            let b = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let flat = pack(&theta, &w, &b);
            let label = (trial % 2) as u8;
            let (_, analytic) =
                sample_loss_grad(&x, label, &flat, &map3(), &spec, &mut state).unwrap();
            let numeric = finite_difference_grad(&x, label, &flat, &map3(), &spec);
            for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                assert!((a - n).abs() <= 1e-6, "component {k}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn final_layer_rz_parameters_are_dead() {
        // diagonal phases right before a basis-permutation entangler cannot
        // move any measured probability
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = AnsatzSpec::default();
        let (x, theta) = random_draw(&mut rng, &spec);
        let flat = pack(&theta, &[[0.4, -0.2], [0.1, 0.6]], &[0.0, 0.1]);
        let mut state = StateVector::zero(3).unwrap();
        let (_, grad) = sample_loss_grad(&x, 1, &flat, &map3(), &spec, &mut state).unwrap();
        // layer 3 RZ parameters occupy indices 21..24
        for k in 21..24 {
            assert!(grad[k].abs() <= 1e-10, "grad[{k}] = {}", grad[k]);
        }
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut state = OptimizerState::new(2);
        let mut params = vec![1.0, -2.0];
        adam_step(&mut state, &mut params, &[1.0, -0.5], 0.1).unwrap();
        assert!((params[0] - 0.9).abs() <= 1e-7);
        assert!((params[1] + 1.9).abs() <= 1e-7);
        // zero gradient with zero state leaves parameters untouched
        let mut state2 = OptimizerState::new(1);
        let mut p2 = vec![3.0];
        adam_step(&mut state2, &mut p2, &[0.0], 0.1).unwrap();
        assert_eq!(p2, vec![3.0]);
        assert!(adam_step(&mut state2, &mut p2, &[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn adam_approaches_the_sign_sgd_limit_under_constant_gradient() {
        let mut state = OptimizerState::new(1);
        let mut params = vec![0.0];
        let lr = 0.01;
        let mut last = params[0];
        let mut step = 0.0;
        for _ in 0..1000 {
            adam_step(&mut state, &mut params, &[2.5], lr).unwrap();
            step = last - params[0];
            last = params[0];
        }
        assert!((step - lr).abs() <= 1e-4, "step = {step}");
    }

    #[test]
    fn amsgrad_cap_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut state = OptimizerState::new(4);
        let mut params = vec![0.0; 4];
        let mut previous = state.v_max().to_vec();
        for _ in 0..50 {
            let grads: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            adam_step(&mut state, &mut params, &grads, 0.01).unwrap();
            for (now, before) in state.v_max().iter().zip(&previous) {
                assert!(now >= before);
            }
            previous = state.v_max().to_vec();
        }
    }

    #[test]
    fn plateau_scheduler_halves_after_two_stagnant_epochs() {
        let control = TrainControl { es_min_delta: 0.0, ..TrainControl::default() };
        let mut s = PlateauScheduler::new(0.01);
        s.observe(1.0, &control);
        s.observe(1.0, &control);
        assert_eq!(s.lr(), 0.01);
        s.observe(1.0, &control);
        assert_relative_eq!(s.lr(), 0.005, epsilon = 1e-15);
        // six identical losses in total: two reductions
        s.observe(1.0, &control);
        s.observe(1.0, &control);
        assert_relative_eq!(s.lr(), 0.0025, epsilon = 1e-15);
        s.observe(1.0, &control);
        // a strictly improving stretch leaves the rate alone
        let mut t = PlateauScheduler::new(0.01);
        for loss in [1.0, 0.9, 0.8, 0.7, 0.6] {
            t.observe(loss, &control);
        }
        assert_eq!(t.lr(), 0.01);
    }

    #[test]
    fn early_stop_honors_minimum_epochs_and_patience() {
        let control = TrainControl { es_min_delta: 0.0, ..TrainControl::default() };
        // improving for 20 epochs, then flat at the minimum for 10
        let mut losses: Vec<f64> = (0..20).map(|e| 1.0 - 0.01 * e as f64).collect();
        let floor = *losses.last().unwrap();
        for _ in 0..10 {
            losses.push(floor);
        }
        assert!(!early_stop(&losses[..12], &control), "before min_epochs");
        assert!(!early_stop(&losses[..29], &control), "window still sees the improvement");
        assert!(early_stop(&losses, &control), "ten flat epochs after the minimum");
        // continual improvement never stops
        let improving: Vec<f64> = (0..50).map(|e| 1.0 / (1.0 + e as f64)).collect();
        for e in 1..=50 {
            assert!(!early_stop(&improving[..e], &TrainControl::default()));
        }
    }

    fn toy_sets(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let center = if label == 0 { -1.0 } else { 1.0 };
            x.push(vec![
                center + rng.random_range(-0.3..0.3),
                center + rng.random_range(-0.3..0.3),
                rng.random_range(-0.2..0.2),
            ]);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn training_learns_a_separable_toy_problem() {
        let (x_train, y_train) = toy_sets(160, 1);
        let (x_val, y_val) = toy_sets(40, 2);
        let control = TrainControl { max_epochs: 30, ..TrainControl::default() };
        let outcome = train(
            &x_train,
            &y_train,
            &x_val,
            &y_val,
            &map3(),
            &AnsatzSpec::default(),
            &control,
            7,
        )
        .unwrap();
        let final_val_acc = outcome
            .history
            .iter()
            .map(|h| h.val_acc)
            .fold(0.0f64, f64::max);
        assert!(final_val_acc >= 0.95, "best val acc = {final_val_acc}");
        // checkpoint holds the parameters of the best validation epoch
        let best_hist = outcome
            .history
            .iter()
            .map(|h| h.val_loss)
            .fold(f64::INFINITY, f64::min);
        let mut state = StateVector::zero(3).unwrap();
        let flat = pack(&outcome.model.theta, &outcome.model.head_w, &outcome.model.head_b);
        let (ckpt_loss, _) =
            evaluate_split(&x_val, &y_val, &flat, &map3(), &AnsatzSpec::default(), &mut state)
                .unwrap();
        assert_relative_eq!(ckpt_loss, best_hist, epsilon = 1e-12);
        assert_eq!(
            outcome.history[outcome.best_epoch - 1].val_loss,
            best_hist,
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (x_train, y_train) = toy_sets(48, 5);
        let (x_val, y_val) = toy_sets(16, 6);
        let control = TrainControl { max_epochs: 3, min_epochs: 1, ..TrainControl::default() };
        let run = || {
            train(&x_train, &y_train, &x_val, &y_val, &map3(), &AnsatzSpec::default(), &control, 11)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn head_gradients_flow_at_zero_ansatz() {
        let (x, y) = toy_sets(8, 3);
        let flat = pack(&vec![0.0; 24], &[[0.3, -0.3], [0.2, 0.1]], &[0.0, 0.0]);
        let mut state = StateVector::zero(3).unwrap();
        let mut head_norm = 0.0f64;
        for (row, &label) in x.iter().zip(&y) {
            let (_, grad) =
                sample_loss_grad(row, label, &flat, &map3(), &AnsatzSpec::default(), &mut state)
                    .unwrap();
            head_norm += grad[24..].iter().map(|g| g * g).sum::<f64>();
        }
        assert!(head_norm > 1e-6, "head gradient vanished: {head_norm}");
    }

    #[test]
    fn model_json_round_trip() {
        let model = QnnModel {
            map: map3(),
            ansatz: AnsatzSpec::default(),
            theta: (0..24).map(|i| i as f64 * 0.1).collect(),
            head_w: [[0.1, 0.2], [0.3, 0.4]],
            head_b: [0.05, -0.05],
            control: TrainControl::default(),
            seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qnn.json");
        model.save_json(&path).unwrap();
        assert_eq!(QnnModel::load_json(&path).unwrap(), model);
    }

    #[test]
    fn history_csv_has_the_documented_header() {
        let history = vec![EpochStats {
            epoch: 1,
            train_loss: 0.6,
            val_loss: 0.7,
            train_acc: 0.8,
            val_acc: 0.75,
            lr: 0.01,
        }];
        let mut buf = Vec::new();
        write_history_csv(&history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,train_acc,val_acc,lr\n"));
        assert!(text.contains("1,0.6,0.7,0.8,0.75,0.01"));
    }
}
