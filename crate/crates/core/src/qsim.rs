//! Dense gate-model simulation for small qubit registers.
//!
//! Basis states are little-endian: qubit 0 is the least-significant bit of
//! the basis index, so `|q₂q₁q₀⟩ = |011⟩` is index 3. The gate set is
//!
//! ```text
//! H            Hadamard
//! RY(θ) = exp(−iθY/2)      RZ(θ) = exp(−iθZ/2)      P(φ) = diag(1, e^{iφ})
//! CX(c,t)      controlled-X
//! ZZ(φ) = exp(+iφ Z⊗Z)     (diagonal two-qubit phase)
//! ```
//!
//! [`run_statevector`] evolves `|0…0⟩` exactly. [`run_density`] evolves the
//! density matrix and applies a depolarizing channel after every gate:
//! acting on the gate's `k` qubits,
//!
//! ```text
//! ρ → (1 − p)·ρ + p · (I/2^k) ⊗ Tr_gate(ρ).
//! ```
//!
//! Shot readout is seeded multinomial sampling over a probability vector.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 8;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error("qubit count must lie in 1..={MAX_QUBITS}, got {0}")]
    BadQubitCount(usize),
    #[error("{gate} addresses qubit {qubit}, but the register has {n_qubits} qubits")]
    QubitOutOfRange { gate: String, qubit: usize, n_qubits: usize },
    #[error("two-qubit gate needs two distinct qubits, got q{0} twice")]
    DuplicateQubits(usize),
    #[error("gate angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("depolarizing probability must lie in [0, 1], got {0}")]
    BadNoiseProbability(f64),
    #[error("probabilities must be non-negative and sum to 1, got sum {0}")]
    BadDistribution(f64),
    #[error("shot count must be positive")]
    ZeroShots,
}

/// One gate instruction. Angles are radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H(usize),
    Ry(usize, f64),
    Rz(usize, f64),
    Phase(usize, f64),
    Cx(usize, usize),
    Zz(usize, usize, f64),
}

impl Gate {
    /// Qubits the gate acts on (the depolarizing channel hits exactly these).
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::Ry(q, _) | Gate::Rz(q, _) | Gate::Phase(q, _) => vec![q],
            Gate::Cx(c, t) => vec![c, t],
            Gate::Zz(a, b, _) => vec![a, b],
        }
    }

    /// The inverse instruction: self-inverse gates stay put, rotations and
    /// phases negate their angle.
    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::H(q) => Gate::H(q),
            Gate::Ry(q, theta) => Gate::Ry(q, -theta),
            Gate::Rz(q, theta) => Gate::Rz(q, -theta),
            Gate::Phase(q, phi) => Gate::Phase(q, -phi),
            Gate::Cx(c, t) => Gate::Cx(c, t),
            Gate::Zz(a, b, phi) => Gate::Zz(a, b, -phi),
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<(), QsimError> {
        let check_q = |q: usize| -> Result<(), QsimError> {
            if q >= n_qubits {
                Err(QsimError::QubitOutOfRange { gate: self.to_string(), qubit: q, n_qubits })
            } else {
                Ok(())
            }
        };
        let check_angle = |a: f64| -> Result<(), QsimError> {
            if a.is_finite() {
                Ok(())
            } else {
                Err(QsimError::NonFiniteAngle(a))
            }
        };
        match *self {
            Gate::H(q) => check_q(q),
            Gate::Ry(q, a) | Gate::Rz(q, a) | Gate::Phase(q, a) => {
                check_q(q)?;
                check_angle(a)
            }
            Gate::Cx(c, t) => {
                check_q(c)?;
                check_q(t)?;
                if c == t {
                    return Err(QsimError::DuplicateQubits(c));
                }
                Ok(())
            }
            Gate::Zz(a, b, phi) => {
                check_q(a)?;
                check_q(b)?;
                if a == b {
                    return Err(QsimError::DuplicateQubits(a));
                }
                check_angle(phi)
            }
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::H(q) => write!(f, "H q{q}"),
            Gate::Ry(q, a) => write!(f, "RY q{q} {a}"),
            Gate::Rz(q, a) => write!(f, "RZ q{q} {a}"),
            Gate::Phase(q, a) => write!(f, "P q{q} {a}"),
            Gate::Cx(c, t) => write!(f, "CX q{c} q{t}"),
            Gate::Zz(a, b, phi) => write!(f, "ZZ q{a} q{b} {phi}"),
        }
    }
}

/// An ordered gate list over a fixed register.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Result<Self, QsimError> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(QsimError::BadQubitCount(n_qubits));
        }
        Ok(Self { n_qubits, gates: Vec::new() })
    }

    /// Build from an existing gate list, validating every instruction.
    pub fn from_gates(n_qubits: usize, gates: Vec<Gate>) -> Result<Self, QsimError> {
        let mut circuit = Self::new(n_qubits)?;
        for gate in gates {
            circuit.add(gate)?;
        }
        Ok(circuit)
    }

    /// Append a validated gate.
    pub fn add(&mut self, gate: Gate) -> Result<&mut Self, QsimError> {
        gate.validate(self.n_qubits)?;
        self.gates.push(gate);
        Ok(self)
    }

    pub fn h(&mut self, q: usize) -> Result<&mut Self, QsimError> {
        self.add(Gate::H(q))
    }

    pub fn ry(&mut self, q: usize, theta: f64) -> Result<&mut Self, QsimError> {
        self.add(Gate::Ry(q, theta))
    }

    pub fn rz(&mut self, q: usize, theta: f64) -> Result<&mut Self, QsimError> {
        self.add(Gate::Rz(q, theta))
    }

    pub fn phase(&mut self, q: usize, phi: f64) -> Result<&mut Self, QsimError> {
        self.add(Gate::Phase(q, phi))
    }

    pub fn cx(&mut self, c: usize, t: usize) -> Result<&mut Self, QsimError> {
        self.add(Gate::Cx(c, t))
    }

    pub fn zz(&mut self, a: usize, b: usize, phi: f64) -> Result<&mut Self, QsimError> {
        self.add(Gate::Zz(a, b, phi))
    }

    /// The adjoint circuit: gates reversed and individually inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// Append all gates of `other` (same register width required).
    pub fn extend(&mut self, other: &Circuit) -> Result<&mut Self, QsimError> {
        if other.n_qubits != self.n_qubits {
            return Err(QsimError::BadQubitCount(other.n_qubits));
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(self)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Mutate the angle of the rotation gate at `index`. Used by
    /// parameter-shift evaluation to avoid rebuilding circuits; the gate at
    /// `index` must carry an angle.
    pub(crate) fn set_angle(&mut self, index: usize, angle: f64) {
        match &mut self.gates[index] {
            Gate::Ry(_, a) | Gate::Rz(_, a) | Gate::Phase(_, a) | Gate::Zz(_, _, a) => *a = angle,
            other => panic!("gate {other} carries no angle"),
        }
    }
}

impl fmt::Display for Circuit {
    /// Text netlist, one gate per line, e.g. `RY q0 1.5708`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for gate in &self.gates {
            writeln!(f, "{gate}")?;
        }
        Ok(())
    }
}

/// Pure state over `2^n` complex amplitudes.
#[derive(Debug, Clone)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits`.
    pub fn zero(n_qubits: usize) -> Result<Self, QsimError> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(QsimError::BadQubitCount(n_qubits));
        }
        let mut amps = vec![Complex64::ZERO; 1 << n_qubits];
        amps[0] = Complex64::ONE;
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Measurement distribution `pᵢ = |aᵢ|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn reset_zero(&mut self) {
        self.amps.fill(Complex64::ZERO);
        self.amps[0] = Complex64::ONE;
    }

    fn apply(&mut self, gate: &Gate) {
        let dim = self.amps.len();
        match *gate {
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                self.apply_single(q, |a0, a1| (s * (a0 + a1), s * (a0 - a1)));
            }
            Gate::Ry(q, theta) => {
                let (sin, cos) = (theta / 2.0).sin_cos();
                self.apply_single(q, |a0, a1| (cos * a0 - sin * a1, sin * a0 + cos * a1));
            }
            Gate::Rz(q, theta) => {
                let phase = Complex64::from_polar(1.0, theta / 2.0);
                let conj = phase.conj();
                self.apply_single(q, |a0, a1| (conj * a0, phase * a1));
            }
            Gate::Phase(q, phi) => {
                let phase = Complex64::from_polar(1.0, phi);
                self.apply_single(q, |a0, a1| (a0, phase * a1));
            }
            Gate::Cx(c, t) => {
                let cm = 1usize << c;
                let tm = 1usize << t;
                for i in 0..dim {
                    if i & cm != 0 && i & tm == 0 {
                        self.amps.swap(i, i | tm);
                    }
                }
            }
            Gate::Zz(a, b, phi) => {
                let same = Complex64::from_polar(1.0, phi);
                let diff = same.conj();
                let (ma, mb) = (1usize << a, 1usize << b);
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    *amp *= if ((i & ma != 0) as u8) == ((i & mb != 0) as u8) { same } else { diff };
                }
            }
        }
    }

    fn apply_single<F>(&mut self, q: usize, f: F)
    where
        F: Fn(Complex64, Complex64) -> (Complex64, Complex64),
    {
        let mask = 1usize << q;
        for i in 0..self.amps.len() {
            if i & mask == 0 {
                let j = i | mask;
                let (a0, a1) = (self.amps[i], self.amps[j]);
                let (b0, b1) = f(a0, a1);
                self.amps[i] = b0;
                self.amps[j] = b1;
            }
        }
    }
}

/// Evolve `|0…0⟩` through `circuit` exactly.
pub fn run_statevector(circuit: &Circuit) -> StateVector {
    let mut state = StateVector::zero(circuit.n_qubits()).expect("circuit width validated at construction");
    for gate in circuit.gates() {
        state.apply(gate);
    }
    state
}

/// Like [`run_statevector`], reusing the caller's buffer. The register width
/// of `state` must match the circuit.
pub fn run_statevector_into(circuit: &Circuit, state: &mut StateVector) {
    assert_eq!(state.n_qubits, circuit.n_qubits(), "register width mismatch");
    state.reset_zero();
    for gate in circuit.gates() {
        state.apply(gate);
    }
}

/// Mixed state over a `2^n × 2^n` Hermitian matrix, stored row-major.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    n_qubits: usize,
    dim: usize,
    elems: Vec<Complex64>,
}

impl DensityMatrix {
    /// `|0…0⟩⟨0…0|` on `n_qubits`.
    pub fn zero(n_qubits: usize) -> Result<Self, QsimError> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(QsimError::BadQubitCount(n_qubits));
        }
        let dim = 1 << n_qubits;
        let mut elems = vec![Complex64::ZERO; dim * dim];
        elems[0] = Complex64::ONE;
        Ok(Self { n_qubits, dim, elems })
    }

    pub fn from_statevector(state: &StateVector) -> Self {
        let dim = state.amps.len();
        let mut elems = vec![Complex64::ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                elems[r * dim + c] = state.amps[r] * state.amps[c].conj();
            }
        }
        Self { n_qubits: state.n_qubits, dim, elems }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.elems[row * self.dim + col]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.elems[i * self.dim + i]).sum()
    }

    /// Diagonal in the computational basis; rounding noise below zero is
    /// clamped so the result is always a valid sampling distribution.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.elems[i * self.dim + i].re.max(0.0)).collect()
    }

    /// Smallest eigenvalue, via the real symmetric embedding
    /// `[[Re ρ, −Im ρ], [Im ρ, Re ρ]]` which carries each eigenvalue of the
    /// Hermitian ρ twice. Diagnostic only — O(dim³).
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        let mut m = nalgebra::DMatrix::<f64>::zeros(2 * d, 2 * d);
        for r in 0..d {
            for c in 0..d {
                let z = self.elems[r * d + c];
                m[(r, c)] = z.re;
                m[(r, c + d)] = -z.im;
                m[(r + d, c)] = z.im;
                m[(r + d, c + d)] = z.re;
            }
        }
        nalgebra::SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    fn left_apply(&mut self, gate: &Gate) {
        // U·ρ — transform every column over the row index.
        let dim = self.dim;
        match *gate {
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                self.left_single(q, |a0, a1| (s * (a0 + a1), s * (a0 - a1)));
            }
            Gate::Ry(q, theta) => {
                let (sin, cos) = (theta / 2.0).sin_cos();
                self.left_single(q, |a0, a1| (cos * a0 - sin * a1, sin * a0 + cos * a1));
            }
            Gate::Rz(q, theta) => {
                let phase = Complex64::from_polar(1.0, theta / 2.0);
                let conj = phase.conj();
                self.left_single(q, |a0, a1| (conj * a0, phase * a1));
            }
            Gate::Phase(q, phi) => {
                let phase = Complex64::from_polar(1.0, phi);
                self.left_single(q, |a0, a1| (a0, phase * a1));
            }
            Gate::Cx(c, t) => {
                let (cm, tm) = (1usize << c, 1usize << t);
                for r in 0..dim {
                    if r & cm != 0 && r & tm == 0 {
                        let other = r | tm;
                        for col in 0..dim {
                            self.elems.swap(r * dim + col, other * dim + col);
                        }
                    }
                }
            }
            Gate::Zz(a, b, phi) => {
                let same = Complex64::from_polar(1.0, phi);
                let diff = same.conj();
                let (ma, mb) = (1usize << a, 1usize << b);
                for r in 0..dim {
                    let p = if ((r & ma != 0) as u8) == ((r & mb != 0) as u8) { same } else { diff };
                    for col in 0..dim {
                        self.elems[r * dim + col] *= p;
                    }
                }
            }
        }
    }

    fn left_single<F>(&mut self, q: usize, f: F)
    where
        F: Fn(Complex64, Complex64) -> (Complex64, Complex64),
    {
        let dim = self.dim;
        let mask = 1usize << q;
        for r in 0..dim {
            if r & mask == 0 {
                let r1 = r | mask;
                for col in 0..dim {
                    let (a0, a1) = (self.elems[r * dim + col], self.elems[r1 * dim + col]);
                    let (b0, b1) = f(a0, a1);
                    self.elems[r * dim + col] = b0;
                    self.elems[r1 * dim + col] = b1;
                }
            }
        }
    }

    fn right_apply_adjoint(&mut self, gate: &Gate) {
        // ρ·U† — transform every row over the column index with conj(U).
        let dim = self.dim;
        match *gate {
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                self.right_single(q, |a0, a1| (s * (a0 + a1), s * (a0 - a1)));
            }
            Gate::Ry(q, theta) => {
                let (sin, cos) = (theta / 2.0).sin_cos();
                self.right_single(q, |a0, a1| (cos * a0 - sin * a1, sin * a0 + cos * a1));
            }
            Gate::Rz(q, theta) => {
                let phase = Complex64::from_polar(1.0, theta / 2.0);
                let conj = phase.conj();
                self.right_single(q, |a0, a1| (phase * a0, conj * a1));
            }
            Gate::Phase(q, phi) => {
                let phase = Complex64::from_polar(1.0, -phi);
                self.right_single(q, |a0, a1| (a0, phase * a1));
            }
            Gate::Cx(c, t) => {
                let (cm, tm) = (1usize << c, 1usize << t);
                for col in 0..dim {
                    if col & cm != 0 && col & tm == 0 {
                        let other = col | tm;
                        for r in 0..dim {
                            self.elems.swap(r * dim + col, r * dim + other);
                        }
                    }
                }
            }
            Gate::Zz(a, b, phi) => {
                let same = Complex64::from_polar(1.0, -phi);
                let diff = same.conj();
                let (ma, mb) = (1usize << a, 1usize << b);
                for col in 0..dim {
                    let p = if ((col & ma != 0) as u8) == ((col & mb != 0) as u8) { same } else { diff };
                    for r in 0..dim {
                        self.elems[r * dim + col] *= p;
                    }
                }
            }
        }
    }

    fn right_single<F>(&mut self, q: usize, f: F)
    where
        F: Fn(Complex64, Complex64) -> (Complex64, Complex64),
    {
        let dim = self.dim;
        let mask = 1usize << q;
        for col in 0..dim {
            if col & mask == 0 {
                let c1 = col | mask;
                for r in 0..dim {
                    let (a0, a1) = (self.elems[r * dim + col], self.elems[r * dim + c1]);
                    let (b0, b1) = f(a0, a1);
                    self.elems[r * dim + col] = b0;
                    self.elems[r * dim + c1] = b1;
                }
            }
        }
    }

    /// Depolarize the qubits in `targets` with probability `p`:
    /// `ρ → (1−p)ρ + p·(I/2^k) ⊗ Tr_targets(ρ)`.
    fn depolarize(&mut self, targets: &[usize], p: f64) {
        if p == 0.0 {
            return;
        }
        let dim = self.dim;
        let k = targets.len();
        let gate_mask: usize = targets.iter().map(|&q| 1usize << q).sum();
        let mixed_weight = p / (1 << k) as f64;
        let mut out = vec![Complex64::ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                let mut val = (1.0 - p) * self.elems[r * dim + c];
                // The mixed term only populates entries whose gate-qubit bits
                // agree between row and column; it carries the partial trace
                // of ρ over the gate qubits.
                if r & gate_mask == c & gate_mask {
                    let mut traced = Complex64::ZERO;
                    let base_r = r & !gate_mask;
                    let base_c = c & !gate_mask;
                    // enumerate all assignments of the gate-qubit bits
                    let mut sub = 0usize;
                    loop {
                        traced += self.elems[(base_r | sub) * dim + (base_c | sub)];
                        if sub == gate_mask {
                            break;
                        }
                        sub = (sub.wrapping_sub(gate_mask)) & gate_mask; // next subset
                    }
                    val += mixed_weight * traced;
                }
                out[r * dim + c] = val;
            }
        }
        self.elems = out;
    }
}

/// Per-gate depolarizing noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    depolarizing_p: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { depolarizing_p: 0.0 }
    }

    pub fn depolarizing(p: f64) -> Result<Self, QsimError> {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(QsimError::BadNoiseProbability(p));
        }
        Ok(Self { depolarizing_p: p })
    }

    pub fn probability(&self) -> f64 {
        self.depolarizing_p
    }
}

/// Evolve `|0…0⟩⟨0…0|` through `circuit`, depolarizing after every gate.
pub fn run_density(circuit: &Circuit, noise: &NoiseModel) -> DensityMatrix {
    let mut rho = DensityMatrix::zero(circuit.n_qubits()).expect("circuit width validated at construction");
    for gate in circuit.gates() {
        rho.left_apply(gate);
        rho.right_apply_adjoint(gate);
        rho.depolarize(&gate.qubits(), noise.depolarizing_p);
    }
    rho
}

/// Counted measurement outcomes from repeated sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotCounts {
    counts: BTreeMap<usize, u64>,
    shots: u64,
    dim: usize,
}

impl ShotCounts {
    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn count(&self, outcome: usize) -> u64 {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }

    /// Observed frequency of `outcome`.
    pub fn frequency(&self, outcome: usize) -> f64 {
        self.count(outcome) as f64 / self.shots as f64
    }

    /// Frequencies for all `dim` outcomes, zeros included.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.frequency(i)).collect()
    }

    /// Outcomes actually observed, in ascending basis-index order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// Draw `shots` outcomes from `probabilities` with a seeded generator.
///
/// Entries may carry tiny negative rounding noise (clamped); the total must
/// match 1 to within 1e-6.
pub fn sample(probabilities: &[f64], shots: u64, seed: u64) -> Result<ShotCounts, QsimError> {
    if shots == 0 {
        return Err(QsimError::ZeroShots);
    }
    let mut total = 0.0;
    for &p in probabilities {
        if !p.is_finite() || p < -1e-9 {
            return Err(QsimError::BadDistribution(p));
        }
        total += p.max(0.0);
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(QsimError::BadDistribution(total));
    }
    let mut cumulative = Vec::with_capacity(probabilities.len());
    let mut acc = 0.0;
    for &p in probabilities {
        acc += p.max(0.0) / total;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for _ in 0..shots {
        let u: f64 = rng.random();
        let idx = cumulative.partition_point(|&c| c <= u).min(probabilities.len() - 1);
        *counts.entry(idx).or_insert(0) += 1;
    }
    Ok(ShotCounts { counts, shots, dim: probabilities.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const PI: f64 = std::f64::consts::PI;

    fn amp_close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// A dense matrix of the circuit's action, column by column, built by
    /// running each basis state through the simulator. Basis prep uses RY(π),
    /// which maps |0⟩ → |1⟩ exactly.
    fn circuit_matrix(circuit: &Circuit) -> Vec<Vec<Complex64>> {
        let n = circuit.n_qubits();
        let dim = 1usize << n;
        let mut cols = Vec::with_capacity(dim);
        for basis in 0..dim {
            let mut prep = Circuit::new(n).unwrap();
            for q in 0..n {
                if basis & (1 << q) != 0 {
                    prep.ry(q, PI).unwrap();
                }
            }
            prep.extend(circuit).unwrap();
            cols.push(run_statevector(&prep).amplitudes().to_vec());
        }
        cols
    }

    #[test]
    fn hadamard_splits_zero_state() {
        let mut c = Circuit::new(1).unwrap();
        c.h(0).unwrap();
        let amps = run_statevector(&c).amplitudes().to_vec();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(amp_close(amps[0], Complex64::new(s, 0.0), 1e-12));
        assert!(amp_close(amps[1], Complex64::new(s, 0.0), 1e-12));
    }

    #[test]
    fn cx_flips_target_when_control_set() {
        // |q1 q0⟩ = |10⟩ is index 2; CX(control=1, target=0) sends it to |11⟩.
        let mut c = Circuit::new(2).unwrap();
        c.ry(1, PI).unwrap().cx(1, 0).unwrap();
        let probs = run_statevector(&c).probabilities();
        assert_relative_eq!(probs[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn little_endian_basis_prep() {
        // |q2 q1 q0⟩ = |011⟩ must land on basis index 3.
        let mut c = Circuit::new(3).unwrap();
        c.ry(0, PI).unwrap().ry(1, PI).unwrap();
        let probs = run_statevector(&c).probabilities();
        assert_relative_eq!(probs[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zz_puts_equal_bit_phase_on_zero_state() {
        let phi = 0.7;
        let mut c = Circuit::new(2).unwrap();
        c.zz(0, 1, phi).unwrap();
        let amps = run_statevector(&c).amplitudes().to_vec();
        assert!(amp_close(amps[0], Complex64::from_polar(1.0, phi), 1e-12));
    }

    #[test]
    fn all_gates_are_unitary() {
        let gates: Vec<(usize, Gate)> = vec![
            (1, Gate::H(0)),
            (1, Gate::Ry(0, 0.83)),
            (1, Gate::Rz(0, -1.21)),
            (1, Gate::Phase(0, 2.4)),
            (2, Gate::Cx(0, 1)),
            (2, Gate::Zz(0, 1, 0.9)),
        ];
        for (n, gate) in gates {
            let mut c = Circuit::new(n).unwrap();
            c.add(gate).unwrap();
            let cols = circuit_matrix(&c);
            let dim = 1usize << n;
            for i in 0..dim {
                for j in 0..dim {
                    let dot: Complex64 =
                        (0..dim).map(|k| cols[i][k].conj() * cols[j][k]).sum();
                    let expect = if i == j { Complex64::ONE } else { Complex64::ZERO };
                    assert!(
                        amp_close(dot, expect, 1e-12),
                        "{gate}: column overlap ({i},{j}) = {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn zz_equals_cx_rz_cx_conjugation() {
        let phi = 1.234;
        let mut native = Circuit::new(2).unwrap();
        native.h(0).unwrap().ry(1, 0.3).unwrap().zz(0, 1, phi).unwrap();
        let mut decomposed = Circuit::new(2).unwrap();
        decomposed
            .h(0)
            .unwrap()
            .ry(1, 0.3)
            .unwrap()
            .cx(0, 1)
            .unwrap()
            .rz(1, -2.0 * phi)
            .unwrap()
            .cx(0, 1)
            .unwrap();
        let a = run_statevector(&native);
        let b = run_statevector(&decomposed);
        // RZ(−2φ) makes the identity exact, not just up to global phase.
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!(amp_close(*x, *y, 1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn inverse_circuit_undoes_the_forward_pass() {
        let mut c = Circuit::new(3).unwrap();
        c.h(0)
            .unwrap()
            .ry(1, 0.7)
            .unwrap()
            .zz(0, 2, 0.4)
            .unwrap()
            .cx(1, 2)
            .unwrap()
            .phase(2, -0.9)
            .unwrap()
            .rz(0, 1.3)
            .unwrap();
        let mut round_trip = c.clone();
        round_trip.extend(&c.inverse()).unwrap();
        let probs = run_statevector(&round_trip).probabilities();
        assert_relative_eq!(probs[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_with_zero_noise_matches_pure_state() {
        let mut c = Circuit::new(2).unwrap();
        c.h(0).unwrap().cx(0, 1).unwrap().rz(1, 0.37).unwrap();
        let psi = run_statevector(&c);
        let rho = run_density(&c, &NoiseModel::noiseless());
        let expected = DensityMatrix::from_statevector(&psi);
        for r in 0..4 {
            for c_ in 0..4 {
                assert!(
                    amp_close(rho.element(r, c_), expected.element(r, c_), 1e-12),
                    "mismatch at ({r},{c_})"
                );
            }
        }
    }

    #[test]
    fn full_depolarizing_flattens_one_qubit() {
        let mut c = Circuit::new(1).unwrap();
        c.h(0).unwrap();
        let rho = run_density(&c, &NoiseModel::depolarizing(1.0).unwrap());
        assert!(amp_close(rho.element(0, 0), Complex64::new(0.5, 0.0), 1e-12));
        assert!(amp_close(rho.element(1, 1), Complex64::new(0.5, 0.0), 1e-12));
        assert!(amp_close(rho.element(0, 1), Complex64::ZERO, 1e-12));
    }

    #[test]
    fn depolarized_hadamard_keeps_uniform_diagonal() {
        let mut c = Circuit::new(1).unwrap();
        c.h(0).unwrap();
        let rho = run_density(&c, &NoiseModel::depolarizing(0.05).unwrap());
        let probs = rho.probabilities();
        assert_relative_eq!(probs[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(probs[1], 0.5, epsilon = 1e-12);
        // coherences shrink by (1−p)
        assert!(amp_close(rho.element(0, 1), Complex64::new(0.475, 0.0), 1e-12));
    }

    #[test]
    fn two_hadamards_give_uniform_probabilities() {
        let mut c = Circuit::new(2).unwrap();
        c.h(0).unwrap().h(1).unwrap();
        let probs = run_statevector(&c).probabilities();
        for p in probs {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn construction_rejects_bad_gates() {
        assert!(Circuit::new(0).is_err());
        assert!(Circuit::new(9).is_err());
        let mut c = Circuit::new(2).unwrap();
        assert!(matches!(c.h(2), Err(QsimError::QubitOutOfRange { .. })));
        assert!(matches!(c.cx(1, 1), Err(QsimError::DuplicateQubits(1))));
        assert!(matches!(c.ry(0, f64::NAN), Err(QsimError::NonFiniteAngle(_))));
        assert!(Circuit::from_gates(2, vec![Gate::Zz(0, 2, 0.1)]).is_err());
        assert!(NoiseModel::depolarizing(1.5).is_err());
        assert!(NoiseModel::depolarizing(-0.1).is_err());
    }

    #[test]
    fn netlist_format_is_one_gate_per_line() {
        let mut c = Circuit::new(2).unwrap();
        c.h(0).unwrap().ry(0, 1.625).unwrap().cx(0, 1).unwrap().zz(0, 1, 0.25).unwrap();
        let text = c.to_string();
        assert_eq!(text, "H q0\nRY q0 1.625\nCX q0 q1\nZZ q0 q1 0.25\n");
    }

    #[test]
    fn sampling_point_mass_and_coin() {
        let counts = sample(&[0.0, 1.0], 1000, 7).unwrap();
        assert_eq!(counts.count(1), 1000);
        assert_eq!(counts.count(0), 0);

        let coin = sample(&[0.5, 0.5], 100_000, 42).unwrap();
        let f = coin.frequency(0);
        assert!((0.494..=0.506).contains(&f), "frequency {f} outside binomial band");
        assert_eq!(coin.count(0) + coin.count(1), 100_000);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample(&[0.3, 0.3, 0.4], 5000, 11).unwrap();
        let b = sample(&[0.3, 0.3, 0.4], 5000, 11).unwrap();
        let c = sample(&[0.3, 0.3, 0.4], 5000, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c, "different seeds should (near-certainly) differ");
    }

    #[test]
    fn sampling_rejects_bad_distributions() {
        assert!(matches!(sample(&[0.5, 0.4], 10, 0), Err(QsimError::BadDistribution(_))));
        assert!(matches!(sample(&[0.5, -0.5], 10, 0), Err(QsimError::BadDistribution(_))));
        assert!(matches!(sample(&[0.5, 0.5], 0, 0), Err(QsimError::ZeroShots)));
    }

    fn random_circuit(n: usize, len: usize, seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Circuit::new(n).unwrap();
        for _ in 0..len {
            let q = rng.random_range(0..n);
            match rng.random_range(0..6) {
                0 => c.h(q).unwrap(),
                1 => c.ry(q, rng.random_range(-PI..PI)).unwrap(),
                2 => c.rz(q, rng.random_range(-PI..PI)).unwrap(),
                3 => c.phase(q, rng.random_range(-PI..PI)).unwrap(),
                4 if n > 1 => {
                    let t = (q + 1 + rng.random_range(0..n - 1)) % n;
                    c.cx(q, t).unwrap()
                }
                _ if n > 1 => {
                    let t = (q + 1 + rng.random_range(0..n - 1)) % n;
                    c.zz(q, t, rng.random_range(-PI..PI)).unwrap()
                }
                _ => c.h(q).unwrap(),
            };
        }
        c
    }

    proptest! {
        #[test]
        fn statevector_norm_is_preserved(seed in 0u64..500, n in 1usize..5, len in 1usize..30) {
            let c = random_circuit(n, len, seed);
            let state = run_statevector(&c);
            prop_assert!((state.norm_sqr() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn noisy_evolution_is_trace_preserving_and_psd(
            seed in 0u64..100,
            n in 1usize..4,
            len in 1usize..12,
            p in 0.0f64..1.0,
        ) {
            let c = random_circuit(n, len, seed);
            let rho = run_density(&c, &NoiseModel::depolarizing(p).unwrap());
            let tr = rho.trace();
            prop_assert!((tr.re - 1.0).abs() <= 1e-12 && tr.im.abs() <= 1e-12);
            prop_assert!(rho.min_eigenvalue() >= -1e-9);
            let total: f64 = rho.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn zz_decomposition_holds_for_any_angle(phi in -6.0f64..6.0, seed in 0u64..50) {
            let prep = random_circuit(2, 6, seed);
            let mut native = prep.clone();
            native.zz(0, 1, phi).unwrap();
            let mut decomposed = prep;
            decomposed.cx(0, 1).unwrap().rz(1, -2.0 * phi).unwrap().cx(0, 1).unwrap();
            let a = run_statevector(&native);
            let b = run_statevector(&decomposed);
            let overlap: Complex64 = a
                .amplitudes()
                .iter()
                .zip(b.amplitudes())
                .map(|(x, y)| x.conj() * y)
                .sum();
            prop_assert!((overlap.norm() - 1.0).abs() <= 1e-12);
        }
    }
}
