//! Reference implementations the integration tests check the library
//! against. Each oracle reaches the same quantity along a different
//! algorithmic route — dense matrix products instead of in-place amplitude
//! updates, projected-gradient descent instead of pairwise SMO updates, an
//! exhaustive grid scan instead of golden-section search, central finite
//! differences instead of the parameter-shift rule — so shared bugs between
//! implementation and test are unlikely.

// each test target compiles this module separately and uses its own subset
#![allow(dead_code)]

use num_complex::Complex64;
use qspectra::qsim::{Circuit, Gate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// dense-unitary oracle
//
// Basis convention: amplitude index i encodes qubit q at bit (1 << q). A
// gate's full matrix is assembled as an explicit Kronecker product (qubit
// n−1 leftmost), and a circuit's unitary as the ordered product of its gate
// matrices. O(8³) per gate at three qubits — slow and obviously correct.

pub type CMat = Vec<Vec<Complex64>>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn identity(dim: usize) -> CMat {
    let mut m = vec![vec![ZERO; dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = (a.len(), a[0].len());
    let (rb, cb) = (b.len(), b[0].len());
    let mut m = vec![vec![ZERO; ca * cb]; ra * rb];
    for ia in 0..ra {
        for ja in 0..ca {
            for ib in 0..rb {
                for jb in 0..cb {
                    m[ia * rb + ib][ja * cb + jb] = a[ia][ja] * b[ib][jb];
                }
            }
        }
    }
    m
}

pub fn mat_mul(a: &CMat, b: &CMat) -> CMat {
    let (ra, inner, cb) = (a.len(), b.len(), b[0].len());
    let mut m = vec![vec![ZERO; cb]; ra];
    for i in 0..ra {
        for k in 0..inner {
            let aik = a[i][k];
            for j in 0..cb {
                m[i][j] += aik * b[k][j];
            }
        }
    }
    m
}

fn mat2(entries: [[Complex64; 2]; 2]) -> CMat {
    entries.iter().map(|r| r.to_vec()).collect()
}

/// `⊗_{q = n−1 … 0} factor(q)`, identity on qubits without a factor.
fn embed(n_qubits: usize, factors: &[(usize, CMat)]) -> CMat {
    let mut m = vec![vec![ONE]];
    for q in (0..n_qubits).rev() {
        let f = factors.iter().find(|(i, _)| *i == q);
        match f {
            Some((_, u)) => m = kron(&m, u),
            None => m = kron(&m, &identity(2)),
        }
    }
    m
}

fn mat_add(a: &CMat, b: &CMat) -> CMat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn gate_matrix(n_qubits: usize, gate: &Gate) -> CMat {
    let re = |x: f64| Complex64::new(x, 0.0);
    let p0 = mat2([[ONE, ZERO], [ZERO, ZERO]]);
    let p1 = mat2([[ZERO, ZERO], [ZERO, ONE]]);
    match *gate {
        Gate::H(q) => {
            let s = re(std::f64::consts::FRAC_1_SQRT_2);
            embed(n_qubits, &[(q, mat2([[s, s], [s, -s]]))])
        }
        Gate::Ry(q, theta) => {
            let (sin, cos) = (theta / 2.0).sin_cos();
            embed(n_qubits, &[(q, mat2([[re(cos), re(-sin)], [re(sin), re(cos)]]))])
        }
        Gate::Rz(q, theta) => {
            let ph = Complex64::from_polar(1.0, theta / 2.0);
            embed(n_qubits, &[(q, mat2([[ph.conj(), ZERO], [ZERO, ph]]))])
        }
        Gate::Phase(q, phi) => {
            let ph = Complex64::from_polar(1.0, phi);
            embed(n_qubits, &[(q, mat2([[ONE, ZERO], [ZERO, ph]]))])
        }
        Gate::Cx(c, t) => {
            let x = mat2([[ZERO, ONE], [ONE, ZERO]]);
            let keep = embed(n_qubits, &[(c, p0)]);
            let flip = embed(n_qubits, &[(c, p1), (t, x)]);
            mat_add(&keep, &flip)
        }
        Gate::Zz(a, b, phi) => {
            // exp(iφ·Z⊗Z): +φ phase on equal bits, −φ on unequal
            let same = Complex64::from_polar(1.0, phi);
            let diff = same.conj();
            let scale = |m: &CMat, s: Complex64| -> CMat {
                m.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
            };
            let eq = mat_add(
                &embed(n_qubits, &[(a, p0.clone()), (b, p0.clone())]),
                &embed(n_qubits, &[(a, p1.clone()), (b, p1.clone())]),
            );
            let ne = mat_add(
                &embed(n_qubits, &[(a, p0.clone()), (b, p1.clone())]),
                &embed(n_qubits, &[(a, p1), (b, p0)]),
            );
            mat_add(&scale(&eq, same), &scale(&ne, diff))
        }
    }
}

/// Full circuit unitary: later gates multiply from the left.
pub fn circuit_unitary(circuit: &Circuit) -> CMat {
    let mut u = identity(1 << circuit.n_qubits());
    for gate in circuit.gates() {
        u = mat_mul(&gate_matrix(circuit.n_qubits(), gate), &u);
    }
    u
}

/// `U|0…0⟩` — the first column of the dense unitary.
pub fn unitary_on_zero(circuit: &Circuit) -> Vec<Complex64> {
    circuit_unitary(circuit).iter().map(|row| row[0]).collect()
}

// ---------------------------------------------------------------------------
// quadratic-program oracle for the soft-margin SVM dual
//
// minimize f(α) = ½ αᵀQα − 1ᵀα,  Q_ij = y_i y_j K_ij,
// subject to 0 ≤ α ≤ C and yᵀα = 0,
//
// by accelerated projected-gradient descent followed by an exact
// equality-constrained solve on the identified active set. The projection
// onto the box ∩ hyperplane bisects the hyperplane multiplier ν in
// g(ν) = Σ y_i · clip(v_i − ν·y_i, 0, C), which is monotone in ν.

fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let clipped = |nu: f64| -> Vec<f64> {
        v.iter().zip(y).map(|(&vi, &yi)| (vi - nu * yi).clamp(0.0, c)).collect()
    };
    let g = |nu: f64| -> f64 {
        clipped(nu).iter().zip(y).map(|(&a, &yi)| a * yi).sum()
    };
    let bound = v.iter().fold(0.0f64, |m, &x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    debug_assert!(g(lo) >= 0.0 && g(hi) <= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clipped(0.5 * (lo + hi))
}

fn qp_objective(alpha: &[f64], q: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * q[i][j] * alpha[j];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Exact solve of the dual restricted to the free set, bound variables held
/// fixed. Returns `None` when the KKT system is singular or the solution
/// leaves the box.
fn active_set_polish(alpha: &[f64], q: &[Vec<f64>], y: &[f64], c: f64) -> Option<Vec<f64>> {
    let n = alpha.len();
    let edge = 1e-7 * c;
    let free: Vec<usize> =
        (0..n).filter(|&i| alpha[i] > edge && alpha[i] < c - edge).collect();
    if free.is_empty() {
        return None;
    }
    let m = free.len();
    let mut kkt = nalgebra::DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            kkt[(r, s)] = q[i][j];
        }
        kkt[(r, m)] = y[i];
        kkt[(m, r)] = y[i];
        let bound_term: f64 = (0..n)
            .filter(|j| !free.contains(j))
            .map(|j| q[i][j] * alpha[j])
            .sum();
        rhs[r] = 1.0 - bound_term;
    }
    rhs[m] = -(0..n).filter(|j| !free.contains(j)).map(|j| y[j] * alpha[j]).sum::<f64>();
    let sol = kkt.lu().solve(&rhs)?;
    let mut polished = alpha.to_vec();
    for (r, &i) in free.iter().enumerate() {
        if !(0.0..=c).contains(&sol[r]) || !sol[r].is_finite() {
            return None;
        }
        polished[i] = sol[r];
    }
    Some(polished)
}

/// Reference dual solution: `(alpha, objective)` with the objective in the
/// same minimization convention as [`qspectra::svm::SvmModel::dual_objective`].
pub fn qp_reference(kernel: &[Vec<f64>], labels: &[i8], c: f64) -> (Vec<f64>, f64) {
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * kernel[i][j]).collect())
        .collect();
    // Gershgorin bound on the largest eigenvalue fixes the step size
    let lipschitz = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(1e-12, f64::max);
    let step = 1.0 / lipschitz;

    let mut alpha = vec![0.0; n];
    let mut momentum = alpha.clone();
    let mut t_prev = 1.0f64;
    for _ in 0..60_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * momentum[j]).sum::<f64>() - 1.0)
            .collect();
        let stepped: Vec<f64> =
            momentum.iter().zip(&grad).map(|(&a, &g)| a - step * g).collect();
        let next = project(&stepped, &y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
        momentum = next
            .iter()
            .zip(&alpha)
            .map(|(&xn, &xo)| xn + ((t_prev - 1.0) / t_next) * (xn - xo))
            .collect();
        alpha = next;
        t_prev = t_next;
    }
    if let Some(polished) = active_set_polish(&alpha, &q, &y, c) {
        if qp_objective(&polished, &q) <= qp_objective(&alpha, &q) {
            alpha = polished;
        }
    }
    let obj = qp_objective(&alpha, &q);
    (alpha, obj)
}

pub fn rbf_kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d2: f64 =
                        x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Box-Cox grid-scan oracle
//
// Same positivity shift and profile log-likelihood as the library's fit,
// maximized by brute force: a coarse pass over λ ∈ [−5, 5] at step 0.01 and
// a fine pass at step 1e-4 around the coarse argmax.

/// Profile log-likelihood at one exponent, with the library's shift rule.
pub fn boxcox_profile_ll(column: &[f64], lambda: f64) -> f64 {
    let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = (1e-12 - min).max(0.0);
    let shifted: Vec<f64> = column.iter().map(|v| v + shift).collect();
    let log_sum: f64 = shifted.iter().map(|z| z.ln()).sum();
    let n = shifted.len() as f64;
    let transformed: Vec<f64> = shifted
        .iter()
        .map(|&z| {
            if lambda.abs() < 1e-10 {
                z.ln()
            } else {
                (lambda * z.ln()).exp_m1() / lambda
            }
        })
        .collect();
    let mean = transformed.iter().sum::<f64>() / n;
    let var = transformed.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * log_sum
}

pub fn boxcox_lambda_grid(column: &[f64]) -> f64 {
    let scan = |lo: f64, hi: f64, step: f64| -> f64 {
        let mut best = (f64::NEG_INFINITY, lo);
        let mut lambda = lo;
        while lambda <= hi + step / 2.0 {
            let v = boxcox_profile_ll(column, lambda);
            if v > best.0 {
                best = (v, lambda);
            }
            lambda += step;
        }
        best.1
    };
    let coarse = scan(-5.0, 5.0, 0.01);
    scan((coarse - 0.02).max(-5.0), (coarse + 0.02).min(5.0), 1e-4)
}

// ---------------------------------------------------------------------------
// finite differences

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}
