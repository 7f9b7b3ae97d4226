//! Fidelity quantum kernels built from a ZZ feature map.
//!
//! A feature vector `x ∈ ℝⁿ` is encoded by `d` repetitions of
//!
//! ```text
//! U_Φ(x) = exp(i Σ_{j<k} φ_{jk} Z_j Z_k) · exp(i Σ_j φ_j Z_j) · H^{⊗n}
//! ```
//!
//! with first-order phases `φ_j = x_j` and pair phases
//! `φ_{jk} = (π − x_j)(π − x_k)`. The single-qubit factor `exp(iφZ)` equals
//! `RZ(−2φ)` exactly (no global-phase slack), and the pair factor is the
//! native diagonal [`Gate::Zz`]. The kernel between two vectors is the state
//! fidelity
//!
//! ```text
//! k(x, y) = |⟨0…0| U_Φ†(x) U_Φ(y) |0…0⟩|²,
//! ```
//!
//! evaluated by running `U_Φ(y)` followed by the adjoint of `U_Φ(x)` and
//! reading the probability of the all-zeros outcome — exactly for
//! [`kernel_exact`], or from a depolarized density matrix and seeded shot
//! counts for [`kernel_shots`].

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::{self, Circuit, NoiseModel, QsimError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum QkernelError {
    #[error("feature map expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature values must be finite, got {0}")]
    NonFiniteFeature(f64),
    #[error("feature map needs at least one repetition")]
    ZeroReps,
    #[error("Gram rows need one id each: {ids} ids for {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("eigenvalue diagnostic needs a square Gram, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("malformed Gram CSV: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Sim(#[from] QsimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape of the ZZ feature map: register width and repetition depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    n_qubits: usize,
    reps: usize,
}

impl FeatureMapSpec {
    pub fn new(n_qubits: usize, reps: usize) -> Result<Self, QkernelError> {
        if n_qubits == 0 || n_qubits > qsim::MAX_QUBITS {
            return Err(QsimError::BadQubitCount(n_qubits).into());
        }
        if reps == 0 {
            return Err(QkernelError::ZeroReps);
        }
        Ok(Self { n_qubits, reps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn reps(&self) -> usize {
        self.reps
    }
}

/// Build `U_Φ(x)` as a circuit: per repetition, H on every qubit, then the
/// first-order phases, then the pair phases for `j < k` in lexicographic
/// order.
pub fn feature_map_circuit(x: &[f64], spec: &FeatureMapSpec) -> Result<Circuit, QkernelError> {
    let n = spec.n_qubits;
    if x.len() != n {
        return Err(QkernelError::DimensionMismatch { expected: n, got: x.len() });
    }
    if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(QkernelError::NonFiniteFeature(bad));
    }
    let pi = std::f64::consts::PI;
    let mut circuit = Circuit::new(n)?;
    for _ in 0..spec.reps {
        for q in 0..n {
            circuit.h(q)?;
        }
        for (j, &xj) in x.iter().enumerate() {
            // exp(i·x_j·Z) == RZ(−2·x_j), exactly.
            circuit.rz(j, -2.0 * xj)?;
        }
        for j in 0..n {
            for k in (j + 1)..n {
                circuit.zz(j, k, (pi - x[j]) * (pi - x[k]))?;
            }
        }
    }
    Ok(circuit)
}

/// Fidelity overlap of two encoding circuits: run `u_y`, then the adjoint of
/// `u_x`, and return the all-zeros probability.
pub fn kernel_from_circuits(u_x: &Circuit, u_y: &Circuit) -> Result<f64, QkernelError> {
    let mut combined = u_y.clone();
    combined.extend(&u_x.inverse())?;
    let state = qsim::run_statevector(&combined);
    Ok(state.amplitudes()[0].norm_sqr())
}

/// Exact fidelity kernel `k(x, y)`.
pub fn kernel_exact(x: &[f64], y: &[f64], spec: &FeatureMapSpec) -> Result<f64, QkernelError> {
    let u_x = feature_map_circuit(x, spec)?;
    let u_y = feature_map_circuit(y, spec)?;
    kernel_from_circuits(&u_x, &u_y)
}

/// Shot-sampled kernel under per-gate depolarizing noise: evolve the density
/// matrix of `U_Φ†(x)·U_Φ(y)` with noise strength `noise_p`, sample its
/// diagonal `shots` times with the given seed, and report the observed
/// frequency of the all-zeros outcome.
pub fn kernel_shots(
    x: &[f64],
    y: &[f64],
    spec: &FeatureMapSpec,
    shots: u64,
    noise_p: f64,
    seed: u64,
) -> Result<f64, QkernelError> {
    let u_x = feature_map_circuit(x, spec)?;
    let u_y = feature_map_circuit(y, spec)?;
    let mut combined = u_y;
    combined.extend(&u_x.inverse())?;
    let noise = NoiseModel::depolarizing(noise_p)?;
    let rho = qsim::run_density(&combined, &noise);
    let counts = qsim::sample(&rho.probabilities(), shots, seed)?;
    Ok(counts.frequency(0))
}

/// A kernel matrix with row/column sample identifiers. Square (train × train)
/// and rectangular (test × train) shapes share this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, values: Vec<f64>) -> Result<Self, QkernelError> {
        if values.len() != row_ids.len() * col_ids.len() {
            return Err(QkernelError::IdCountMismatch { ids: row_ids.len(), rows: values.len() });
        }
        Ok(Self { row_ids, col_ids, values })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.col_ids.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.col_ids.len();
        &self.values[row * w..(row + 1) * w]
    }

    /// Smallest eigenvalue of a square Gram. Noisy estimation can push this
    /// slightly negative; downstream solvers consume the matrix as-is, so
    /// this is the diagnostic that quantifies how indefinite it got.
    pub fn min_eigenvalue(&self) -> Result<f64, QkernelError> {
        let n = self.n_rows();
        if n != self.n_cols() {
            return Err(QkernelError::NotSquare { rows: n, cols: self.n_cols() });
        }
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                // guard against asymmetric rounding before the symmetric solver
                m[(r, c)] = 0.5 * (self.get(r, c) + self.get(c, r));
            }
        }
        Ok(nalgebra::SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v)))
    }

    /// Write as CSV: header `id,<col ids…>`, then one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), QkernelError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.col_ids.iter().cloned());
        w.write_record(&header).map_err(io_like)?;
        for (r, id) in self.row_ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.row(r).iter().map(|v| format!("{v}")));
            w.write_record(&record).map_err(io_like)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path) -> Result<(), QkernelError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, QkernelError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| QkernelError::MalformedCsv(e.to_string()))?;
        if header.is_empty() || &header[0] != "id" {
            return Err(QkernelError::MalformedCsv("first header cell must be `id`".into()));
        }
        let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_ids = Vec::new();
        let mut values = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| QkernelError::MalformedCsv(e.to_string()))?;
            if record.len() != col_ids.len() + 1 {
                return Err(QkernelError::MalformedCsv(format!(
                    "row {} has {} cells, expected {}",
                    line + 2,
                    record.len(),
                    col_ids.len() + 1
                )));
            }
            row_ids.push(record[0].to_string());
            for cell in record.iter().skip(1) {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| QkernelError::MalformedCsv(format!("bad number `{cell}` in row {}", line + 2)))?;
                values.push(v);
            }
        }
        Self::new(row_ids, col_ids, values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, QkernelError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }
}

fn io_like(err: csv::Error) -> QkernelError {
    QkernelError::MalformedCsv(err.to_string())
}

fn check_ids(ids: &[String], rows: usize) -> Result<(), QkernelError> {
    if ids.len() != rows {
        return Err(QkernelError::IdCountMismatch { ids: ids.len(), rows });
    }
    Ok(())
}

/// Exact symmetric Gram over `rows`: the upper triangle is computed and
/// mirrored, the diagonal is pinned to 1 (what the fidelity guarantees).
pub fn gram_exact(rows: &[Vec<f64>], ids: &[String], spec: &FeatureMapSpec) -> Result<GramMatrix, QkernelError> {
    check_ids(ids, rows.len())?;
    let n = rows.len();
    let circuits: Vec<Circuit> =
        rows.iter().map(|x| feature_map_circuit(x, spec)).collect::<Result<_, _>>()?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let k = kernel_from_circuits(&circuits[i], &circuits[j])?;
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    GramMatrix::new(ids.to_vec(), ids.to_vec(), values)
}

/// Exact rectangular Gram: `k(a_i, b_j)` for every pair, rows over `a`.
pub fn gram_exact_cross(
    rows_a: &[Vec<f64>],
    ids_a: &[String],
    rows_b: &[Vec<f64>],
    ids_b: &[String],
    spec: &FeatureMapSpec,
) -> Result<GramMatrix, QkernelError> {
    check_ids(ids_a, rows_a.len())?;
    check_ids(ids_b, rows_b.len())?;
    let ca: Vec<Circuit> = rows_a.iter().map(|x| feature_map_circuit(x, spec)).collect::<Result<_, _>>()?;
    let cb: Vec<Circuit> = rows_b.iter().map(|x| feature_map_circuit(x, spec)).collect::<Result<_, _>>()?;
    let mut values = Vec::with_capacity(rows_a.len() * rows_b.len());
    for ua in &ca {
        for ub in &cb {
            values.push(kernel_from_circuits(ua, ub)?);
        }
    }
    GramMatrix::new(ids_a.to_vec(), ids_b.to_vec(), values)
}

/// Shot-sampled symmetric Gram under depolarizing noise. Each upper-triangle
/// entry (diagonal included) is estimated once with a seed derived from
/// `(master_seed, i, j)`, mirrored for symmetry, and clipped to `[0, 1]`.
/// No positive-semidefinite repair is applied — consumers see the estimates
/// as measured; [`GramMatrix::min_eigenvalue`] reports the damage.
pub fn gram_shots(
    rows: &[Vec<f64>],
    ids: &[String],
    spec: &FeatureMapSpec,
    shots: u64,
    noise_p: f64,
    master_seed: u64,
) -> Result<GramMatrix, QkernelError> {
    check_ids(ids, rows.len())?;
    let n = rows.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let seed = seeds::derive_pair(master_seed, i as u64, j as u64);
            let k = kernel_shots(&rows[i], &rows[j], spec, shots, noise_p, seed)?.clamp(0.0, 1.0);
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    GramMatrix::new(ids.to_vec(), ids.to_vec(), values)
}

/// Shot-sampled rectangular Gram (rows over `a`, columns over `b`).
pub fn gram_shots_cross(
    rows_a: &[Vec<f64>],
    ids_a: &[String],
    rows_b: &[Vec<f64>],
    ids_b: &[String],
    spec: &FeatureMapSpec,
    shots: u64,
    noise_p: f64,
    master_seed: u64,
) -> Result<GramMatrix, QkernelError> {
    check_ids(ids_a, rows_a.len())?;
    check_ids(ids_b, rows_b.len())?;
    let mut values = Vec::with_capacity(rows_a.len() * rows_b.len());
    for (i, xa) in rows_a.iter().enumerate() {
        for (j, xb) in rows_b.iter().enumerate() {
            let seed = seeds::derive_pair(master_seed, i as u64, j as u64);
            values.push(kernel_shots(xa, xb, spec, shots, noise_p, seed)?.clamp(0.0, 1.0));
        }
    }
    GramMatrix::new(ids_a.to_vec(), ids_b.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::qsim::Gate;

    const PI: f64 = std::f64::consts::PI;

    fn spec3() -> FeatureMapSpec {
        FeatureMapSpec::new(3, 1).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.5..2.5)).collect()).collect()
    }

    #[test]
    fn feature_map_structure_at_origin() {
        let c = feature_map_circuit(&[0.0, 0.0, 0.0], &spec3()).unwrap();
        let mut h = 0;
        let mut rz = 0;
        let mut zz_angles = Vec::new();
        for g in c.gates() {
            match *g {
                Gate::H(_) => h += 1,
                Gate::Rz(_, a) => {
                    rz += 1;
                    assert_eq!(a, 0.0);
                }
                Gate::Zz(_, _, a) => zz_angles.push(a),
                ref other => panic!("unexpected gate {other}"),
            }
        }
        assert_eq!((h, rz, zz_angles.len()), (3, 3, 3));
        for a in zz_angles {
            assert_relative_eq!(a, PI * PI, max_relative = 1e-15);
        }
    }

    #[test]
    fn feature_map_depth_scales_with_reps() {
        let spec = FeatureMapSpec::new(3, 2).unwrap();
        let c = feature_map_circuit(&[0.1, 0.2, 0.3], &spec).unwrap();
        assert_eq!(c.len(), 2 * (3 + 3 + 3));
    }

    #[test]
    fn feature_map_rejects_bad_inputs() {
        assert!(matches!(
            feature_map_circuit(&[0.0, 0.0], &spec3()),
            Err(QkernelError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            feature_map_circuit(&[0.0, f64::NAN, 0.0], &spec3()),
            Err(QkernelError::NonFiniteFeature(_))
        ));
        assert!(matches!(FeatureMapSpec::new(3, 0), Err(QkernelError::ZeroReps)));
        assert!(FeatureMapSpec::new(9, 1).is_err());
    }

    #[test]
    fn self_kernel_is_one() {
        for x in random_rows(20, 3, 5) {
            let k = kernel_exact(&x, &x, &spec3()).unwrap();
            assert!((k - 1.0).abs() <= 1e-12, "k(x,x) = {k}");
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let rows = random_rows(8, 3, 9);
        for pair in rows.chunks(2) {
            let kxy = kernel_exact(&pair[0], &pair[1], &spec3()).unwrap();
            let kyx = kernel_exact(&pair[1], &pair[0], &spec3()).unwrap();
            assert!((kxy - kyx).abs() <= 1e-12);
            assert!((0.0..=1.0 + 1e-12).contains(&kxy));
        }
    }

    #[test]
    fn gram_exact_is_symmetric_psd_with_unit_diagonal() {
        let rows = random_rows(50, 3, 3);
        let g = gram_exact(&rows, &ids(50), &spec3()).unwrap();
        for i in 0..50 {
            assert_eq!(g.get(i, i), 1.0);
            for j in 0..50 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let min_eig = g.min_eigenvalue().unwrap();
        assert!(min_eig >= -1e-9, "min eigenvalue {min_eig}");
    }

    #[test]
    fn appending_a_common_unitary_leaves_the_kernel_unchanged() {
        let x = [0.4, -1.2, 2.0];
        let y = [-0.3, 0.9, 1.1];
        let base = kernel_exact(&x, &y, &spec3()).unwrap();
        let mut ux = feature_map_circuit(&x, &spec3()).unwrap();
        let mut uy = feature_map_circuit(&y, &spec3()).unwrap();
        for c in [&mut ux, &mut uy] {
            c.h(1).unwrap().ry(0, 0.77).unwrap().cx(2, 0).unwrap().zz(1, 2, -0.4).unwrap();
        }
        let appended = kernel_from_circuits(&ux, &uy).unwrap();
        assert_relative_eq!(base, appended, epsilon = 1e-12);
    }

    #[test]
    fn shots_with_zero_noise_track_the_exact_kernel() {
        let rows = random_rows(6, 3, 21);
        for pair in rows.chunks(2) {
            let exact = kernel_exact(&pair[0], &pair[1], &spec3()).unwrap();
            let sampled = kernel_shots(&pair[0], &pair[1], &spec3(), 100_000, 0.0, 99).unwrap();
            assert!(
                (sampled - exact).abs() <= 0.01,
                "sampled {sampled} vs exact {exact}"
            );
        }
    }

    #[test]
    fn full_noise_flattens_the_kernel_to_uniform() {
        let x = [0.2, 0.4, 0.6];
        let y = [1.0, -0.5, 0.3];
        let k = kernel_shots(&x, &y, &spec3(), 100_000, 1.0, 4).unwrap();
        assert!((k - 0.125).abs() <= 0.01, "k = {k}, expected ~1/8");
    }

    #[test]
    fn noise_contracts_the_self_kernel() {
        let x = [0.5, -0.8, 1.7];
        let k = kernel_shots(&x, &x, &spec3(), 100_000, 0.05, 17).unwrap();
        assert!(k < 0.9, "self kernel under noise should contract, got {k}");
        let exact_self = kernel_shots(&x, &x, &spec3(), 100_000, 0.0, 17).unwrap();
        assert!(exact_self > 0.999);
    }

    #[test]
    fn shot_kernels_are_seed_deterministic() {
        let x = [0.1, 0.2, 0.3];
        let y = [0.4, 0.5, 0.6];
        let a = kernel_shots(&x, &y, &spec3(), 1024, 0.05, 31).unwrap();
        let b = kernel_shots(&x, &y, &spec3(), 1024, 0.05, 31).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gram_shots_mirrors_and_clips() {
        let rows = random_rows(8, 3, 13);
        let g = gram_shots(&rows, &ids(8), &spec3(), 256, 0.05, 77).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let v = g.get(i, j);
                assert_eq!(v, g.get(j, i));
                assert!((0.0..=1.0).contains(&v));
            }
        }
        // sampled diagonal under noise is genuinely below 1
        assert!((0..8).any(|i| g.get(i, i) < 1.0));
        // reruns with the same master seed reproduce the matrix exactly
        let g2 = gram_shots(&rows, &ids(8), &spec3(), 256, 0.05, 77).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn gram_csv_round_trip() {
        let rows = random_rows(4, 3, 1);
        let g = gram_exact_cross(&rows[..2], &ids(2), &rows, &ids(4), &spec3()).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GramMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn gram_csv_rejects_malformed_input() {
        let bad_header = "sample,a,b\nx,1,2\n";
        assert!(GramMatrix::read_csv(bad_header.as_bytes()).is_err());
        let ragged = "id,a,b\nx,1\n";
        assert!(GramMatrix::read_csv(ragged.as_bytes()).is_err());
        let not_a_number = "id,a\nx,oops\n";
        assert!(GramMatrix::read_csv(not_a_number.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernel_stays_in_unit_interval_and_symmetric(
            xs in proptest::collection::vec(-3.0f64..3.0, 3),
            ys in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let k = kernel_exact(&xs, &ys, &spec3()).unwrap();
            let kt = kernel_exact(&ys, &xs, &spec3()).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&k));
            prop_assert!((k - kt).abs() <= 1e-12);
        }
    }
}
